#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "compnet/bench.hpp"
#include "compnet/errors.hpp"

namespace compnet::bench {

namespace {

constexpr double kPi = std::numbers::pi;

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a combined word
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

enum class PrimitiveKind { Bar, Disk, Ring };

// Primitive in template coordinates (32x32 frame, origin at the center).
struct Primitive {
  PrimitiveKind kind = PrimitiveKind::Bar;
  double cx = 0.0, cy = 0.0;
  double half_length = 0.0, half_thickness = 0.0, angle = 0.0;  // bars
  double r_outer = 0.0, r_inner = 0.0;                          // disks, rings
};

Primitive bar(double cx, double cy, double hl, double ht, double angle_deg) {
  Primitive p;
  p.cx = cx;
  p.cy = cy;
  p.half_length = hl;
  p.half_thickness = ht;
  p.angle = angle_deg * kPi / 180.0;
  return p;
}

Primitive disk(double cx, double cy, double r) {
  Primitive p;
  p.kind = PrimitiveKind::Disk;
  p.cx = cx;
  p.cy = cy;
  p.r_outer = r;
  return p;
}

Primitive ring(double cx, double cy, double ro, double ri) {
  Primitive p = disk(cx, cy, ro);
  p.kind = PrimitiveKind::Ring;
  p.r_inner = ri;
  return p;
}

std::vector<Primitive> class_template(int label) {
  switch (label) {
    case 0: return {bar(0, -6.5, 11, 4, 0), bar(0, 6.5, 11, 4, 0)};
    case 1: return {bar(-6.5, 0, 11, 4, 90), bar(6.5, 0, 11, 4, 90)};
    case 2: return {disk(0, 0, 10)};
    case 3: return {bar(0, 0, 12, 4, 0), bar(0, 0, 12, 4, 90)};
    case 4: return {ring(0, 0, 12, 5)};
    case 5: return {bar(-5, -5, 11, 3.5, 45), bar(5, 5, 11, 3.5, 45)};
    default: {
      std::mt19937_64 rng(mix_seed(0xC1A55ULL, static_cast<std::uint64_t>(label)));
      std::vector<Primitive> out;
      const int count = 2 + static_cast<int>(rng() % 2);
      for (int i = 0; i < count; ++i)
        out.push_back(bar(uniform(rng, -6, 6), uniform(rng, -6, 6), uniform(rng, 7, 11), uniform(rng, 3, 4),
                          uniform(rng, 0, 180)));
      return out;
    }
  }
}

bool inside(const Primitive& p, double x, double y) {
  const double dx = x - p.cx;
  const double dy = y - p.cy;
  switch (p.kind) {
    case PrimitiveKind::Bar: {
      const double c = std::cos(p.angle), s = std::sin(p.angle);
      return std::abs(dx * c + dy * s) <= p.half_length && std::abs(-dx * s + dy * c) <= p.half_thickness;
    }
    case PrimitiveKind::Disk: return dx * dx + dy * dy <= p.r_outer * p.r_outer;
    case PrimitiveKind::Ring: {
      const double r2 = dx * dx + dy * dy;
      return r2 <= p.r_outer * p.r_outer && r2 >= p.r_inner * p.r_inner;
    }
  }
  return false;
}

SyntheticSample render_object(int label, int index, int size, std::mt19937_64& rng) {
  const auto prims = class_template(label);
  const double frame = size / 32.0;
  const double dx = uniform(rng, -2.0, 2.0) * frame;
  const double dy = uniform(rng, -2.0, 2.0) * frame;
  const double scale = uniform(rng, 0.9, 1.1) * frame;
  const double rot = uniform(rng, -6.0, 6.0) * kPi / 180.0;
  const double cr = std::cos(rot), sr = std::sin(rot);
  const double center = size / 2.0;

  SyntheticSample s;
  s.id = "c" + std::to_string(label) + "_" + std::to_string(index);
  s.label = label;
  s.image = Image(size, size, 1, 0.0f);
  s.object_mask = Mask(size, size);
  s.occluder_mask = Mask(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      // pixel center back into the template frame
      const double px = x + 0.5 - center - dx;
      const double py = y + 0.5 - center - dy;
      const double tx = (cr * px + sr * py) / scale;
      const double ty = (-sr * px + cr * py) / scale;
      bool hit = false;
      for (const auto& p : prims) hit = hit || inside(p, tx, ty);
      if (!hit) continue;
      s.object_mask.at(y, x) = 1;
      // class-independent fill: horizontal stripes in image coordinates
      s.image.at(y, x) = static_cast<float>(0.55 + 0.35 * std::sin(2.0 * kPi * y / 4.0));
    }
  }
  quantize_8bit(s.image);
  return s;
}

// Occluder support as a function of one growth parameter t; supports are
// nested (monotone in t) so the covered fraction is non-decreasing.
struct OccluderShape {
  bool blob = false;
  double cx = 0.0, cy = 0.0;
  double aspect = 1.0;
  std::vector<double> radius;  // blob radius factors over angle

  bool covers(double x, double y, double t) const {
    const double dx = x - cx, dy = y - cy;
    if (!blob) {
      const double a = std::sqrt(aspect);
      return std::abs(dx) <= t * a && std::abs(dy) <= t / a;
    }
    const double r = std::sqrt(dx * dx + dy * dy);
    double theta = std::atan2(dy, dx);
    if (theta < 0) theta += 2.0 * kPi;
    const double pos = theta / (2.0 * kPi) * radius.size();
    const std::size_t i0 = static_cast<std::size_t>(pos) % radius.size();
    const std::size_t i1 = (i0 + 1) % radius.size();
    const double w = pos - std::floor(pos);
    return r <= t * ((1.0 - w) * radius[i0] + w * radius[i1]);
  }
};

OccluderShape random_shape(bool blob, const Mask& object, std::mt19937_64& rng) {
  OccluderShape shape;
  shape.blob = blob;
  std::vector<std::pair<int, int>> pixels;
  for (int y = 0; y < object.height; ++y)
    for (int x = 0; x < object.width; ++x)
      if (object.at(y, x)) pixels.emplace_back(x, y);
  const auto [px, py] = pixels[std::uniform_int_distribution<std::size_t>(0, pixels.size() - 1)(rng)];
  shape.cx = px + 0.5;
  shape.cy = py + 0.5;
  shape.aspect = std::exp(uniform(rng, std::log(0.6), std::log(1.6)));
  if (blob) {
    // closed random walk of the log-radius
    constexpr int kSteps = 48;
    std::normal_distribution<double> step(0.0, 0.18);
    std::vector<double> walk(kSteps + 1, 0.0);
    for (int i = 1; i <= kSteps; ++i) walk[i] = walk[i - 1] + step(rng);
    shape.radius.resize(kSteps);
    for (int i = 0; i < kSteps; ++i) {
      const double closed = walk[i] - walk[kSteps] * i / kSteps;
      shape.radius[i] = std::clamp(std::exp(closed), 0.35, 2.5);
    }
  }
  return shape;
}

Mask rasterize(const OccluderShape& shape, int h, int w, double t) {
  Mask m(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.at(y, x) = shape.covers(x + 0.5, y + 0.5, t) ? 1 : 0;
  return m;
}

double covered_fraction(const Mask& object, const Mask& occ) {
  std::size_t both = 0, obj = 0;
  for (std::size_t i = 0; i < object.bits.size(); ++i) {
    obj += object.bits[i];
    both += object.bits[i] & occ.bits[i];
  }
  return obj ? static_cast<double>(both) / static_cast<double>(obj) : 0.0;
}

// Background images use every generic family; matched texture occluders
// reuse only the structured ones, unmatched occluders use held-out families.
constexpr TextureFamily kBackgroundFamilies[] = {TextureFamily::Checker, TextureFamily::Grating, TextureFamily::Blobs,
                                                 TextureFamily::Dots, TextureFamily::Speckle};
constexpr TextureFamily kMatchedFamilies[] = {TextureFamily::Checker, TextureFamily::Grating, TextureFamily::Dots};
constexpr TextureFamily kUnmatchedFamilies[] = {TextureFamily::Rings, TextureFamily::Crosshatch,
                                                TextureFamily::Bricks};

}  // namespace

std::size_t Mask::count() const {
  std::size_t n = 0;
  for (auto b : bits) n += b;
  return n;
}

std::string to_string(OcclusionLevel level) {
  switch (level) {
    case OcclusionLevel::L0: return "L0";
    case OcclusionLevel::L1: return "L1";
    case OcclusionLevel::L2: return "L2";
    case OcclusionLevel::L3: return "L3";
  }
  return "?";
}

std::string to_string(OccluderType type) {
  switch (type) {
    case OccluderType::None: return "none";
    case OccluderType::White: return "white";
    case OccluderType::Noise: return "noise";
    case OccluderType::Texture: return "texture";
    case OccluderType::Object: return "object";
  }
  return "?";
}

std::string short_code(OccluderType type) {
  switch (type) {
    case OccluderType::None: return "-";
    case OccluderType::White: return "w";
    case OccluderType::Noise: return "n";
    case OccluderType::Texture: return "t";
    case OccluderType::Object: return "o";
  }
  return "?";
}

OcclusionLevel parse_level(const std::string& s) {
  if (s == "L0") return OcclusionLevel::L0;
  if (s == "L1") return OcclusionLevel::L1;
  if (s == "L2") return OcclusionLevel::L2;
  if (s == "L3") return OcclusionLevel::L3;
  throw FormatError("unknown occlusion level '" + s + "'");
}

OccluderType parse_type(const std::string& s) {
  if (s == "none") return OccluderType::None;
  if (s == "white" || s == "w") return OccluderType::White;
  if (s == "noise" || s == "n") return OccluderType::Noise;
  if (s == "texture" || s == "t") return OccluderType::Texture;
  if (s == "object" || s == "o") return OccluderType::Object;
  throw FormatError("unknown occluder type '" + s + "'");
}

Band level_band(OcclusionLevel level) {
  switch (level) {
    case OcclusionLevel::L0: return {0.0, 0.0};
    case OcclusionLevel::L1: return {0.2, 0.4};
    case OcclusionLevel::L2: return {0.4, 0.6};
    case OcclusionLevel::L3: return {0.6, 0.8};
  }
  return {};
}

bool in_band(OcclusionLevel level, double fraction) {
  if (level == OcclusionLevel::L0) return fraction == 0.0;
  const Band b = level_band(level);
  return fraction > b.lo && fraction <= b.hi;
}

double occluded_fraction(const SyntheticSample& s) { return covered_fraction(s.object_mask, s.occluder_mask); }

std::vector<SyntheticSample> generate_dataset(const DatasetSpec& spec) {
  if (spec.image_size < 24) throw GenerationError("image_size must be at least 24");
  if (spec.num_classes <= 0 || spec.images_per_class < 0) throw GenerationError("invalid dataset counts");
  std::vector<SyntheticSample> out;
  out.reserve(static_cast<std::size_t>(spec.num_classes) * spec.images_per_class);
  for (int c = 0; c < spec.num_classes; ++c) {
    for (int i = 0; i < spec.images_per_class; ++i) {
      std::mt19937_64 rng(mix_seed(spec.seed, static_cast<std::uint64_t>(c) * 100003ULL + i));
      out.push_back(render_object(c, i, spec.image_size, rng));
    }
  }
  return out;
}

Image render_texture(TextureFamily family, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Image img(size, size, 1, 0.0f);
  auto set = [&](int y, int x, double v) { img.at(y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0)); };
  switch (family) {
    case TextureFamily::Checker: {
      const int cell = 3 + static_cast<int>(rng() % 4);
      const double a = uniform(rng, 0.1, 0.4), b = uniform(rng, 0.6, 0.9);
      const int ox = static_cast<int>(rng() % cell), oy = static_cast<int>(rng() % cell);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) set(y, x, (((x + ox) / cell + (y + oy) / cell) % 2) ? a : b);
      break;
    }
    case TextureFamily::Grating: {
      const double theta = uniform(rng, 0.0, kPi), period = uniform(rng, 5.0, 9.0), phase = uniform(rng, 0, 2 * kPi);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
          set(y, x, 0.5 + 0.4 * std::sin(2 * kPi * (x * std::cos(theta) + y * std::sin(theta)) / period + phase));
      break;
    }
    case TextureFamily::Blobs: {
      const double base = uniform(rng, 0.3, 0.7);
      struct Bump {
        double x, y, s, a;
      };
      std::vector<Bump> bumps(6);
      for (auto& b : bumps) b = {uniform(rng, 0, size), uniform(rng, 0, size), uniform(rng, 3, 8), uniform(rng, -0.4, 0.4)};
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          double v = base;
          for (const auto& b : bumps)
            v += b.a * std::exp(-((x - b.x) * (x - b.x) + (y - b.y) * (y - b.y)) / (2 * b.s * b.s));
          set(y, x, v);
        }
      break;
    }
    case TextureFamily::Dots: {
      const double base = uniform(rng, 0.15, 0.4);
      for (auto& p : img.pixels) p = static_cast<float>(base);
      const int dots = size * size / 40;
      for (int i = 0; i < dots; ++i) {
        const double cx = uniform(rng, 0, size), cy = uniform(rng, 0, size), r = uniform(rng, 1.0, 2.2);
        const double v = uniform(rng, 0.7, 1.0);
        for (int y = 0; y < size; ++y)
          for (int x = 0; x < size; ++x)
            if ((x + 0.5 - cx) * (x + 0.5 - cx) + (y + 0.5 - cy) * (y + 0.5 - cy) <= r * r) set(y, x, v);
      }
      break;
    }
    case TextureFamily::Speckle: {
      const double lo = uniform(rng, 0.0, 0.3), hi = uniform(rng, 0.7, 1.0);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) set(y, x, uniform(rng, lo, hi));
      break;
    }
    case TextureFamily::Rings: {
      const double cx = uniform(rng, 0, size), cy = uniform(rng, 0, size), period = uniform(rng, 5.0, 8.0);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
          set(y, x, 0.5 + 0.4 * std::cos(2 * kPi * std::hypot(x - cx, y - cy) / period));
      break;
    }
    case TextureFamily::Crosshatch: {
      const int spacing = 4 + static_cast<int>(rng() % 3);
      const double ink = uniform(rng, 0.0, 0.25), paper = uniform(rng, 0.65, 0.95);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) set(y, x, ((x + y) % spacing == 0 || (x - y + 64 * spacing) % spacing == 0) ? ink : paper);
      break;
    }
    case TextureFamily::Bricks: {
      const int bh = 4 + static_cast<int>(rng() % 3), bw = 2 * bh;
      const double brick = uniform(rng, 0.45, 0.75), mortar = uniform(rng, 0.9, 1.0);
      for (int y = 0; y < size; ++y) {
        const int row = y / bh;
        const int shift = (row % 2) ? bw / 2 : 0;
        for (int x = 0; x < size; ++x) set(y, x, (y % bh == 0 || (x + shift) % bw == 0) ? mortar : brick);
      }
      break;
    }
  }
  quantize_8bit(img);
  return img;
}

std::vector<Image> generate_backgrounds(int count, int image_size, std::uint64_t seed) {
  std::vector<Image> out;
  out.reserve(std::max(count, 0));
  constexpr std::size_t families = std::size(kBackgroundFamilies);
  for (int i = 0; i < count; ++i) {
    // cycle through families so every family is represented
    const auto fam = kBackgroundFamilies[static_cast<std::size_t>(i) % families];
    out.push_back(render_texture(fam, image_size, mix_seed(seed, 0xB6ULL + static_cast<std::uint64_t>(i))));
  }
  return out;
}

SyntheticSample apply_occluder(const SyntheticSample& sample, OccluderType type, OcclusionLevel level,
                               std::uint64_t geometry_seed, std::uint64_t texture_seed, TextureMatch textures) {
  if (sample.level != OcclusionLevel::L0 || sample.occluder_mask.count() != 0)
    throw GenerationError(sample.id + ": occluders can only be applied to unoccluded samples");
  if (level == OcclusionLevel::L0 || type == OccluderType::None)
    throw GenerationError(sample.id + ": target level and type must describe an occlusion");
  if (sample.object_mask.count() == 0) throw GenerationError(sample.id + ": sample has no object pixels");

  const int h = sample.image.height, w = sample.image.width;
  const Band band = level_band(level);
  std::mt19937_64 geo(geometry_seed);
  const bool blob = type == OccluderType::Object;

  Mask occ;
  bool found = false;
  constexpr int kPlacements = 8;
  constexpr int kBisectionSteps = 50;
  for (int attempt = 0; attempt < kPlacements && !found; ++attempt) {
    const OccluderShape shape = random_shape(blob, sample.object_mask, geo);
    double lo = 0.0, hi = blob ? 6.0 * std::max(h, w) : 1.5 * std::max(h, w);
    for (int step = 0; step < kBisectionSteps; ++step) {
      const double mid = 0.5 * (lo + hi);
      Mask m = rasterize(shape, h, w, mid);
      const double f = covered_fraction(sample.object_mask, m);
      if (f <= band.lo)
        lo = mid;
      else if (f > band.hi)
        hi = mid;
      else {
        occ = std::move(m);
        found = true;
        break;
      }
    }
  }
  if (!found)
    throw GenerationError(sample.id + ": could not reach the " + to_string(level) + " band with a " + to_string(type) +
                          " occluder");

  SyntheticSample out = sample;
  out.id = sample.id + "_" + to_string(type) + "_" + to_string(level);
  out.level = level;
  out.type = type;
  out.occluder_mask = occ;

  std::mt19937_64 tex(texture_seed);
  Image fill;
  switch (type) {
    case OccluderType::White: fill = Image(h, w, sample.image.channels, 1.0f); break;
    case OccluderType::Noise: {
      fill = Image(h, w, sample.image.channels);
      for (auto& p : fill.pixels) p = static_cast<float>(uniform(tex, 0.0, 1.0));
      break;
    }
    case OccluderType::Texture: {
      const auto& fams = textures == TextureMatch::Matched ? std::span<const TextureFamily>(kMatchedFamilies)
                                                           : std::span<const TextureFamily>(kUnmatchedFamilies);
      const auto fam = fams[tex() % fams.size()];
      fill = render_texture(fam, std::max(h, w), tex());
      break;
    }
    case OccluderType::Object: {
      // textured body with a smooth shading ramp
      const auto fam = kBackgroundFamilies[tex() % std::size(kBackgroundFamilies)];
      fill = render_texture(fam, std::max(h, w), tex());
      const double theta = uniform(tex, 0.0, 2 * kPi);
      for (int y = 0; y < fill.height; ++y)
        for (int x = 0; x < fill.width; ++x) {
          const double ramp = 0.5 + 0.5 * ((x * std::cos(theta) + y * std::sin(theta)) / std::max(h, w));
          fill.at(y, x) = static_cast<float>(std::clamp(0.5 * fill.at(y, x) + 0.5 * ramp, 0.0, 1.0));
        }
      break;
    }
    case OccluderType::None: break;
  }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!occ.at(y, x)) continue;
      for (int c = 0; c < out.image.channels; ++c)
        out.image.at(y, x, c) = fill.channels == 1 ? fill.at(y, x) : fill.at(y, x, c);
    }
  quantize_8bit(out.image);

  if (!in_band(level, occluded_fraction(out)))
    throw GenerationError(out.id + ": coverage band invariant violated");
  return out;
}

SyntheticSample apply_occluder(const SyntheticSample& sample, OccluderType type, OcclusionLevel level,
                               std::uint64_t seed, TextureMatch textures) {
  return apply_occluder(sample, type, level, mix_seed(seed, 1), mix_seed(seed, 2), textures);
}

std::vector<SyntheticSample> occlude_all(std::span<const SyntheticSample> clean, std::span<const OccluderType> types,
                                         std::span<const OcclusionLevel> levels, std::uint64_t seed,
                                         TextureMatch textures) {
  std::vector<SyntheticSample> out;
  out.reserve(clean.size() * types.size() * levels.size());
  for (const auto type : types)
    for (const auto level : levels)
      for (std::size_t i = 0; i < clean.size(); ++i) {
        const std::uint64_t s = mix_seed(mix_seed(mix_seed(seed, i), static_cast<std::uint64_t>(type)),
                                         static_cast<std::uint64_t>(level));
        out.push_back(apply_occluder(clean[i], type, level, s, textures));
      }
  return out;
}

}  // namespace compnet::bench
