#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "compnet/bench.hpp"
#include "compnet/errors.hpp"
#include "compnet/tensor.hpp"

namespace compnet::bench {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

void write_mask(const Mask& m, const fs::path& path) {
  std::vector<float> data(m.bits.begin(), m.bits.end());
  write_tensor(Tensor({static_cast<std::uint32_t>(m.height), static_cast<std::uint32_t>(m.width)}, std::move(data)),
               path);
}

Mask read_mask(const fs::path& path) {
  const Tensor t = read_tensor(path);
  if (t.rank() != 2) throw FormatError(path.string() + ": mask must be rank 2");
  Mask m(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]));
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    if (t.data[i] != 0.0f && t.data[i] != 1.0f) throw FormatError(path.string() + ": mask values must be 0 or 1");
    m.bits[i] = t.data[i] == 1.0f ? 1 : 0;
  }
  return m;
}

std::string image_extension(const Image& img) { return img.channels == 1 ? ".pgm" : ".ppm"; }

}  // namespace

void save_dataset(std::span<const SyntheticSample> samples, const fs::path& dir) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  std::ofstream index(dir / "samples.jsonl", std::ios::trunc);
  if (!index) throw IoError("cannot write " + (dir / "samples.jsonl").string());
  for (const auto& s : samples) {
    const std::string image = "images/" + s.id + image_extension(s.image);
    const std::string obj = "masks/" + s.id + "_object.ctns";
    const std::string occ = "masks/" + s.id + "_occluder.ctns";
    write_pnm(s.image, dir / image);
    write_mask(s.object_mask, dir / obj);
    write_mask(s.occluder_mask, dir / occ);
    json line;
    line["id"] = s.id;
    line["label"] = s.label;
    line["level"] = to_string(s.level);
    line["type"] = to_string(s.type);
    line["image"] = image;
    line["object_mask"] = obj;
    line["occluder_mask"] = occ;
    index << line.dump() << "\n";
  }
  if (!index) throw IoError("write failed: " + (dir / "samples.jsonl").string());
}

std::vector<SyntheticSample> load_dataset(const fs::path& dir) {
  std::ifstream index(dir / "samples.jsonl");
  if (!index) throw IoError("cannot read " + (dir / "samples.jsonl").string());
  std::vector<SyntheticSample> out;
  std::string text;
  int line_no = 0;
  while (std::getline(index, text)) {
    ++line_no;
    if (text.empty()) continue;
    const std::string where = "samples.jsonl:" + std::to_string(line_no);
    SyntheticSample s;
    try {
      const json line = json::parse(text);
      s.id = line.at("id").get<std::string>();
      s.label = line.at("label").get<int>();
      s.level = parse_level(line.at("level").get<std::string>());
      s.type = parse_type(line.at("type").get<std::string>());
      s.image = read_pnm(dir / line.at("image").get<std::string>());
      s.object_mask = read_mask(dir / line.at("object_mask").get<std::string>());
      s.occluder_mask = read_mask(dir / line.at("occluder_mask").get<std::string>());
    } catch (const json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
    if (s.label < 0) throw FormatError(where + ": negative label");
    if (s.object_mask.height != s.image.height || s.object_mask.width != s.image.width ||
        s.occluder_mask.height != s.image.height || s.occluder_mask.width != s.image.width)
      throw FormatError(where + ": mask size does not match image");
    if ((s.level == OcclusionLevel::L0) != (s.type == OccluderType::None))
      throw FormatError(where + ": level and occluder type disagree");
    if (!in_band(s.level, occluded_fraction(s)))
      throw FormatError(where + ": sample " + s.id + " violates the " + to_string(s.level) + " coverage band");
    out.push_back(std::move(s));
  }
  return out;
}

void save_backgrounds(std::span<const Image> images, const fs::path& dir) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "bg_%04zu", i);
    write_pnm(images[i], dir / (std::string(name) + image_extension(images[i])));
  }
}

std::vector<Image> load_backgrounds(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("background directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto ext = entry.path().extension().string();
    if (entry.is_regular_file() && (ext == ".pgm" || ext == ".ppm")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Image> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(read_pnm(f));
  return out;
}

}  // namespace compnet::bench
