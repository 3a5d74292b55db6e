#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "compnet/errors.hpp"
#include "compnet/model.hpp"
#include "compnet/tensor.hpp"

namespace compnet {

namespace {

using json = nlohmann::ordered_json;
using Dims = std::vector<std::uint32_t>;

std::string mixture_role(int y) { return "mixtures_" + std::to_string(y); }

std::string dims_string(const Dims& d) {
  std::string s = "[";
  for (std::size_t i = 0; i < d.size(); ++i) s += (i ? ", " : "") + std::to_string(d[i]);
  return s + "]";
}

Dims u32(std::initializer_list<int> v) {
  Dims d;
  for (int x : v) d.push_back(static_cast<std::uint32_t>(x));
  return d;
}

}  // namespace

void CompNetModel::validate() const {
  if (dict.D != backbone.feature_dim()) throw ShapeError("dictionary dimension does not match backbone output");
  if (mixtures.K != dict.K) throw ShapeError("mixture bank K does not match dictionary");
  if (occluders.K != dict.K) throw ShapeError("occluder bank K does not match dictionary");
  if (mixtures.logits.size() != static_cast<std::size_t>(mixtures.Y) * mixtures.M * mixtures.map_size())
    throw ShapeError("mixture bank size mismatch");
  if (occluders.log_beta.size() != static_cast<std::size_t>(occluders.N) * occluders.K)
    throw ShapeError("occluder bank size mismatch");
  for (int n = 0; n < occluders.N; ++n) {
    double total = 0.0;
    for (double lb : occluders.row(n)) total += std::exp(lb);
    if (std::abs(total - 1.0) > 1e-5) throw DomainError("occluder model " + std::to_string(n) + " is off the simplex");
  }
  dict.validate();
}

ModelManifest make_manifest(const CompNetModel& model) {
  ModelManifest m;
  m.num_classes = model.mixtures.Y;
  m.K = model.dict.K;
  m.M = model.mixtures.M;
  m.N = model.occluders.N;
  m.H = model.mixtures.H;
  m.W = model.mixtures.W;
  m.D = model.dict.D;
  m.sigma = model.dict.sigma;
  m.occlusion_prior_logodds = model.occluders.prior_logodds;
  m.tensor_paths = {{"filters", "filters.ctns"},     {"projection", "projection.ctns"},
                    {"geometry", "geometry.ctns"},   {"mu", "mu.ctns"},
                    {"occluders", "occluders.ctns"}};
  for (int y = 0; y < m.num_classes; ++y) m.tensor_paths[mixture_role(y)] = mixture_role(y) + ".ctns";
  return m;
}

std::string manifest_to_json(const ModelManifest& m) {
  json j;
  j["format_version"] = m.format_version;
  j["num_classes"] = m.num_classes;
  j["k"] = m.K;
  j["m"] = m.M;
  j["n"] = m.N;
  j["h"] = m.H;
  j["w"] = m.W;
  j["d"] = m.D;
  j["sigma"] = m.sigma;
  j["occlusion_prior_logodds"] = m.occlusion_prior_logodds;
  json paths = json::object();
  for (const auto& [role, path] : m.tensor_paths) paths[role] = path;
  j["tensor_paths"] = paths;
  return j.dump(2) + "\n";
}

ModelManifest manifest_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("manifest.json: ") + e.what());
  }
  static const std::set<std::string> known = {"format_version", "num_classes", "k",     "m",
                                              "n",              "h",           "w",     "d",
                                              "sigma",          "occlusion_prior_logodds", "tensor_paths"};
  if (!j.is_object()) throw FormatError("manifest.json: expected an object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw FormatError("manifest.json: unknown key '" + key + "'");
  for (const auto& key : known)
    if (!j.contains(key)) throw FormatError("manifest.json: missing key '" + key + "'");
  ModelManifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != kModelFormatVersion)
      throw VersionError("manifest.json: unsupported format_version " + std::to_string(m.format_version));
    m.num_classes = j.at("num_classes").get<int>();
    m.K = j.at("k").get<int>();
    m.M = j.at("m").get<int>();
    m.N = j.at("n").get<int>();
    m.H = j.at("h").get<int>();
    m.W = j.at("w").get<int>();
    m.D = j.at("d").get<int>();
    m.sigma = j.at("sigma").get<double>();
    m.occlusion_prior_logodds = j.at("occlusion_prior_logodds").get<double>();
    for (const auto& [role, path] : j.at("tensor_paths").items()) m.tensor_paths[role] = path.get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest.json: ") + e.what());
  }
  return m;
}

ModelManifest save_model(const CompNetModel& model, const std::filesystem::path& dir) {
  model.validate();
  const ModelManifest m = make_manifest(model);
  std::filesystem::create_directories(dir);
  const auto& bb = model.backbone;
  auto path = [&](const std::string& role) { return dir / m.tensor_paths.at(role); };

  write_tensor(to_tensor(u32({bb.num_filters(), bb.kernel_size(), bb.kernel_size()}), bb.filters()),
               path("filters"));
  write_tensor(to_tensor(u32({bb.feature_dim(), bb.num_filters()}), bb.projection()), path("projection"));
  write_tensor(Tensor(u32({2}), {static_cast<float>(bb.stride()), static_cast<float>(bb.pool_size())}),
               path("geometry"));
  write_tensor(to_tensor(u32({m.K, m.D}), model.dict.mu), path("mu"));
  write_tensor(to_tensor(u32({m.N, m.K}), model.occluders.log_beta), path("occluders"));
  for (int y = 0; y < m.num_classes; ++y) {
    const auto& mb = model.mixtures;
    std::span<const double> block(mb.logits.data() + static_cast<std::size_t>(y) * mb.M * mb.map_size(),
                                  static_cast<std::size_t>(mb.M) * mb.map_size());
    write_tensor(to_tensor(u32({m.M, m.H, m.W, m.K}), block), path(mixture_role(y)));
  }

  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << manifest_to_json(m);
  if (!out) throw IoError("write failed: " + (dir / "manifest.json").string());
  return m;
}

LoadedModel load_model(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("cannot read " + (dir / "manifest.json").string());
  std::stringstream ss;
  ss << in.rdbuf();
  LoadedModel lm;
  ModelManifest& m = lm.manifest;
  m = manifest_from_json(ss.str());
  if (m.num_classes <= 0 || m.K <= 0 || m.M <= 0 || m.N <= 0 || m.H <= 0 || m.W <= 0 || m.D <= 0)
    throw FormatError("manifest.json: model dimensions must be positive");
  if (!(m.sigma > 0.0)) throw FormatError("manifest.json: sigma must be positive");

  auto load_role = [&](const std::string& role) {
    const auto it = m.tensor_paths.find(role);
    if (it == m.tensor_paths.end()) throw FormatError("manifest.json: missing tensor role '" + role + "'");
    const auto p = dir / it->second;
    if (!std::filesystem::exists(p)) throw IoError("tensor '" + role + "' missing: " + p.string());
    try {
      return read_tensor(p);
    } catch (const Error& e) {
      throw FormatError("tensor '" + role + "': " + e.what());
    }
  };
  auto expect = [&](const std::string& role, const Tensor& t, const Dims& want) {
    if (t.dims != want)
      throw ShapeError("tensor '" + role + "' has dims " + dims_string(t.dims) + ", manifest implies " +
                       dims_string(want));
  };

  const Tensor filters = load_role("filters");
  if (filters.rank() != 3 || filters.dims[1] != filters.dims[2])
    throw ShapeError("tensor 'filters' must be [C, k, k], got " + dims_string(filters.dims));
  const int C = static_cast<int>(filters.dims[0]);
  const int k = static_cast<int>(filters.dims[1]);
  const Tensor projection = load_role("projection");
  expect("projection", projection, u32({m.D, C}));
  const Tensor geometry = load_role("geometry");
  expect("geometry", geometry, u32({2}));
  const Tensor mu = load_role("mu");
  expect("mu", mu, u32({m.K, m.D}));
  const Tensor occ = load_role("occluders");
  expect("occluders", occ, u32({m.N, m.K}));

  std::set<std::string> expected_roles = {"filters", "projection", "geometry", "mu", "occluders"};
  for (int y = 0; y < m.num_classes; ++y) expected_roles.insert(mixture_role(y));
  for (const auto& [role, _] : m.tensor_paths)
    if (!expected_roles.count(role)) throw FormatError("manifest.json: unexpected tensor role '" + role + "'");

  CompNetModel& model = lm.model;
  model.backbone = backbone::BackboneParams(C, k, static_cast<int>(geometry.data[0]),
                                            static_cast<int>(geometry.data[1]), m.D, to_doubles(filters),
                                            to_doubles(projection));
  model.dict.K = m.K;
  model.dict.D = m.D;
  model.dict.sigma = m.sigma;
  model.dict.mu = to_doubles(mu);
  model.occluders.N = m.N;
  model.occluders.K = m.K;
  model.occluders.log_beta = to_doubles(occ);
  model.occluders.prior_logodds = m.occlusion_prior_logodds;
  model.mixtures = head::MixtureBank(m.num_classes, m.M, m.H, m.W, m.K);
  for (int y = 0; y < m.num_classes; ++y) {
    const auto role = mixture_role(y);
    const Tensor t = load_role(role);
    expect(role, t, u32({m.M, m.H, m.W, m.K}));
    std::copy(t.data.begin(), t.data.end(),
              model.mixtures.logits.begin() + static_cast<std::ptrdiff_t>(y) * m.M * model.mixtures.map_size());
  }
  model.validate();
  return lm;
}

}  // namespace compnet
