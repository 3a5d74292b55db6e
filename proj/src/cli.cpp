#include "compnet/cli.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "compnet/bench.hpp"
#include "compnet/errors.hpp"
#include "compnet/model.hpp"
#include "compnet/tensor.hpp"
#include "compnet/trainer.hpp"

namespace compnet::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// Advisory lock on <dir>/.compnet.lock for the lifetime of a command.
class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / ".compnet.lock") {
    fd_ = ::open(path_.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0) throw IoError("cannot create lock file " + path_.string());
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      fd_ = -1;
      throw IoError("output directory is in use: " + path_.string());
    }
  }
  ~DirectoryLock() {
    if (fd_ < 0) return;
    std::error_code ec;
    fs::remove(path_, ec);
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

void make_output_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("output directory not writable: " + dir.string());
  const fs::path probe = dir / ".compnet.probe";
  {
    std::ofstream p(probe);
    if (!p) throw IoError("output directory not writable: " + dir.string());
  }
  fs::remove(probe, ec);
}

struct SynthSpec {
  bench::DatasetSpec dataset;
  std::vector<bench::OccluderType> types{std::begin(bench::kOccluderTypes), std::end(bench::kOccluderTypes)};
  std::vector<bench::OcclusionLevel> levels{std::begin(bench::kOccludedLevels), std::end(bench::kOccludedLevels)};
  int num_backgrounds = 20;
  bench::TextureMatch textures = bench::TextureMatch::Matched;
};

SynthSpec parse_synth_spec(const std::string& text) {
  SynthSpec spec;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("synth spec: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("synth spec: expected a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "num_classes") spec.dataset.num_classes = v.get<int>();
      else if (key == "images_per_class") spec.dataset.images_per_class = v.get<int>();
      else if (key == "image_size") spec.dataset.image_size = v.get<int>();
      else if (key == "seed") spec.dataset.seed = v.get<std::uint64_t>();
      else if (key == "num_backgrounds") spec.num_backgrounds = v.get<int>();
      else if (key == "occluder_types") {
        spec.types.clear();
        for (const auto& t : v) spec.types.push_back(bench::parse_type(t.get<std::string>()));
      } else if (key == "levels") {
        spec.levels.clear();
        for (const auto& l : v) {
          const auto level = bench::parse_level(l.get<std::string>());
          if (level == bench::OcclusionLevel::L0) throw FormatError("synth spec: levels lists occluded levels only");
          spec.levels.push_back(level);
        }
      } else if (key == "textures") {
        const auto s = v.get<std::string>();
        if (s == "matched") spec.textures = bench::TextureMatch::Matched;
        else if (s == "unmatched") spec.textures = bench::TextureMatch::Unmatched;
        else throw FormatError("synth spec: textures must be 'matched' or 'unmatched'");
      } else
        throw FormatError("synth spec: unknown key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("synth spec: ") + e.what());
  }
  for (auto t : spec.types)
    if (t == bench::OccluderType::None) throw FormatError("synth spec: 'none' is not an occluder type");
  if (spec.num_backgrounds < 0) throw FormatError("synth spec: num_backgrounds must be non-negative");
  return spec;
}

int cmd_synth(const std::string& spec_path, const fs::path& out_dir, std::optional<std::uint64_t> seed,
              std::ostream& out) {
  SynthSpec spec = parse_synth_spec(read_text(spec_path));
  if (seed) spec.dataset.seed = *seed;
  make_output_dir(out_dir);
  DirectoryLock lock(out_dir);

  const auto clean = bench::generate_dataset(spec.dataset);
  auto occluded = bench::occlude_all(clean, spec.types, spec.levels, spec.dataset.seed, spec.textures);
  std::vector<bench::SyntheticSample> all = clean;
  all.insert(all.end(), std::make_move_iterator(occluded.begin()), std::make_move_iterator(occluded.end()));
  bench::save_dataset(all, out_dir);
  const auto backgrounds = bench::generate_backgrounds(spec.num_backgrounds, spec.dataset.image_size, spec.dataset.seed);
  bench::save_backgrounds(backgrounds, out_dir / "backgrounds");
  out << "L0 samples: " << clean.size() << "\n"
      << "occluded samples: " << (all.size() - clean.size()) << "\n"
      << "background images: " << backgrounds.size() << "\n";
  return kSuccess;
}

struct TrainOverrides {
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  std::optional<double> momentum;
  std::optional<double> prior_logodds;
  std::optional<bool> freeze_backbone;
};

int cmd_train(const fs::path& data_dir, const fs::path& bg_dir, const std::string& config_path, const fs::path& out_dir,
              const TrainOverrides& ov, std::ostream& out) {
  train::TrainConfig config;
  if (!config_path.empty()) config = train::config_from_json(read_text(config_path));
  if (ov.epochs) config.epochs = *ov.epochs;
  if (ov.seed) config.seed = *ov.seed;
  if (ov.lr) config.lr = *ov.lr;
  if (ov.momentum) config.momentum = *ov.momentum;
  if (ov.prior_logodds) config.prior_logodds = *ov.prior_logodds;
  if (ov.freeze_backbone) config.freeze_backbone = *ov.freeze_backbone;
  config.validate();

  const auto samples = bench::load_dataset(data_dir);
  std::vector<Image> images;
  std::vector<int> labels;
  for (const auto& s : samples) {
    if (s.level != bench::OcclusionLevel::L0) continue;
    images.push_back(s.image);
    labels.push_back(s.label);
  }
  if (images.empty()) throw InitError("no L0 training samples in " + data_dir.string());
  const auto backgrounds = bench::load_backgrounds(bg_dir);

  make_output_dir(out_dir);
  DirectoryLock lock(out_dir);
  const backbone::BackboneParams bb{backbone::BackboneConfig{}};
  CompNetModel model = train::init_model(bb, images, labels, backgrounds, config);
  auto state = train::train(std::move(model), images, labels, config, [&](const train::EpochLog& e) {
    out << "epoch " << e.epoch << " loss " << e.mean_loss << " train_accuracy " << e.train_accuracy << "\n";
  });
  save_model(state.model, out_dir);
  train::write_training_log(state.log, out_dir / "training_log.csv");
  out << "model written to " << out_dir.string() << "\n";
  return kSuccess;
}

int cmd_eval(const fs::path& data_dir, const fs::path& model_dir, const fs::path& report_path,
             std::optional<double> prior_logodds, std::ostream& out) {
  auto loaded = load_model(model_dir);
  if (prior_logodds) loaded.model.occluders.prior_logodds = *prior_logodds;
  const auto samples = bench::load_dataset(data_dir);
  const auto report = bench::evaluate(loaded.model, samples);

  const fs::path parent = report_path.has_parent_path() ? report_path.parent_path() : fs::path(".");
  make_output_dir(parent);
  DirectoryLock lock(parent);
  const std::string stem = report_path.stem().string();
  write_text(report_path, bench::report_to_json(report));
  write_text(parent / (stem + "_accuracy.csv"), bench::accuracy_table_csv(report));
  write_text(parent / (stem + "_localization.csv"), bench::localization_csv(report));
  out << "evaluated " << report.total << " samples, " << report.correct << " correct\n";
  return kSuccess;
}

int cmd_localize(const fs::path& image_path, const fs::path& model_dir, const fs::path& out_dir,
                 std::optional<double> prior_logodds, std::ostream& out) {
  auto loaded = load_model(model_dir);
  auto& model = loaded.model;
  if (prior_logodds) model.occluders.prior_logodds = *prior_logodds;
  const Image image = read_pnm(image_path);
  bench::SyntheticSample probe;
  probe.id = image_path.filename().string();
  probe.image = image;
  bench::check_geometry(model, probe);

  const FeatureMap F = backbone::extract_features(image, model.backbone);
  const auto result = head::infer(F, model.dict, model.mixtures, model.occluders);

  make_output_dir(out_dir);
  DirectoryLock lock(out_dir);
  json scores;
  scores["scores"] = result.scores;
  scores["predicted"] = result.predicted;
  scores["best_mixture"] = result.best_mixture;
  write_text(out_dir / "scores.json", scores.dump(2) + "\n");

  const auto H = static_cast<std::uint32_t>(result.H), W = static_cast<std::uint32_t>(result.W);
  std::vector<float> z(result.occlusion_map.begin(), result.occlusion_map.end());
  write_tensor(Tensor({H, W}, std::move(z)), out_dir / "zmap.ctns");
  write_tensor(to_tensor({H, W}, result.occlusion_scores.values), out_dir / "occscore.ctns");
  write_tensor(to_tensor({H, W}, head::median_filter_3x3(result.occlusion_scores).values),
               out_dir / "occscore_med.ctns");
  std::size_t occluded = 0;
  for (auto b : result.occlusion_map) occluded += b;
  out << "predicted class " << result.predicted << ", " << occluded << " of " << result.occlusion_map.size()
      << " cells occluded\n";
  return kSuccess;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Compositional classification head with occluder modelling"};
  app.require_subcommand(1);

  std::string spec_path, synth_out;
  std::optional<std::uint64_t> synth_seed;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic occlusion dataset");
  synth->add_option("--spec", spec_path, "Dataset spec JSON")->required();
  synth->add_option("--out", synth_out, "Output dataset directory")->required();
  synth->add_option("--seed", synth_seed, "Override the spec seed");

  std::string data_dir, bg_dir, config_path, train_out;
  TrainOverrides ov;
  auto* trn = app.add_subcommand("train", "Initialize and train a model on the L0 split");
  trn->add_option("--data", data_dir, "Dataset directory (samples.jsonl)")->required();
  trn->add_option("--bg", bg_dir, "Directory of background images for the occluder models")->required();
  trn->add_option("--config", config_path, "Training config JSON");
  trn->add_option("--out", train_out, "Model output directory")->required();
  trn->add_option("--epochs", ov.epochs, "Override epochs");
  trn->add_option("--seed", ov.seed, "Override seed");
  trn->add_option("--lr", ov.lr, "Override learning rate");
  trn->add_option("--momentum", ov.momentum, "Override momentum");
  trn->add_option("--prior-logodds", ov.prior_logodds, "Override occlusion prior log-odds");
  trn->add_option("--freeze-backbone", ov.freeze_backbone, "Override backbone freezing (true/false)");

  std::string eval_data, eval_model, eval_out;
  std::optional<double> eval_prior;
  auto* ev = app.add_subcommand("eval", "Accuracy per occlusion level/type and occluder-localization ROC");
  ev->add_option("--data", eval_data, "Dataset directory")->required();
  ev->add_option("--model", eval_model, "Model directory")->required();
  ev->add_option("--out", eval_out, "Report JSON path; CSV tables are written next to it")->required();
  ev->add_option("--prior-logodds", eval_prior, "Override occlusion prior log-odds");

  std::string loc_image, loc_model, loc_out;
  std::optional<double> loc_prior;
  auto* loc = app.add_subcommand("localize", "Class scores and occlusion maps for one image");
  loc->add_option("--image", loc_image, "PGM/PPM image")->required();
  loc->add_option("--model", loc_model, "Model directory")->required();
  loc->add_option("--out", loc_out, "Output directory")->required();
  loc->add_option("--prior-logodds", loc_prior, "Override occlusion prior log-odds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kUsageError;
  }

  try {
    if (*synth) return cmd_synth(spec_path, synth_out, synth_seed, out);
    if (*trn) return cmd_train(data_dir, bg_dir, config_path, train_out, ov, out);
    if (*ev) return cmd_eval(eval_data, eval_model, eval_out, eval_prior, out);
    if (*loc) return cmd_localize(loc_image, loc_model, loc_out, loc_prior, out);
  } catch (const GeometryError& e) {
    err << "error: " << e.what() << "\n";
    return kGeometryMismatch;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kDiverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  }
  return kUsageError;
}

}  // namespace compnet::cli
