#include <algorithm>
#include <cstdio>
#include <numeric>

#include <json.hpp>

#include "compnet/bench.hpp"
#include "compnet/errors.hpp"

namespace compnet::bench {

ReceptiveField receptive_field(const backbone::BackboneParams& params) {
  return {params.kernel_size(), params.stride(), params.pool_size()};
}

std::vector<std::uint8_t> downsample_mask(const Mask& mask, int H, int W, const ReceptiveField& rf) {
  const int conv_h = (mask.height - rf.kernel_size) / rf.stride + 1;
  const int conv_w = (mask.width - rf.kernel_size) / rf.stride + 1;
  if (mask.height < rf.kernel_size || mask.width < rf.kernel_size || conv_h / rf.pool_size != H ||
      conv_w / rf.pool_size != W)
    throw ShapeError("mask of " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                     " does not map onto a " + std::to_string(H) + "x" + std::to_string(W) + " feature grid");
  const int patch = rf.pool_size * rf.stride;
  const int offset = (rf.kernel_size - 1) / 2;
  std::vector<std::uint8_t> out(static_cast<std::size_t>(H) * W, 0);
  for (int i = 0; i < H; ++i) {
    for (int j = 0; j < W; ++j) {
      int set = 0, total = 0;
      for (int a = 0; a < patch; ++a)
        for (int b = 0; b < patch; ++b) {
          const int y = i * patch + offset + a;
          const int x = j * patch + offset + b;
          if (y >= mask.height || x >= mask.width) continue;
          ++total;
          set += mask.at(y, x);
        }
      out[static_cast<std::size_t>(i) * W + j] = (2 * set > total) ? 1 : 0;
    }
  }
  return out;
}

RocCurve compute_roc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw ShapeError("scores and labels differ in length");
  RocCurve roc;
  for (auto l : labels) (l ? roc.positives : roc.negatives)++;
  if (roc.positives == 0 || roc.negatives == 0) throw DomainError("ROC needs both positive and negative cells");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  const double P = static_cast<double>(roc.positives), N = static_cast<double>(roc.negatives);
  std::size_t tp = 0, fp = 0;
  roc.points.push_back({0.0, 0.0});
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      (labels[order[i]] ? tp : fp)++;
      ++i;
    }
    const RocPoint next{fp / N, tp / P};
    roc.auc += (next.fpr - roc.points.back().fpr) * (next.tpr + roc.points.back().tpr) * 0.5;
    roc.points.push_back(next);
  }
  return roc;
}

std::optional<AccuracyCell> EvalReport::cell(OcclusionLevel level, OccluderType type) const {
  for (const auto& c : cells)
    if (c.level == level && c.type == type) return c;
  return std::nullopt;
}

std::optional<double> EvalReport::mean_accuracy() const {
  if (cells.empty()) return std::nullopt;
  double s = 0.0;
  for (const auto& c : cells) s += c.accuracy();
  return s / static_cast<double>(cells.size());
}

void check_geometry(const CompNetModel& model, const SyntheticSample& sample) {
  std::pair<int, int> hw;
  try {
    hw = model.backbone.output_shape(sample.image.height, sample.image.width);
  } catch (const ShapeError& e) {
    throw GeometryError(sample.id + ": " + e.what());
  }
  if (hw.first != model.mixtures.H || hw.second != model.mixtures.W)
    throw GeometryError(sample.id + ": image " + std::to_string(sample.image.height) + "x" +
                        std::to_string(sample.image.width) + " gives a " + std::to_string(hw.first) + "x" +
                        std::to_string(hw.second) + " feature grid, model expects " +
                        std::to_string(model.mixtures.H) + "x" + std::to_string(model.mixtures.W));
}

namespace {

// Table order: L0 first, then levels x types.
int cell_rank(OcclusionLevel level, OccluderType type) {
  return static_cast<int>(level) * 8 + static_cast<int>(type);
}

}  // namespace

EvalReport evaluate(const CompNetModel& model, std::span<const SyntheticSample> samples) {
  for (const auto& s : samples) check_geometry(model, s);
  const ReceptiveField rf = receptive_field(model.backbone);
  const int H = model.mixtures.H, W = model.mixtures.W;

  EvalReport report;
  std::map<int, AccuracyCell> cells;
  std::map<OccluderType, std::pair<std::vector<double>, std::vector<std::uint8_t>>> roc_inputs;
  for (const auto& s : samples) {
    const FeatureMap F = backbone::extract_features(s.image, model.backbone);
    const auto result = head::infer(F, model.dict, model.mixtures, model.occluders);
    const bool correct = result.predicted == s.label;
    auto& cell = cells[cell_rank(s.level, s.type)];
    cell.level = s.level;
    cell.type = s.type;
    ++cell.count;
    ++report.total;
    if (correct) {
      ++cell.correct;
      ++report.correct;
    }
    if (!correct || s.level == OcclusionLevel::L0) continue;
    const auto in_object = downsample_mask(s.object_mask, H, W, rf);
    const auto occluded = downsample_mask(s.occluder_mask, H, W, rf);
    auto& [scores, labels] = roc_inputs[s.type];
    for (int p = 0; p < H * W; ++p) {
      if (!in_object[p]) continue;
      scores.push_back(result.occlusion_scores[p]);
      labels.push_back(occluded[p] ? 1 : 0);
    }
  }
  for (auto& [_, c] : cells) report.cells.push_back(c);
  for (const auto& [type, in] : roc_inputs) {
    const auto& [scores, labels] = in;
    const bool has_pos = std::find(labels.begin(), labels.end(), 1) != labels.end();
    const bool has_neg = std::find(labels.begin(), labels.end(), 0) != labels.end();
    if (has_pos && has_neg) report.localization[type] = compute_roc(scores, labels);
  }
  return report;
}

std::string report_to_json(const EvalReport& report) {
  using json = nlohmann::ordered_json;
  json j;
  j["total"] = report.total;
  j["correct"] = report.correct;
  const auto mean = report.mean_accuracy();
  j["mean_accuracy"] = mean ? json(*mean) : json(nullptr);
  json cells = json::array();
  for (const auto& c : report.cells)
    cells.push_back({{"level", to_string(c.level)},
                     {"type", to_string(c.type)},
                     {"count", c.count},
                     {"correct", c.correct},
                     {"accuracy", c.accuracy()}});
  j["cells"] = cells;
  json loc = json::object();
  for (const auto& [type, roc] : report.localization) {
    json pts = json::array();
    for (const auto& p : roc.points) pts.push_back({p.fpr, p.tpr});
    loc[to_string(type)] = {{"auc", roc.auc}, {"positives", roc.positives}, {"negatives", roc.negatives}, {"roc", pts}};
  }
  j["localization"] = loc;
  return j.dump(2) + "\n";
}

std::string accuracy_table_csv(const EvalReport& report) {
  std::string header = "model,L0";
  std::string row = "compnet,";
  char buf[32];
  auto value = [&](OcclusionLevel l, OccluderType t) {
    const auto c = report.cell(l, t);
    if (!c) return std::string();
    std::snprintf(buf, sizeof buf, "%.4f", c->accuracy());
    return std::string(buf);
  };
  row += value(OcclusionLevel::L0, OccluderType::None);
  for (const auto level : kOccludedLevels)
    for (const auto type : kOccluderTypes) {
      header += "," + to_string(level) + "_" + short_code(type);
      row += "," + value(level, type);
    }
  header += ",mean\n";
  const auto mean = report.mean_accuracy();
  if (mean) {
    std::snprintf(buf, sizeof buf, "%.4f", *mean);
    row += std::string(",") + buf + "\n";
  } else {
    row += ",\n";
  }
  return header + row;
}

std::string localization_csv(const EvalReport& report) {
  std::string out = "type,auc,positives,negatives\n";
  char buf[128];
  for (const auto& [type, roc] : report.localization) {
    std::snprintf(buf, sizeof buf, "%s,%.6f,%zu,%zu\n", to_string(type).c_str(), roc.auc, roc.positives, roc.negatives);
    out += buf;
  }
  return out;
}

}  // namespace compnet::bench
