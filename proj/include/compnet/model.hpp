#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "compnet/backbone.hpp"
#include "compnet/head.hpp"
#include "compnet/vmf.hpp"

namespace compnet {

/// Everything inference needs: feature extractor, kernel dictionary,
/// per-class mixtures and the fixed occluder bank.
struct CompNetModel {
  backbone::BackboneParams backbone;
  vmf::VmfDictionary dict;
  head::MixtureBank mixtures;
  head::OccluderBank occluders;

  int num_classes() const { return mixtures.Y; }
  /// Throws ShapeError unless all parts agree on K, D, H and W.
  void validate() const;

  bool operator==(const CompNetModel&) const = default;
};

inline constexpr int kModelFormatVersion = 1;

struct ModelManifest {
  int format_version = kModelFormatVersion;
  int num_classes = 0;
  int K = 0;
  int M = 0;
  int N = 0;
  int H = 0;
  int W = 0;
  int D = 0;
  double sigma = 0.0;
  double occlusion_prior_logodds = 0.0;
  std::map<std::string, std::string> tensor_paths;

  bool operator==(const ModelManifest&) const = default;
};

ModelManifest make_manifest(const CompNetModel& model);

/// Writes manifest.json plus one CTNS file per tensor role into dir.
ModelManifest save_model(const CompNetModel& model, const std::filesystem::path& dir);

struct LoadedModel {
  ModelManifest manifest;
  CompNetModel model;
};
LoadedModel load_model(const std::filesystem::path& dir);

std::string manifest_to_json(const ModelManifest& m);
ModelManifest manifest_from_json(const std::string& text);

}  // namespace compnet
