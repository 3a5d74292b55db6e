#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "compnet/backbone.hpp"
#include "compnet/image.hpp"
#include "compnet/model.hpp"

namespace compnet::bench {

enum class OcclusionLevel { L0, L1, L2, L3 };
enum class OccluderType { None, White, Noise, Texture, Object };

inline constexpr OccluderType kOccluderTypes[] = {OccluderType::White, OccluderType::Noise, OccluderType::Texture,
                                                  OccluderType::Object};
inline constexpr OcclusionLevel kOccludedLevels[] = {OcclusionLevel::L1, OcclusionLevel::L2, OcclusionLevel::L3};

std::string to_string(OcclusionLevel level);
std::string to_string(OccluderType type);
/// Single-letter code used in table headers: w, n, t, o ("-" for none).
std::string short_code(OccluderType type);
OcclusionLevel parse_level(const std::string& s);
OccluderType parse_type(const std::string& s);

/// Occluded-object fraction band (lo, hi]; L0 is exactly zero.
struct Band {
  double lo = 0.0;
  double hi = 0.0;
};
Band level_band(OcclusionLevel level);
bool in_band(OcclusionLevel level, double fraction);

struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(int h, int w) : height(h), width(w), bits(static_cast<std::size_t>(h) * w, 0) {}
  std::uint8_t& at(int y, int x) { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count() const;
  bool operator==(const Mask&) const = default;
};

struct SyntheticSample {
  std::string id;
  Image image;
  int label = 0;
  Mask object_mask;
  Mask occluder_mask;
  OcclusionLevel level = OcclusionLevel::L0;
  OccluderType type = OccluderType::None;

  bool operator==(const SyntheticSample&) const = default;
};

/// |occluder & object| / |object|.
double occluded_fraction(const SyntheticSample& s);

struct DatasetSpec {
  int num_classes = 2;
  int images_per_class = 10;
  int image_size = 32;
  std::uint64_t seed = 0;
};

/// Unoccluded samples, class-major. Each class is a fixed arrangement of
/// bars, disks or rings rendered on black with seeded jitter and filled
/// with the same stripe pattern.
std::vector<SyntheticSample> generate_dataset(const DatasetSpec& spec);

/// Texture families. Backgrounds use Checker, Grating, Blobs, Dots and
/// Speckle; matched texture occluders use Checker, Grating and Dots;
/// unmatched ones use the held-out Rings, Crosshatch and Bricks.
enum class TextureFamily { Checker, Grating, Blobs, Dots, Speckle, Rings, Crosshatch, Bricks };
enum class TextureMatch { Matched, Unmatched };

/// Full-frame procedural texture with values in [0, 1].
Image render_texture(TextureFamily family, int size, std::uint64_t seed);

/// Background images without objects, drawn from the background families.
std::vector<Image> generate_backgrounds(int count, int image_size, std::uint64_t seed);

/// Places one occluder grown by bisection until the occluded-object fraction
/// lies in the band of `level`. Geometry and pixel content use separate
/// seeds. Throws GenerationError when no placement reaches the band.
SyntheticSample apply_occluder(const SyntheticSample& sample, OccluderType type, OcclusionLevel level,
                               std::uint64_t geometry_seed, std::uint64_t texture_seed,
                               TextureMatch textures = TextureMatch::Matched);
SyntheticSample apply_occluder(const SyntheticSample& sample, OccluderType type, OcclusionLevel level,
                               std::uint64_t seed, TextureMatch textures = TextureMatch::Matched);

/// Occluded variants for every (sample, type, level) with derived seeds.
std::vector<SyntheticSample> occlude_all(std::span<const SyntheticSample> clean, std::span<const OccluderType> types,
                                         std::span<const OcclusionLevel> levels, std::uint64_t seed,
                                         TextureMatch textures = TextureMatch::Matched);

struct ReceptiveField {
  int kernel_size = 5;
  int stride = 1;
  int pool_size = 2;
};
ReceptiveField receptive_field(const backbone::BackboneParams& params);

/// Feature-cell labels: a cell is set iff more than half of its receptive
/// field's center patch (pool*stride square at offset (k-1)/2) is set.
/// Throws ShapeError when the mask size does not produce an H x W grid.
std::vector<std::uint8_t> downsample_mask(const Mask& mask, int H, int W, const ReceptiveField& rf);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};
struct RocCurve {
  std::vector<RocPoint> points;  // from (0,0) to (1,1)
  double auc = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};
/// Threshold sweep from high to low score; tied scores move together so a
/// constant score gives the chance diagonal. Throws DomainError unless both
/// classes are present.
RocCurve compute_roc(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct AccuracyCell {
  OcclusionLevel level = OcclusionLevel::L0;
  OccluderType type = OccluderType::None;
  std::size_t count = 0;
  std::size_t correct = 0;
  double accuracy() const { return count ? static_cast<double>(correct) / static_cast<double>(count) : 0.0; }
};

struct EvalReport {
  std::vector<AccuracyCell> cells;              // only cells with samples
  std::map<OccluderType, RocCurve> localization;  // types with both labels present
  std::size_t total = 0;
  std::size_t correct = 0;

  std::optional<AccuracyCell> cell(OcclusionLevel level, OccluderType type) const;
  /// Mean over present cells (Table-1 style unweighted mean).
  std::optional<double> mean_accuracy() const;
};

/// Per-cell occlusion scores of correctly classified L1-L3 images feed the
/// per-type ROC; only cells inside the object are scored.
EvalReport evaluate(const CompNetModel& model, std::span<const SyntheticSample> samples);

/// Throws GeometryError when a sample's image does not produce the model's
/// feature grid.
void check_geometry(const CompNetModel& model, const SyntheticSample& sample);

std::string report_to_json(const EvalReport& report);
/// One header row and one data row in the L0 | L1 w n t o | ... | Mean layout.
std::string accuracy_table_csv(const EvalReport& report);
std::string localization_csv(const EvalReport& report);

/// Linear softmax classifier over the flattened feature map.
struct LinearHead {
  int Y = 0;
  int P = 0;
  int D = 0;
  std::vector<double> weights;  // [Y, P*D]
  std::vector<double> bias;     // [Y]
};
struct LinearTrainOptions {
  int epochs = 60;
  double lr = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 0;
};
/// Cross-entropy only, zero initialization, per-image SGD with momentum.
LinearHead train_linear_head(std::span<const FeatureMap> features, std::span<const int> labels, int num_classes,
                             const LinearTrainOptions& options);
int predict(const LinearHead& head, const FeatureMap& features);

/// samples.jsonl plus images/ (PGM/PPM) and masks/ (CTNS 0/1 floats).
void save_dataset(std::span<const SyntheticSample> samples, const std::filesystem::path& dir);
/// Re-checks the coverage band of every sample.
std::vector<SyntheticSample> load_dataset(const std::filesystem::path& dir);
void save_backgrounds(std::span<const Image> images, const std::filesystem::path& dir);
/// Every .pgm/.ppm in dir, sorted by file name.
std::vector<Image> load_backgrounds(const std::filesystem::path& dir);

}  // namespace compnet::bench
