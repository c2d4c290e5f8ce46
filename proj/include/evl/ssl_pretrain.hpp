#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "evl/autodiff.hpp"
#include "evl/event_model.hpp"
#include "evl/feature_table.hpp"
#include "evl/nn.hpp"
#include "evl/optim.hpp"
#include "evl/sparse_conv.hpp"

namespace evl {

/// Random view generation for normalized {2, H, W} histograms, applied as
/// crop-resize, horizontal flip, count dropout and multiplicative jitter.
struct AugmentConfig {
  double crop_scale_min = 0.6;  ///< crop area fraction range, within (0, 1]
  double crop_scale_max = 1.0;
  double flip_p = 0.5;
  double dropout_p = 0.1;  ///< each non-zero cell zeroed independently
  double jitter_min = 0.8;
  double jitter_max = 1.2;

  void validate() const;
};

Tensor augment(const Tensor& image, const AugmentConfig& cfg, std::mt19937_64& rng);

/// Linear -> relu -> Linear, feature_dim -> hidden -> projection_dim.
struct ProjectionHead {
  ProjectionHead() = default;
  ProjectionHead(std::size_t feature_dim, std::size_t hidden, std::size_t projection_dim, std::uint64_t seed);

  Var forward(Tape& tape, Var features);
  std::vector<Parameter*> parameters();

  Linear hidden;
  Linear out;
};

class DegenerateBatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Normalized-temperature cross-entropy. Rows i and i + N of the {2N, D}
/// input are positives for each other; every other row is a negative.
/// Rows are L2-normalized internally; the result is the mean over all 2N
/// anchors.
Var nt_xent_loss(Var projections, double temperature);
double nt_xent_loss(const Tensor& projections, double temperature);

/// Event streams loaded in manifest order.
struct EventDataset {
  std::vector<EventStream> streams;
  std::vector<std::uint32_t> labels;
  int num_classes = 0;

  std::size_t size() const { return streams.size(); }
};

EventDataset load_dataset(const std::filesystem::path& manifest_path, Split split);

struct HistogramConfig {
  std::size_t window = 5000;  ///< events per histogram window
  std::uint32_t clip = 8;
};

/// Random window -> polarity histogram -> normalized image.
Tensor window_image(const EventStream& stream, const HistogramConfig& cfg, std::mt19937_64& rng);

struct PretrainConfig {
  int epochs = 20;
  std::size_t batch_size = 32;
  double temperature = 0.5;
  double lr = 1e-3;
  HistogramConfig histogram;
  AugmentConfig augment;
  std::uint64_t seed = 1;
};

struct PretrainResult {
  std::vector<double> step_losses;
  std::vector<double> epoch_losses;  ///< mean step loss per epoch
};

/// Contrastive training of `encoder` (and `head`) on two augmented views
/// per sample. Labels are never read.
PretrainResult pretrain(const EventDataset& data, SparseEncoder& encoder, ProjectionHead& head,
                        const PretrainConfig& cfg);

/// One feature row per sample; sample i uses window seed i.
FeatureTable extract_features(const EventDataset& data, SparseEncoder& encoder, const HistogramConfig& cfg,
                              std::size_t batch_size = 64);

struct ProbeConfig {
  int steps = 500;
  double lr = 0.01;
  std::uint64_t seed = 1;
};

struct ProbeResult {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

/// Softmax-regression probe on standardized frozen features (statistics
/// from the training table).
ProbeResult linear_probe(const FeatureTable& train, const FeatureTable& test, const ProbeConfig& cfg = {});

}  // namespace evl
