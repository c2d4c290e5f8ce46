#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "evl/autodiff.hpp"
#include "evl/feature_table.hpp"
#include "evl/nn.hpp"
#include "evl/optim.hpp"

namespace evl {

// ---------------------------------------------------------------------------
// Episode schedule
// ---------------------------------------------------------------------------

/// Ordered, pairwise disjoint, non-empty class sets.
struct EpisodeSchedule {
  std::vector<std::vector<std::uint32_t>> episodes;
  std::uint64_t seed = 0;

  void validate() const;
  std::vector<std::uint32_t> classes() const;
};

/// Shuffles `classes` with `seed` and cuts it into n_episodes groups of
/// per_episode classes.
EpisodeSchedule make_schedule(std::span<const std::uint32_t> classes, std::size_t n_episodes,
                              std::size_t per_episode, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Habituation
// ---------------------------------------------------------------------------

/// Per-unit habituation counters for one layer; every counter starts at 1.
struct HabituationState {
  HabituationState() = default;
  HabituationState(std::size_t units, double tau, double gamma);

  std::vector<double> h;
  double tau = 0.0;    ///< decay rate in [0, 1)
  double gamma = 1.0;  ///< habituated fraction in (0, 1]
  std::vector<std::uint64_t> selections;  ///< times each unit was selected
};

/// Smallest value a counter can reach; keeps h inside (0, 1] after long runs.
inline constexpr double kHabituationFloor = 2.2250738585072014e-308;

/// h_i += tau * (1 - h_i) - tau for each listed unit, evaluated as the
/// equivalent (1 - tau) * h_i.
void habituation_decay(HabituationState& state, std::span<const std::size_t> units);

/// Indices of the ceil(gamma * n) largest activations, ascending; ties go to
/// the lower index.
std::vector<std::size_t> select_habituated(std::span<const double> activations, double gamma);

/// Multiplies the incoming weights (column i of a {in, out} weight) and the
/// bias of every unit i by h[i].
void scale_gradients(Parameter& weight, Parameter& bias, std::span<const double> h);

// ---------------------------------------------------------------------------
// Synaptic intelligence
// ---------------------------------------------------------------------------

struct SIState {
  SIState() = default;
  /// Anchors the reference at the current parameter values.
  SIState(std::span<Parameter* const> params, double strength, double damping);

  std::vector<Tensor> omega;       ///< running path integral for this episode
  std::vector<Tensor> importance;  ///< consolidated Omega, elementwise >= 0
  std::vector<Tensor> reference;   ///< theta at the last consolidation
  double strength = 0.0;
  double damping = 1e-3;
  int consolidations = 0;
};

/// omega += -grad * delta, where grads are the task-loss gradients of the
/// step and deltas the parameter change of the optimizer step.
void si_accumulate(SIState& state, std::span<const Tensor> grads, std::span<const Tensor> deltas);

/// Gradient of the SI penalty with respect to each parameter,
/// 2 * strength * Omega * (theta - theta_ref); zeros before consolidation.
std::vector<Tensor> si_penalty_gradient(const SIState& state, std::span<Parameter* const> params);

/// Omega += max(omega, 0) / ((theta - theta_ref)^2 + damping); then the
/// reference moves to theta and omega resets.
void si_consolidate(SIState& state, std::span<Parameter* const> params);

/// strength * sum Omega * (theta - theta_ref)^2; a constant zero before the
/// first consolidation.
Var si_penalty(Tape& tape, const SIState& state, std::span<Parameter* const> params);
double si_penalty_value(const SIState& state, std::span<Parameter* const> params);

// ---------------------------------------------------------------------------
// Replay VAE
// ---------------------------------------------------------------------------

struct VaeConfig {
  std::size_t feature_dim = 64;
  std::size_t hidden = 128;
  std::size_t latent = 16;
  std::size_t n_classes = 10;
  double kl_weight = 1.0;
};

class NoTrainedModel : public std::logic_error {
 public:
  NoTrainedModel() : std::logic_error("replay requested from a VAE that has not finished an episode") {}
};

/// VAE over feature vectors with a classifier on the latent mean. The
/// encoder's hidden layer is the habituated layer.
class ReplayVAE {
 public:
  struct Pass {
    Var hidden;  ///< relu activations of the habituated layer
    Var mean;
    Var logvar;
    Var z;
    Var recon;
    Var logits;  ///< over all n_classes, computed from the mean
  };

  ReplayVAE() = default;
  ReplayVAE(const VaeConfig& cfg, std::uint64_t seed);

  /// Full pass with reparameterized sampling z = mean + exp(logvar / 2) * eps.
  Pass forward(Tape& tape, Var x, std::mt19937_64& rng);
  Var encode_hidden(Tape& tape, Var x);
  Var decode(Tape& tape, Var z);
  Var classify(Tape& tape, Var latent);
  /// Deterministic class logits from the latent mean.
  Tensor predict_logits(const Tensor& x);

  std::vector<Parameter*> parameters();
  Linear& habituation_layer() { return enc_hidden_; }
  const VaeConfig& config() const { return cfg_; }

  int trained_episodes = 0;

 private:
  VaeConfig cfg_;
  Linear enc_hidden_;
  Linear enc_mean_;
  Linear enc_logvar_;
  Linear dec_hidden_;
  Linear dec_out_;
  Linear classifier_;
};

/// Mean over the batch of 0.5 * sum(mean^2 + exp(logvar) - 1 - logvar).
Var kl_divergence(Var mean, Var logvar);

struct VaeLoss {
  Var reconstruction;
  Var kl;
  Var total;
};

/// MSE reconstruction + kl_weight * KL for a completed forward pass.
VaeLoss vae_loss(const ReplayVAE::Pass& pass, Var x, double kl_weight);

struct ReplayBatch {
  Tensor features;     ///< {n, feature_dim}
  Tensor soft_labels;  ///< {n, seen_classes.size()}, rows sum to 1
};

/// Decodes z ~ N(0, I); soft labels are the classifier distribution on z
/// restricted to `seen_classes` and renormalized.
ReplayBatch generate_replay(ReplayVAE& model, std::span<const std::uint32_t> seen_classes, std::size_t n,
                            std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Methods and training
// ---------------------------------------------------------------------------

struct MethodConfig {
  std::string name = "NONE";
  bool replay = false;
  bool si = false;
  bool habituation = false;
  double si_strength = 1e9;
  double si_damping = 1e-3;
  double tau = 0.0;
  double gamma = 0.05;
};

class UnknownPreset : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NONE, BIR, BIR+SI, BIR+H (tau 0.3, gamma 0.05), BIR+SI+H (tau 0.02,
/// gamma 0.01).
MethodConfig preset(std::string_view name);
std::vector<std::string> preset_names();

struct TrainConfig {
  std::size_t batch_size = 32;
  double lr = 1e-3;
  int steps_per_episode = 500;
  VaeConfig vae;
};

struct StepLog {
  int episode = 0;
  int step = 0;
  double total = 0.0;
  double classification = 0.0;
  double replay = 0.0;
  double vae = 0.0;
  double si = 0.0;
  std::size_t real_items = 0;
  std::size_t replayed_items = 0;
};

/// Mutable learner state carried across episodes.
struct Learner {
  Learner(const TrainConfig& cfg, const MethodConfig& method, std::uint64_t seed);

  ReplayVAE model;
  std::optional<ReplayVAE> previous;  ///< frozen copy that generates replay
  Adam optimizer;
  SIState si;
  HabituationState habituation;
  std::vector<std::uint32_t> seen;  ///< classes in order of first appearance
  MethodConfig method;
  TrainConfig cfg;
  std::mt19937_64 rng;
  int episode = 0;

  Learner(const Learner&) = delete;
  Learner& operator=(const Learner&) = delete;
};

class ForeignClassInSlice : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ScheduleClassMissing : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Trains one episode on `slice`, whose labels must all be in
/// `episode_classes`.
std::vector<StepLog> train_episode(Learner& learner, const FeatureTable& slice,
                                   std::span<const std::uint32_t> episode_classes);

/// Accuracy on the rows of `test` whose labels are in `classes`, taking the
/// argmax over `candidates`.
double evaluate(ReplayVAE& model, const FeatureTable& test, std::span<const std::uint32_t> classes,
                std::span<const std::uint32_t> candidates);

struct CilResult {
  /// matrix[e][j]: accuracy on episode j's classes after training episode e.
  std::vector<std::vector<double>> matrix;
  std::vector<double> seen_accuracy;  ///< accuracy over all seen classes after each episode
  double final_accuracy = 0.0;
  std::vector<StepLog> log;
};

CilResult run_cil(const FeatureTable& train, const FeatureTable& test, const EpisodeSchedule& schedule,
                  const MethodConfig& method, const TrainConfig& cfg, std::uint64_t seed);

}  // namespace evl
