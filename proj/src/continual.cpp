#include "evl/continual.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numeric>
#include <set>

namespace evl {

// ---------------------------------------------------------------------------
// Schedule
// ---------------------------------------------------------------------------

void EpisodeSchedule::validate() const {
  std::set<std::uint32_t> seen;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    if (episodes[e].empty()) throw std::invalid_argument(fmt::format("episode {} has no classes", e + 1));
    for (auto c : episodes[e])
      if (!seen.insert(c).second)
        throw std::invalid_argument(fmt::format("class {} repeats in episode {}", c, e + 1));
  }
}

std::vector<std::uint32_t> EpisodeSchedule::classes() const {
  std::vector<std::uint32_t> out;
  for (const auto& ep : episodes) out.insert(out.end(), ep.begin(), ep.end());
  return out;
}

EpisodeSchedule make_schedule(std::span<const std::uint32_t> classes, std::size_t n_episodes,
                              std::size_t per_episode, std::uint64_t seed) {
  if (n_episodes == 0 || per_episode == 0) throw std::invalid_argument("schedule needs episodes and classes");
  if (n_episodes * per_episode > classes.size())
    throw std::invalid_argument(fmt::format("schedule of {} x {} needs more than the {} available classes",
                                            n_episodes, per_episode, classes.size()));
  std::vector<std::uint32_t> order(classes.begin(), classes.end());
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  EpisodeSchedule s;
  s.seed = seed;
  for (std::size_t e = 0; e < n_episodes; ++e)
    s.episodes.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(e * per_episode),
                            order.begin() + static_cast<std::ptrdiff_t>((e + 1) * per_episode));
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Habituation
// ---------------------------------------------------------------------------

HabituationState::HabituationState(std::size_t units, double tau_, double gamma_)
    : h(units, 1.0), tau(tau_), gamma(gamma_), selections(units, 0) {
  if (!(tau >= 0.0 && tau < 1.0)) throw std::invalid_argument("habituation tau must be in [0, 1)");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("habituation gamma must be in (0, 1]");
}

void habituation_decay(HabituationState& state, std::span<const std::size_t> units) {
  for (std::size_t i : units) {
    if (i >= state.h.size()) throw std::out_of_range(fmt::format("habituation unit {} of {}", i, state.h.size()));
    // tau * (1 - h) - tau == -tau * h; the product form cannot round upwards.
    state.h[i] = std::max((1.0 - state.tau) * state.h[i], kHabituationFloor);
    if (i < state.selections.size()) ++state.selections[i];
  }
}

std::vector<std::size_t> select_habituated(std::span<const double> activations, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must be in (0, 1]");
  const std::size_t n = activations.size();
  const auto count = std::min(n, static_cast<std::size_t>(std::floor(gamma * static_cast<double>(n) + 1e-9)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return activations[a] > activations[b]; });
  order.resize(count);
  std::sort(order.begin(), order.end());
  return order;
}

void scale_gradients(Parameter& weight, Parameter& bias, std::span<const double> h) {
  const Shape& ws = weight.grad.shape();
  if (ws.size() != 2 || ws[1] != h.size() || bias.grad.shape() != Shape{h.size()})
    throw ShapeMismatch(fmt::format("scale_gradients: {} counters for weight {} and bias {}", h.size(),
                                    to_string(ws), to_string(bias.grad.shape())));
  const std::size_t in = ws[0], out = ws[1];
  for (std::size_t r = 0; r < in; ++r)
    for (std::size_t i = 0; i < out; ++i) weight.grad[r * out + i] *= h[i];
  for (std::size_t i = 0; i < out; ++i) bias.grad[i] *= h[i];
}

// ---------------------------------------------------------------------------
// Synaptic intelligence
// ---------------------------------------------------------------------------

SIState::SIState(std::span<Parameter* const> params, double strength_, double damping_)
    : strength(strength_), damping(damping_) {
  for (const Parameter* p : params) {
    omega.emplace_back(p->value.shape());
    importance.emplace_back(p->value.shape());
    reference.push_back(p->value);
  }
}

void si_accumulate(SIState& state, std::span<const Tensor> grads, std::span<const Tensor> deltas) {
  if (grads.size() != state.omega.size() || deltas.size() != grads.size())
    throw ShapeMismatch("si_accumulate: parameter list does not match SI state");
  for (std::size_t k = 0; k < grads.size(); ++k) {
    auto g = grads[k].values();
    if (g.size() != state.omega[k].size()) throw ShapeMismatch("si_accumulate", grads[k].shape(), state.omega[k].shape());
    auto d = deltas[k].values();
    auto w = state.omega[k].values();
    if (d.size() != w.size()) throw ShapeMismatch("si_accumulate", deltas[k].shape(), state.omega[k].shape());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += -g[i] * d[i];
  }
}

void si_consolidate(SIState& state, std::span<Parameter* const> params) {
  if (params.size() != state.omega.size()) throw ShapeMismatch("si_consolidate: parameter list does not match");
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto theta = params[k]->value.values();
    auto ref = state.reference[k].values();
    auto w = state.omega[k].values();
    auto big = state.importance[k].values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double moved = theta[i] - ref[i];
      big[i] += std::max(w[i], 0.0) / (moved * moved + state.damping);
      ref[i] = theta[i];
      w[i] = 0.0;
    }
  }
  ++state.consolidations;
}

std::vector<Tensor> si_penalty_gradient(const SIState& state, std::span<Parameter* const> params) {
  if (params.size() != state.reference.size()) throw ShapeMismatch("si_penalty_gradient: parameter list does not match");
  std::vector<Tensor> out;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor g = Tensor::zeros_like(params[k]->value);
    if (state.consolidations > 0) {
      const auto theta = params[k]->value.values();
      const auto ref = state.reference[k].values();
      const auto omega = state.importance[k].values();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = 2.0 * state.strength * omega[i] * (theta[i] - ref[i]);
    }
    out.push_back(std::move(g));
  }
  return out;
}

Var si_penalty(Tape& tape, const SIState& state, std::span<Parameter* const> params) {
  if (state.consolidations == 0) return tape.constant(Tensor::scalar(0.0));
  if (params.size() != state.reference.size()) throw ShapeMismatch("si_penalty: parameter list does not match");
  std::vector<Var> terms;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Var diff = sub(tape.parameter(*params[k]), tape.constant(state.reference[k]));
    terms.push_back(sum(mul(tape.constant(state.importance[k]), square(diff))));
  }
  Var total = terms[0];
  for (std::size_t k = 1; k < terms.size(); ++k) total = add(total, terms[k]);
  return scale(total, state.strength);
}

double si_penalty_value(const SIState& state, std::span<Parameter* const> params) {
  Tape tape;
  return si_penalty(tape, state, params).value().item();
}

// ---------------------------------------------------------------------------
// Replay VAE
// ---------------------------------------------------------------------------

ReplayVAE::ReplayVAE(const VaeConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  std::mt19937_64 rng(seed);
  enc_hidden_ = Linear(201, cfg.feature_dim, cfg.hidden, rng);
  enc_mean_ = Linear(203, cfg.hidden, cfg.latent, rng);
  enc_logvar_ = Linear(205, cfg.hidden, cfg.latent, rng);
  dec_hidden_ = Linear(207, cfg.latent, cfg.hidden, rng);
  dec_out_ = Linear(209, cfg.hidden, cfg.feature_dim, rng);
  classifier_ = Linear(211, cfg.latent, cfg.n_classes, rng);
}

Var ReplayVAE::encode_hidden(Tape& tape, Var x) { return relu(enc_hidden_.forward(tape, x)); }

Var ReplayVAE::decode(Tape& tape, Var z) { return dec_out_.forward(tape, relu(dec_hidden_.forward(tape, z))); }

Var ReplayVAE::classify(Tape& tape, Var latent) { return classifier_.forward(tape, latent); }

ReplayVAE::Pass ReplayVAE::forward(Tape& tape, Var x, std::mt19937_64& rng) {
  Pass p;
  p.hidden = encode_hidden(tape, x);
  p.mean = enc_mean_.forward(tape, p.hidden);
  p.logvar = enc_logvar_.forward(tape, p.hidden);
  Tensor eps(p.mean.shape());
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : eps.values()) v = normal(rng);
  p.z = add(p.mean, mul(exp(scale(p.logvar, 0.5)), tape.constant(std::move(eps))));
  p.recon = decode(tape, p.z);
  p.logits = classify(tape, p.mean);
  return p;
}

Tensor ReplayVAE::predict_logits(const Tensor& x) {
  Tape tape;
  Var h = encode_hidden(tape, tape.constant(x));
  return classify(tape, enc_mean_.forward(tape, h)).value();
}

std::vector<Parameter*> ReplayVAE::parameters() {
  std::vector<Parameter*> ps;
  for (Linear* l : {&enc_hidden_, &enc_mean_, &enc_logvar_, &dec_hidden_, &dec_out_, &classifier_}) l->collect(ps);
  return ps;
}

Var kl_divergence(Var mean, Var logvar) {
  const double batch = static_cast<double>(mean.shape().at(0));
  Var terms = sub(add(square(mean), exp(logvar)), add_scalar(logvar, 1.0));
  return scale(sum(terms), 0.5 / batch);
}

VaeLoss vae_loss(const ReplayVAE::Pass& pass, Var x, double kl_weight) {
  VaeLoss l;
  l.reconstruction = mse(pass.recon, x);
  l.kl = kl_divergence(pass.mean, pass.logvar);
  l.total = add(l.reconstruction, scale(l.kl, kl_weight));
  return l;
}

ReplayBatch generate_replay(ReplayVAE& model, std::span<const std::uint32_t> seen_classes, std::size_t n,
                            std::mt19937_64& rng) {
  if (model.trained_episodes == 0) throw NoTrainedModel();
  const auto& cfg = model.config();
  ReplayBatch out;
  out.features = Tensor({n, cfg.feature_dim});
  out.soft_labels = Tensor({n, seen_classes.size()});
  if (n == 0) return out;
  Tensor z({n, cfg.latent});
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : z.values()) v = normal(rng);
  Tape tape;
  Var zv = tape.constant(z);
  out.features = model.decode(tape, zv).value();
  std::vector<std::size_t> cols(seen_classes.begin(), seen_classes.end());
  out.soft_labels = softmax_rows(select_columns(model.classify(tape, zv), cols).value());
  return out;
}

// ---------------------------------------------------------------------------
// Methods
// ---------------------------------------------------------------------------

MethodConfig preset(std::string_view name) {
  MethodConfig m;
  m.name = std::string(name);
  if (name == "NONE") return m;
  if (name == "BIR") {
    m.replay = true;
  } else if (name == "BIR+SI") {
    m.replay = m.si = true;
  } else if (name == "BIR+H") {
    m.replay = m.habituation = true;
    m.tau = 0.3;
    m.gamma = 0.05;
  } else if (name == "BIR+SI+H") {
    m.replay = m.si = m.habituation = true;
    m.tau = 0.02;
    m.gamma = 0.01;
  } else {
    throw UnknownPreset("unknown method preset '" + std::string(name) + "'");
  }
  return m;
}

std::vector<std::string> preset_names() { return {"NONE", "BIR", "BIR+SI", "BIR+H", "BIR+SI+H"}; }

Learner::Learner(const TrainConfig& cfg_, const MethodConfig& method_, std::uint64_t seed)
    : model(cfg_.vae, seed),
      optimizer(model.parameters(), AdamConfig{cfg_.lr}),
      si(model.parameters(), method_.si_strength, method_.si_damping),
      method(method_),
      cfg(cfg_),
      rng(seed ^ 0x9E3779B97F4A7C15ull) {
  if (method.habituation) habituation = HabituationState(cfg.vae.hidden, method.tau, method.gamma);
}

std::vector<StepLog> train_episode(Learner& learner, const FeatureTable& slice,
                                   std::span<const std::uint32_t> episode_classes) {
  for (auto label : slice.labels)
    if (std::find(episode_classes.begin(), episode_classes.end(), label) == episode_classes.end())
      throw ForeignClassInSlice(fmt::format("class {} is not part of this episode", label));
  if (slice.rows() == 0) throw std::invalid_argument("train_episode: empty slice");
  if (slice.dim() != learner.cfg.vae.feature_dim)
    throw ShapeMismatch(fmt::format("train_episode: features have {} dims, model expects {}", slice.dim(),
                                    learner.cfg.vae.feature_dim));

  const std::vector<std::uint32_t> seen_before = learner.seen;
  for (auto c : episode_classes) {
    if (c >= learner.cfg.vae.n_classes) throw std::out_of_range(fmt::format("class {} exceeds classifier size", c));
    if (std::find(learner.seen.begin(), learner.seen.end(), c) == learner.seen.end()) learner.seen.push_back(c);
  }
  const std::vector<std::size_t> seen_cols(learner.seen.begin(), learner.seen.end());
  const std::vector<std::size_t> prev_cols(seen_before.begin(), seen_before.end());
  std::vector<std::size_t> position(learner.cfg.vae.n_classes);
  for (std::size_t i = 0; i < seen_cols.size(); ++i) position[seen_cols[i]] = i;

  ReplayVAE& model = learner.model;
  std::vector<Parameter*> params = model.parameters();
  const bool replay = learner.method.replay && learner.previous.has_value() && !seen_before.empty();
  const std::size_t b = learner.cfg.batch_size;
  const std::size_t dim = slice.dim();
  ++learner.episode;

  std::vector<StepLog> log;
  std::uniform_int_distribution<std::size_t> pick(0, slice.rows() - 1);
  for (int step = 0; step < learner.cfg.steps_per_episode; ++step) {
    Tensor xr({b, dim});
    std::vector<std::size_t> labels(b);
    for (std::size_t k = 0; k < b; ++k) {
      const std::size_t r = pick(learner.rng);
      std::copy_n(slice.row(r).begin(), dim, xr.data() + k * dim);
      labels[k] = position[slice.labels[r]];
    }

    Tape tape;
    Var x_real = tape.constant(std::move(xr));
    ReplayBatch rb;
    Var x = x_real;
    if (replay) {
      rb = generate_replay(*learner.previous, seen_before, b, learner.rng);
      const Var parts[] = {x_real, tape.constant(rb.features)};
      x = concat(parts);
    }
    const ReplayVAE::Pass pass = model.forward(tape, x, learner.rng);

    StepLog entry;
    entry.episode = learner.episode;
    entry.step = step;
    entry.real_items = b;
    entry.replayed_items = replay ? b : 0;
    Var ce = softmax_cross_entropy(select_columns(slice_rows(pass.logits, 0, b), seen_cols), labels);
    Var total = ce;
    entry.classification = ce.value().item();
    if (replay) {
      Var distill = soft_cross_entropy(select_columns(slice_rows(pass.logits, b, 2 * b), prev_cols), rb.soft_labels);
      total = add(total, distill);
      entry.replay = distill.value().item();
    }
    const VaeLoss vl = vae_loss(pass, x, learner.cfg.vae.kl_weight);
    total = add(total, vl.total);
    entry.vae = vl.total.value().item();
    if (learner.method.si) {
      Var penalty = si_penalty(tape, learner.si, params);
      total = add(total, penalty);
      entry.si = penalty.value().item();
    }
    entry.total = total.value().item();

    learner.optimizer.zero_grad();
    tape.backward(total);

    std::vector<Tensor> task_grads;
    if (learner.method.si) {
      task_grads = si_penalty_gradient(learner.si, params);
      for (std::size_t k = 0; k < params.size(); ++k) {
        auto g = task_grads[k].values();
        auto full = params[k]->grad.values();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = full[i] - g[i];
      }
    }

    if (learner.method.habituation) {
      const Tensor& act = pass.hidden.value();
      const std::size_t rows = act.dim(0), units = act.dim(1);
      std::vector<double> mean_act(units, 0.0);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t u = 0; u < units; ++u) mean_act[u] += act[r * units + u];
      for (double& m : mean_act) m /= static_cast<double>(rows);
      const auto chosen = select_habituated(mean_act, learner.habituation.gamma);
      habituation_decay(learner.habituation, chosen);
      Linear& layer = model.habituation_layer();
      scale_gradients(layer.weight, layer.bias, learner.habituation.h);
    }

    std::vector<Tensor> before;
    if (learner.method.si)
      for (const Parameter* p : params) before.push_back(p->value);
    learner.optimizer.step();
    if (learner.method.si) {
      for (std::size_t k = 0; k < params.size(); ++k) {
        auto after = params[k]->value.values();
        for (std::size_t i = 0; i < after.size(); ++i) before[k][i] = after[i] - before[k][i];
      }
      si_accumulate(learner.si, task_grads, before);
    }
    log.push_back(entry);
  }

  if (learner.method.si) si_consolidate(learner.si, params);
  ++model.trained_episodes;
  if (learner.method.replay) learner.previous = model;
  return log;
}

double evaluate(ReplayVAE& model, const FeatureTable& test, std::span<const std::uint32_t> classes,
                std::span<const std::uint32_t> candidates) {
  const FeatureTable subset = test.subset(classes);
  if (subset.rows() == 0) return 0.0;
  const Tensor logits = model.predict_logits(subset.features);
  const std::size_t k = logits.dim(1);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < subset.rows(); ++i) {
    std::uint32_t best = candidates.front();
    for (auto c : candidates)
      if (logits[i * k + c] > logits[i * k + best]) best = c;
    if (best == subset.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(subset.rows());
}

CilResult run_cil(const FeatureTable& train, const FeatureTable& test, const EpisodeSchedule& schedule,
                  const MethodConfig& method, const TrainConfig& cfg, std::uint64_t seed) {
  schedule.validate();
  for (auto c : schedule.classes()) {
    if (std::find(train.labels.begin(), train.labels.end(), c) == train.labels.end())
      throw ScheduleClassMissing(fmt::format("scheduled class {} has no training features", c));
  }
  Learner learner(cfg, method, seed);
  CilResult result;
  for (std::size_t e = 0; e < schedule.episodes.size(); ++e) {
    const auto& classes = schedule.episodes[e];
    auto log = train_episode(learner, train.subset(classes), classes);
    result.log.insert(result.log.end(), log.begin(), log.end());
    std::vector<double> row;
    for (std::size_t j = 0; j <= e; ++j) row.push_back(evaluate(learner.model, test, schedule.episodes[j], learner.seen));
    result.matrix.push_back(std::move(row));
    result.seen_accuracy.push_back(evaluate(learner.model, test, learner.seen, learner.seen));
  }
  result.final_accuracy = result.seen_accuracy.empty() ? 0.0 : result.seen_accuracy.back();
  return result;
}

}  // namespace evl
