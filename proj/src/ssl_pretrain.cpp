#include "evl/ssl_pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "evl/histogram.hpp"

namespace evl {

void AugmentConfig::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0))
    throw std::invalid_argument("augment crop scale range must satisfy 0 < min <= max <= 1");
  if (!prob(flip_p) || !prob(dropout_p)) throw std::invalid_argument("augment probabilities must be in [0, 1]");
  if (!(jitter_min >= 0.0 && jitter_min <= jitter_max))
    throw std::invalid_argument("augment jitter range must satisfy 0 <= min <= max");
}

Tensor augment(const Tensor& image, const AugmentConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  if (image.rank() != 3) throw ShapeMismatch("augment expects {C,H,W}, got " + to_string(image.shape()));
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);

  // crop-resize, nearest neighbour
  std::uniform_real_distribution<double> scale_d(cfg.crop_scale_min, cfg.crop_scale_max);
  const double side = std::sqrt(scale_d(rng));
  const auto ch = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(side * h)), 1, h);
  const auto cw = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(side * w)), 1, w);
  const std::size_t y0 = std::uniform_int_distribution<std::size_t>(0, h - ch)(rng);
  const std::size_t x0 = std::uniform_int_distribution<std::size_t>(0, w - cw)(rng);
  const bool flip = std::bernoulli_distribution(cfg.flip_p)(rng);

  Tensor out(image.shape());
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t sy = y0 + (y * ch) / h;
        const std::size_t sx = x0 + (x * cw) / w;
        const std::size_t dx = flip ? w - 1 - x : x;
        out[(k * h + y) * w + dx] = image[(k * h + sy) * w + sx];
      }

  std::bernoulli_distribution drop(cfg.dropout_p);
  std::uniform_real_distribution<double> jitter(cfg.jitter_min, cfg.jitter_max);
  for (double& v : out.values()) {
    if (v == 0.0) continue;
    if (drop(rng))
      v = 0.0;
    else
      v *= jitter(rng);
  }
  return out;
}

ProjectionHead::ProjectionHead(std::size_t feature_dim, std::size_t hidden_dim, std::size_t projection_dim,
                               std::uint64_t seed) {
  if (projection_dim < 2) throw std::invalid_argument("projection dimension must be >= 2");
  std::mt19937_64 rng(seed);
  hidden = Linear(101, feature_dim, hidden_dim, rng);
  out = Linear(103, hidden_dim, projection_dim, rng);
}

Var ProjectionHead::forward(Tape& tape, Var features) {
  return out.forward(tape, relu(hidden.forward(tape, features)));
}

std::vector<Parameter*> ProjectionHead::parameters() {
  std::vector<Parameter*> ps;
  hidden.collect(ps);
  out.collect(ps);
  return ps;
}

Var nt_xent_loss(Var projections, double temperature) {
  const Shape& s = projections.shape();
  if (s.size() != 2 || s[0] % 2 != 0 || s[0] < 4)
    throw DegenerateBatch("nt_xent_loss needs 2N rows with N >= 2, got shape " + to_string(s));
  if (!(temperature > 0)) throw std::invalid_argument("nt_xent_loss temperature must be > 0");
  const std::size_t rows = s[0], n = rows / 2;
  Tape& tape = projections.tape();
  Var z = normalize_rows(projections);
  Var sim = scale(matmul(z, transpose(z)), 1.0 / temperature);
  // self-similarity never enters the softmax
  Tensor mask({rows, rows});
  for (std::size_t i = 0; i < rows; ++i) mask[i * rows + i] = -std::numeric_limits<double>::infinity();
  Var logits = add(sim, tape.constant(std::move(mask)));
  std::vector<std::size_t> positives(rows);
  for (std::size_t i = 0; i < rows; ++i) positives[i] = (i + n) % rows;
  return softmax_cross_entropy(logits, positives);
}

double nt_xent_loss(const Tensor& projections, double temperature) {
  Tape tape;
  return nt_xent_loss(tape.constant(projections), temperature).value().item();
}

EventDataset load_dataset(const std::filesystem::path& manifest_path, Split split) {
  const DatasetManifest manifest = read_manifest_file(manifest_path);
  const auto base = manifest_path.parent_path();
  EventDataset data;
  data.num_classes = manifest.num_classes();
  for (const auto& e : manifest.split(split)) {
    std::filesystem::path p(e.path);
    if (p.is_relative()) p = base / p;
    auto s = read_evs1_file(p);
    data.streams.emplace_back(s.width(), s.height(), std::vector<Event>(s.events().begin(), s.events().end()),
                              e.class_id);
    data.labels.push_back(static_cast<std::uint32_t>(e.class_id));
  }
  return data;
}

Tensor window_image(const EventStream& stream, const HistogramConfig& cfg, std::mt19937_64& rng) {
  return normalize_histogram(build_histogram(random_window(stream, cfg.window, rng)), cfg.clip);
}

PretrainResult pretrain(const EventDataset& data, SparseEncoder& encoder, ProjectionHead& head,
                        const PretrainConfig& cfg) {
  PretrainResult result;
  if (cfg.epochs <= 0) return result;
  if (data.size() < 2) throw DegenerateBatch("pretrain needs at least 2 samples");
  if (cfg.batch_size < 2) throw DegenerateBatch("pretrain batch size must be >= 2");
  cfg.augment.validate();

  std::vector<Parameter*> params = encoder.parameters();
  for (Parameter* p : head.parameters()) params.push_back(p);
  Adam opt(params, AdamConfig{cfg.lr});
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_sum = 0.0;
    std::size_t epoch_steps = 0;
    for (std::size_t start = 0; start + 2 <= order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::size_t b = end - start;
      std::vector<SparseGrid> grids(2 * b);
      for (std::size_t k = 0; k < b; ++k) {
        // Each view gets its own randomly placed window of the same recording.
        const EventStream& stream = data.streams[order[start + k]];
        grids[k] = to_sparse_grid(augment(window_image(stream, cfg.histogram, rng), cfg.augment, rng));
        grids[k + b] = to_sparse_grid(augment(window_image(stream, cfg.histogram, rng), cfg.augment, rng));
      }
      const SparseBatch batch = make_sparse_batch(grids, encoder.config().kernel);
      Tape tape;
      Var loss = nt_xent_loss(head.forward(tape, encoder.forward(tape, batch)), cfg.temperature);
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
      result.step_losses.push_back(loss.value().item());
      epoch_sum += loss.value().item();
      ++epoch_steps;
    }
    result.epoch_losses.push_back(epoch_steps ? epoch_sum / static_cast<double>(epoch_steps) : 0.0);
  }
  return result;
}

FeatureTable extract_features(const EventDataset& data, SparseEncoder& encoder, const HistogramConfig& cfg,
                              std::size_t batch_size) {
  FeatureTable table;
  const std::size_t dim = encoder.config().feature_dim;
  std::vector<double> values;
  values.reserve(data.size() * dim);
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    std::vector<SparseGrid> grids;
    for (std::size_t i = start; i < end; ++i) {
      std::mt19937_64 rng(i);
      grids.push_back(to_sparse_grid(window_image(data.streams[i], cfg, rng)));
    }
    const Tensor f = encoder.encode(grids);
    values.insert(values.end(), f.values().begin(), f.values().end());
  }
  table.labels = data.labels;
  table.features = Tensor({data.size(), dim}, std::move(values));
  return table;
}

ProbeResult linear_probe(const FeatureTable& train, const FeatureTable& test, const ProbeConfig& cfg) {
  if (train.rows() == 0) throw std::invalid_argument("linear_probe: empty training table");
  if (train.dim() != test.dim()) throw ShapeMismatch("linear_probe", train.features.shape(), test.features.shape());
  const std::size_t dim = train.dim();
  std::uint32_t k = 0;
  for (auto l : train.labels) k = std::max(k, l + 1);
  for (auto l : test.labels) k = std::max(k, l + 1);

  std::vector<double> mu(dim, 0.0), sd(dim, 0.0);
  for (std::size_t i = 0; i < train.rows(); ++i)
    for (std::size_t d = 0; d < dim; ++d) mu[d] += train.row(i)[d];
  for (auto& m : mu) m /= static_cast<double>(train.rows());
  for (std::size_t i = 0; i < train.rows(); ++i)
    for (std::size_t d = 0; d < dim; ++d) sd[d] += std::pow(train.row(i)[d] - mu[d], 2);
  for (auto& s : sd) s = std::sqrt(s / static_cast<double>(train.rows())) + 1e-8;
  auto standardize = [&](const FeatureTable& t) {
    Tensor x(t.features.shape());
    for (std::size_t i = 0; i < t.rows(); ++i)
      for (std::size_t d = 0; d < dim; ++d) x[i * dim + d] = (t.row(i)[d] - mu[d]) / sd[d];
    return x;
  };
  const Tensor xtr = standardize(train), xte = standardize(test);

  std::mt19937_64 rng(cfg.seed);
  Linear clf(1, dim, k, rng);
  std::vector<Parameter*> params;
  clf.collect(params);
  Adam opt(params, AdamConfig{cfg.lr});
  std::vector<std::size_t> labels(train.labels.begin(), train.labels.end());
  for (int step = 0; step < cfg.steps; ++step) {
    Tape tape;
    Var loss = softmax_cross_entropy(clf.forward(tape, tape.constant(xtr)), labels);
    opt.zero_grad();
    tape.backward(loss);
    opt.step();
  }
  auto accuracy = [&](const Tensor& x, std::span<const std::uint32_t> ys) {
    if (ys.empty()) return 0.0;
    Tape tape;
    const Tensor logits = clf.forward(tape, tape.constant(x)).value();
    std::size_t hits = 0;
    for (std::size_t i = 0; i < ys.size(); ++i) {
      const double* row = logits.data() + i * k;
      if (static_cast<std::uint32_t>(std::max_element(row, row + k) - row) == ys[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(ys.size());
  };
  return {accuracy(xtr, train.labels), accuracy(xte, test.labels)};
}

}  // namespace evl
