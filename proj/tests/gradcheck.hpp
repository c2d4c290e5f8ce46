#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "evl/autodiff.hpp"
#include "evl/sparse_conv.hpp"

namespace evl::test {

/// A scalar loss over owned parameters, rebuilt on a fresh tape per call.
struct GradCase {
  std::vector<std::unique_ptr<Parameter>> owned;
  std::vector<Parameter*> params;
  std::function<Var(Tape&)> loss;
  // Keeps rulebooks and other captured inputs alive for the lifetime of the case.
  std::shared_ptr<void> keep_alive;

  Parameter& add(Tensor value) {
    owned.push_back(std::make_unique<Parameter>(static_cast<std::uint32_t>(owned.size() + 1), std::move(value)));
    params.push_back(owned.back().get());
    return *owned.back();
  }
};

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.values()) v = u(rng);
  return t;
}

/// Values bounded away from zero so relu kinks stay outside the FD stencil.
inline Tensor kink_free_tensor(Shape shape, std::mt19937_64& rng) {
  Tensor t = random_tensor(std::move(shape), rng);
  for (double& v : t.values()) v = std::copysign(0.05 + std::abs(v), v);
  return t;
}

/// Largest elementwise |analytic - numeric| / max(|analytic| + |numeric|, 1e-6)
/// over every parameter element, using central differences with step h.
inline double max_relative_error(GradCase& c, double h = 1e-5) {
  for (Parameter* p : c.params) p->zero_grad();
  {
    Tape tape;
    Var loss = c.loss(tape);
    tape.backward(loss);
  }
  auto eval = [&] {
    Tape tape;
    return c.loss(tape).value().item();
  };
  double worst = 0.0;
  for (Parameter* p : c.params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + h;
      const double up = eval();
      p->value[i] = orig - h;
      const double down = eval();
      p->value[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p->grad[i];
      const double err = std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), 1e-6);
      worst = std::max(worst, err);
    }
  }
  return worst;
}

/// sum(out * R) for a fixed random R: every output element gets a distinct weight.
inline Var contract(Tape& tape, Var out, const Tensor& r) { return sum(mul(out, tape.constant(r))); }

using CaseFactory = std::function<GradCase(std::mt19937_64&)>;

inline std::vector<std::pair<std::string, CaseFactory>> primitive_cases() {
  std::vector<std::pair<std::string, CaseFactory>> cases;
  auto dims = [](std::mt19937_64& rng) { return std::uniform_int_distribution<std::size_t>(1, 4)(rng); };

  auto unary = [&](std::string name, std::function<Var(Var)> op, bool positive = false, bool kink = false) {
    cases.emplace_back(name, [=](std::mt19937_64& rng) {
      GradCase c;
      const Shape s{dims(rng), dims(rng)};
      Tensor x = kink ? kink_free_tensor(s, rng) : random_tensor(s, rng, positive ? 0.2 : -1.0, positive ? 2.0 : 1.0);
      Parameter& p = c.add(std::move(x));
      const Tensor r = random_tensor(s, rng);
      c.loss = [&p, r, op](Tape& t) { return contract(t, op(t.parameter(p)), r); };
      return c;
    });
  };
  unary("relu", [](Var a) { return relu(a); }, false, true);
  unary("sigmoid", [](Var a) { return sigmoid(a); });
  unary("tanh", [](Var a) { return tanh(a); });
  unary("exp", [](Var a) { return exp(a); });
  unary("log", [](Var a) { return log(a); }, true);
  unary("square", [](Var a) { return square(a); });
  unary("scale", [](Var a) { return scale(a, -2.5); });
  unary("add_scalar", [](Var a) { return add_scalar(a, 0.75); });
  unary("transpose", [](Var a) { return transpose(a); }, false);
  unary("normalize_rows", [](Var a) { return normalize_rows(add_scalar(a, 0.1)); });

  // transpose changes shape, so contract against its own output shape
  cases.erase(std::remove_if(cases.begin(), cases.end(), [](const auto& c) { return c.first == "transpose"; }),
              cases.end());
  cases.emplace_back("transpose", [=](std::mt19937_64& rng) {
    GradCase c;
    const std::size_t m = dims(rng), n = dims(rng);
    Parameter& p = c.add(random_tensor({m, n}, rng));
    const Tensor r = random_tensor({n, m}, rng);
    c.loss = [&p, r](Tape& t) { return contract(t, transpose(t.parameter(p)), r); };
    return c;
  });

  auto binary = [&](std::string name, std::function<Var(Var, Var)> op) {
    cases.emplace_back(name, [=](std::mt19937_64& rng) {
      GradCase c;
      const Shape s{dims(rng), dims(rng)};
      Parameter& a = c.add(random_tensor(s, rng));
      Parameter& b = c.add(random_tensor(s, rng));
      const Tensor r = random_tensor(s, rng);
      c.loss = [&a, &b, r, op](Tape& t) { return contract(t, op(t.parameter(a), t.parameter(b)), r); };
      return c;
    });
  };
  binary("add", [](Var a, Var b) { return add(a, b); });
  binary("sub", [](Var a, Var b) { return sub(a, b); });
  binary("mul", [](Var a, Var b) { return mul(a, b); });

  cases.emplace_back("add_row_vector", [=](std::mt19937_64& rng) {
    GradCase c;
    const std::size_t n = dims(rng), m = dims(rng);
    Parameter& a = c.add(random_tensor({n, m}, rng));
    Parameter& b = c.add(random_tensor({m}, rng));
    const Tensor r = random_tensor({n, m}, rng);
    c.loss = [&a, &b, r](Tape& t) { return contract(t, add(t.parameter(a), t.parameter(b)), r); };
    return c;
  });
  cases.emplace_back("matmul", [=](std::mt19937_64& rng) {
    GradCase c;
    const std::size_t n = dims(rng), k = dims(rng), m = dims(rng);
    Parameter& a = c.add(random_tensor({n, k}, rng));
    Parameter& b = c.add(random_tensor({k, m}, rng));
    const Tensor r = random_tensor({n, m}, rng);
    c.loss = [&a, &b, r](Tape& t) { return contract(t, matmul(t.parameter(a), t.parameter(b)), r); };
    return c;
  });
  cases.emplace_back("sum", [=](std::mt19937_64& rng) {
    GradCase c;
    Parameter& p = c.add(random_tensor({dims(rng), dims(rng)}, rng));
    c.loss = [&p](Tape& t) { return scale(sum(t.parameter(p)), 1.7); };
    return c;
  });
  cases.emplace_back("mean", [=](std::mt19937_64& rng) {
    GradCase c;
    Parameter& p = c.add(random_tensor({dims(rng), dims(rng)}, rng));
    c.loss = [&p](Tape& t) { return square(mean(t.parameter(p))); };
    return c;
  });
  cases.emplace_back("reshape", [=](std::mt19937_64& rng) {
    GradCase c;
    const std::size_t n = dims(rng), m = dims(rng);
    Parameter& p = c.add(random_tensor({n, m}, rng));
    const Tensor r = random_tensor({m * n}, rng);
    c.loss = [&p, r, n, m](Tape& t) { return contract(t, reshape(t.parameter(p), {n * m}), r); };
    return c;
  });
  cases.emplace_back("concat", [=](std::mt19937_64& rng) {
    GradCase c;
    const std::size_t m = dims(rng), n1 = dims(rng), n2 = dims(rng);
    Parameter& a = c.add(random_tensor({n1, m}, rng));
    Parameter& b = c.add(random_tensor({n2, m}, rng));
    const Tensor r = random_tensor({n1 + n2, m}, rng);
    c.loss = [&a, &b, r](Tape& t) {
      const Var parts[] = {t.parameter(a), t.parameter(b)};
      return contract(t, concat(parts), r);
    };
    return c;
  });
  cases.emplace_back("slice_rows", [=](std::mt19937_64& rng) {
    GradCase c;
    const std::size_t n = dims(rng) + 2, m = dims(rng);
    Parameter& p = c.add(random_tensor({n, m}, rng));
    const Tensor r = random_tensor({n - 2, m}, rng);
    c.loss = [&p, r, n](Tape& t) { return contract(t, slice_rows(t.parameter(p), 1, n - 1), r); };
    return c;
  });
  cases.emplace_back("select_columns", [=](std::mt19937_64& rng) {
    GradCase c;
    const std::size_t n = dims(rng);
    Parameter& p = c.add(random_tensor({n, 5}, rng));
    const Tensor r = random_tensor({n, 3}, rng);
    c.loss = [&p, r](Tape& t) {
      const std::size_t cols[] = {4, 0, 2};
      return contract(t, select_columns(t.parameter(p), cols), r);
    };
    return c;
  });
  cases.emplace_back("softmax_cross_entropy", [=](std::mt19937_64& rng) {
    GradCase c;
    const std::size_t n = dims(rng), k = dims(rng) + 1;
    Parameter& p = c.add(random_tensor({n, k}, rng, -3.0, 3.0));
    std::vector<std::size_t> labels(n);
    std::uniform_int_distribution<std::size_t> pick(0, k - 1);
    for (auto& l : labels) l = pick(rng);
    c.loss = [&p, labels](Tape& t) { return softmax_cross_entropy(t.parameter(p), labels); };
    return c;
  });
  cases.emplace_back("soft_cross_entropy", [=](std::mt19937_64& rng) {
    GradCase c;
    const std::size_t n = dims(rng), k = dims(rng) + 1;
    Parameter& p = c.add(random_tensor({n, k}, rng, -3.0, 3.0));
    const Tensor targets = softmax_rows(random_tensor({n, k}, rng, -2.0, 2.0));
    c.loss = [&p, targets](Tape& t) { return soft_cross_entropy(t.parameter(p), targets); };
    return c;
  });
  cases.emplace_back("mse", [=](std::mt19937_64& rng) {
    GradCase c;
    const Shape s{dims(rng), dims(rng)};
    Parameter& a = c.add(random_tensor(s, rng));
    Parameter& b = c.add(random_tensor(s, rng));
    c.loss = [&a, &b](Tape& t) { return mse(t.parameter(a), t.parameter(b)); };
    return c;
  });
  cases.emplace_back("conv2d_dense", [=](std::mt19937_64& rng) {
    GradCase c;
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 2)(rng);
    const std::size_t cin = dims(rng) % 3 + 1, cout = dims(rng) % 3 + 1;
    const std::size_t k = std::uniform_int_distribution<std::size_t>(0, 1)(rng) ? 3 : 1;
    const std::size_t stride = std::uniform_int_distribution<std::size_t>(1, 2)(rng);
    const std::size_t pad = k == 3 ? std::uniform_int_distribution<std::size_t>(0, 1)(rng) : 0;
    const std::size_t hgt = 5, wid = 4;
    Parameter& x = c.add(random_tensor({n, cin, hgt, wid}, rng));
    Parameter& w = c.add(random_tensor({cout, cin, k, k}, rng));
    Parameter& b = c.add(random_tensor({cout}, rng));
    const std::size_t oh = (hgt + 2 * pad - k) / stride + 1, ow = (wid + 2 * pad - k) / stride + 1;
    const Tensor r = random_tensor({n, cout, oh, ow}, rng);
    c.loss = [&x, &w, &b, r, stride, pad](Tape& t) {
      return contract(t, conv2d_dense(t.parameter(x), t.parameter(w), t.parameter(b), stride, pad), r);
    };
    return c;
  });
  cases.emplace_back("max_pool2d", [=](std::mt19937_64& rng) {
    GradCase c;
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 2)(rng), ch = dims(rng) % 2 + 1;
    Parameter& x = c.add(random_tensor({n, ch, 5, 6}, rng));
    const Tensor r = random_tensor({n, ch, 2, 3}, rng);
    c.loss = [&x, r](Tape& t) { return contract(t, max_pool2d(t.parameter(x), 2, 2), r); };
    return c;
  });
  return cases;
}

/// Two-layer MLP with tanh hidden units and a cross-entropy head.
inline GradCase mlp_case(std::mt19937_64& rng) {
  GradCase c;
  const Tensor x = random_tensor({4, 5}, rng);
  Parameter& w1 = c.add(random_tensor({5, 6}, rng));
  Parameter& b1 = c.add(random_tensor({6}, rng));
  Parameter& w2 = c.add(random_tensor({6, 3}, rng));
  Parameter& b2 = c.add(random_tensor({3}, rng));
  const std::vector<std::size_t> labels{0, 2, 1, 2};
  c.loss = [&, x, labels](Tape& t) {
    Var h = tanh(add(matmul(t.constant(x), t.parameter(w1)), t.parameter(b1)));
    return softmax_cross_entropy(add(matmul(h, t.parameter(w2)), t.parameter(b2)), labels);
  };
  return c;
}

/// Two submanifold conv layers (relu between) with global pooling on a batch
/// of random sparse grids.
inline GradCase sparse_net_case(std::mt19937_64& rng) {
  GradCase c;
  struct Net {
    SparseConvLayer conv1, conv2;
    SparseBatch batch;
    Tensor r;
  };
  auto net = std::make_shared<Net>();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<SparseGrid> grids;
  for (int g = 0; g < 2; ++g) {
    SparseGrid grid{7, 6, 2, {}, Tensor()};
    std::vector<double> feats;
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 7; ++x)
        if (u(rng) < 0.4) {
          grid.sites.push_back({y, x});
          feats.push_back(0.1 + u(rng));
          feats.push_back(u(rng));
        }
    if (grid.sites.empty()) {
      grid.sites.push_back({0, 0});
      feats = {0.5, 0.5};
    }
    grid.features = Tensor({grid.sites.size(), 2}, feats);
    grids.push_back(std::move(grid));
  }
  net->batch = make_sparse_batch(grids, 3);
  net->conv1 = SparseConvLayer(1, 3, 2, 3, rng);
  net->conv2 = SparseConvLayer(3, 3, 3, 2, rng);
  // Perturb biases away from zero-activation kinks.
  for (double& v : net->conv1.bias.value.values()) v = 0.3 + 0.1 * v;
  net->r = random_tensor({2, 2}, rng);
  c.params = {&net->conv1.weight, &net->conv1.bias, &net->conv2.weight, &net->conv2.bias};
  c.keep_alive = net;
  c.loss = [n = net.get()](Tape& t) {
    Var x = t.constant(n->batch.features);
    x = relu(submanifold_conv(x, n->conv1, n->batch.rulebook));
    x = submanifold_conv(x, n->conv2, n->batch.rulebook);
    return contract(t, sparse_global_pool(x, n->batch.offsets), n->r);
  };
  return c;
}

}  // namespace evl::test
