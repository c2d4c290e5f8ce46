#include "evl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace evl {

namespace {

void require_same_tape(const Var& a, const Var& b, const char* op) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument(std::string(op) + ": operands on different tapes");
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  require_same_tape(a, b, op);
  if (a.shape() != b.shape()) throw ShapeMismatch(op, a.shape(), b.shape());
}

void require_rank(const Var& a, std::size_t rank, const char* op) {
  if (a.shape().size() != rank)
    throw ShapeMismatch(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                        to_string(a.shape()));
}

// Shared shape for unary elementwise ops: y = f(x), dx += g * f'(x, y).
template <typename F, typename DF>
Var unary(Var a, F f, DF df) {
  Tape& tape = a.tape();
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t ia = a.index();
  return tape.record(std::move(y), [ia, df](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(ia);
    const Tensor& yv = t.value(self);
    Tensor& dx = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * df(xv[i], yv[i]);
  });
}

}  // namespace

NonScalarLoss::NonScalarLoss(const Shape& shape)
    : std::invalid_argument("backward requires a scalar loss, got shape " + to_string(shape)) {}

const Tensor& Var::value() const { return tape_->value(index_); }

Tensor Var::grad() const {
  if (tape_->has_grad(index_)) return tape_->grad(index_);
  return Tensor(value().shape());
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, nullptr, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, false, nullptr, &p});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, BackwardFn backward) {
  nodes_.push_back(Node{std::move(value), {}, false, std::move(backward), nullptr});
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad(std::size_t i) {
  Node& n = nodes_[i];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw std::invalid_argument("backward: loss recorded on another tape");
  if (loss.value().size() != 1) throw NonScalarLoss(loss.shape());
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  grad(loss.index())[0] = 1.0;
  for (std::size_t i = loss.index() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad) continue;
    if (n.param) {
      auto dst = n.param->grad.values();
      auto src = n.grad.values();
      for (std::size_t k = 0; k < src.size(); ++k) dst[k] += src[k];
    } else if (n.backward) {
      n.backward(*this, i);
    }
  }
}

// ---------------------------------------------------------------------------

Var add(Var a, Var b) {
  require_same_tape(a, b, "add");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const std::size_t ia = a.index(), ib = b.index();
  if (x.shape() == y.shape()) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
    return a.tape().record(std::move(out), [ia, ib](Tape& t, std::size_t self) {
      const Tensor& g = t.grad(self);
      Tensor& da = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      Tensor& db = t.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
    });
  }
  // row broadcast: {N, M} + {M}
  if (x.rank() == 2 && y.rank() == 1 && y.dim(0) == x.dim(1)) {
    const std::size_t n = x.dim(0), m = x.dim(1);
    Tensor out(x.shape());
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < m; ++c) out[r * m + c] = x[r * m + c] + y[c];
    return a.tape().record(std::move(out), [ia, ib, n, m](Tape& t, std::size_t self) {
      const Tensor& g = t.grad(self);
      Tensor& da = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      Tensor& db = t.grad(ib);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < m; ++c) db[c] += g[r * m + c];
    });
  }
  throw ShapeMismatch("add", x.shape(), y.shape());
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  const std::size_t ia = a.index(), ib = b.index();
  return a.tape().record(std::move(out), [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& da = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    Tensor& db = t.grad(ib);
    for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  const std::size_t ia = a.index(), ib = b.index();
  return a.tape().record(std::move(out), [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(ia);
    const Tensor& yv = t.value(ib);
    Tensor& da = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * yv[i];
    Tensor& db = t.grad(ib);
    for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * xv[i];
  });
}

Var scale(Var a, double factor) {
  return unary(a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double v) {
  return unary(a, [v](double x) { return x + v; }, [](double, double) { return 1.0; });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b, "matmul");
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.shape()[1] != b.shape()[0]) throw ShapeMismatch("matmul", a.shape(), b.shape());
  Tensor out = matmul(a.value(), b.value());
  const std::size_t ia = a.index(), ib = b.index();
  return a.tape().record(std::move(out), [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(ib);
    const std::size_t n = x.dim(0), k = x.dim(1), m = y.dim(1);
    Tensor& dx = t.grad(ia);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        double acc = 0.0;
        const double* gr = g.data() + i * m;
        const double* yr = y.data() + p * m;
        for (std::size_t j = 0; j < m; ++j) acc += gr[j] * yr[j];
        dx[i * k + p] += acc;
      }
    Tensor& dy = t.grad(ib);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double xv = x[i * k + p];
        if (xv == 0.0) continue;
        double* dyr = dy.data() + p * m;
        const double* gr = g.data() + i * m;
        for (std::size_t j = 0; j < m; ++j) dyr[j] += xv * gr[j];
      }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) throw ShapeMismatch("matmul", a.shape(), b.shape());
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* br = b.data() + p * m;
      double* orow = out.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * br[j];
    }
  return out;
}

Var transpose(Var a) {
  require_rank(a, 2, "transpose");
  const Tensor& x = a.value();
  const std::size_t n = x.dim(0), m = x.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = x[i * m + j];
  const std::size_t ia = a.index();
  return a.tape().record(std::move(out), [ia, n, m](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& dx = t.grad(ia);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) dx[i * m + j] += g[j * n + i];
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t ia = a.index();
  return a.tape().record(Tensor::scalar(s), [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (double& d : t.grad(ia).values()) d += g;
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw ShapeMismatch("mean of empty tensor");
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t ia = a.index();
  return a.tape().record(Tensor::scalar(s / n), [ia, n](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0] / n;
    for (double& d : t.grad(ia).values()) d += g;
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.index();
  return a.tape().record(std::move(out), [ia](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& dx = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
  });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
  const Shape& first = parts[0].shape();
  if (first.empty()) throw ShapeMismatch("concat: scalars cannot be concatenated");
  Shape out_shape = first;
  out_shape[0] = 0;
  std::vector<std::size_t> indices;
  for (const Var& p : parts) {
    require_same_tape(parts[0], p, "concat");
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(s.begin() + 1, s.end(), first.begin() + 1))
      throw ShapeMismatch("concat", first, s);
    out_shape[0] += s[0];
    indices.push_back(p.index());
  }
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    auto v = p.value().values();
    std::copy(v.begin(), v.end(), out.data() + offset);
    offset += v.size();
  }
  return parts[0].tape().record(std::move(out), [indices](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    std::size_t off = 0;
    for (std::size_t idx : indices) {
      Tensor& d = t.grad(idx);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[off + i];
      off += d.size();
    }
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (s.empty() || begin > end || end > s[0])
    throw ShapeMismatch("slice_rows [" + std::to_string(begin) + "," + std::to_string(end) + ") of " + to_string(s));
  Shape out_shape = s;
  out_shape[0] = end - begin;
  const std::size_t row = s[0] ? a.value().size() / s[0] : 0;
  Tensor out(out_shape);
  std::copy(a.value().data() + begin * row, a.value().data() + end * row, out.data());
  const std::size_t ia = a.index();
  return a.tape().record(std::move(out), [ia, begin, row](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& d = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) d[begin * row + i] += g[i];
  });
}

Var select_columns(Var a, std::span<const std::size_t> columns) {
  require_rank(a, 2, "select_columns");
  const Tensor& x = a.value();
  const std::size_t n = x.dim(0), m = x.dim(1);
  std::vector<std::size_t> cols(columns.begin(), columns.end());
  for (std::size_t c : cols)
    if (c >= m) throw ShapeMismatch("select_columns: column " + std::to_string(c) + " of " + to_string(x.shape()));
  const std::size_t k = cols.size();
  Tensor out({n, k});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = x[r * m + cols[j]];
  const std::size_t ia = a.index();
  return a.tape().record(std::move(out), [ia, cols, n, m](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& d = t.grad(ia);
    const std::size_t k = cols.size();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < k; ++j) d[r * m + cols[j]] += g[r * k + j];
  });
}

Var normalize_rows(Var a) {
  require_rank(a, 2, "normalize_rows");
  const Tensor& x = a.value();
  const std::size_t n = x.dim(0), m = x.dim(1);
  Tensor out(x.shape());
  std::vector<double> norms(n);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < m; ++c) s += x[r * m + c] * x[r * m + c];
    norms[r] = std::max(std::sqrt(s), 1e-12);
    for (std::size_t c = 0; c < m; ++c) out[r * m + c] = x[r * m + c] / norms[r];
  }
  const std::size_t ia = a.index();
  return a.tape().record(std::move(out), [ia, norms, n, m](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& d = t.grad(ia);
    for (std::size_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < m; ++c) dot += y[r * m + c] * g[r * m + c];
      for (std::size_t c = 0; c < m; ++c) d[r * m + c] += (g[r * m + c] - y[r * m + c] * dot) / norms[r];
    }
  });
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeMismatch("softmax_rows expects a matrix, got " + to_string(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor p(logits.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = logits.data() + r * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += (p[r * k + c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < k; ++c) p[r * k + c] /= z;
  }
  return p;
}

namespace {

// log-sum-exp per row, stable.
std::vector<double> row_lse(const Tensor& logits) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<double> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = logits.data() + r * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(row[c] - mx);
    out[r] = mx + std::log(z);
  }
  return out;
}

}  // namespace

Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const Tensor& x = logits.value();
  const std::size_t n = x.dim(0), k = x.dim(1);
  if (labels.size() != n || n == 0)
    throw ShapeMismatch("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                        to_string(x.shape()));
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  for (std::size_t l : lab)
    if (l >= k) throw ShapeMismatch("softmax_cross_entropy: label " + std::to_string(l) + " >= " + std::to_string(k));
  const auto lse = row_lse(x);
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) loss += lse[r] - x[r * k + lab[r]];
  const std::size_t ia = logits.index();
  return logits.tape().record(Tensor::scalar(loss / static_cast<double>(n)), [ia, lab, n, k](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0] / static_cast<double>(n);
    const Tensor p = softmax_rows(t.value(ia));
    Tensor& d = t.grad(ia);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < k; ++c) d[r * k + c] += g * (p[r * k + c] - (c == lab[r] ? 1.0 : 0.0));
  });
}

Var soft_cross_entropy(Var logits, const Tensor& targets) {
  require_rank(logits, 2, "soft_cross_entropy");
  const Tensor& x = logits.value();
  if (targets.shape() != x.shape()) throw ShapeMismatch("soft_cross_entropy", x.shape(), targets.shape());
  const std::size_t n = x.dim(0), k = x.dim(1);
  if (n == 0) throw ShapeMismatch("soft_cross_entropy on empty batch");
  const auto lse = row_lse(x);
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < k; ++c) loss -= targets[r * k + c] * (x[r * k + c] - lse[r]);
  const std::size_t ia = logits.index();
  return logits.tape().record(Tensor::scalar(loss / static_cast<double>(n)),
                              [ia, targets, n, k](Tape& t, std::size_t self) {
                                const double g = t.grad(self)[0] / static_cast<double>(n);
                                const Tensor p = softmax_rows(t.value(ia));
                                Tensor& d = t.grad(ia);
                                for (std::size_t r = 0; r < n; ++r) {
                                  double mass = 0.0;
                                  for (std::size_t c = 0; c < k; ++c) mass += targets[r * k + c];
                                  for (std::size_t c = 0; c < k; ++c)
                                    d[r * k + c] += g * (p[r * k + c] * mass - targets[r * k + c]);
                                }
                              });
}

Var mse(Var a, Var b) { return mean(square(sub(a, b))); }

Var conv2d_dense(Var input, Var weight, Var bias, std::size_t stride, std::size_t pad) {
  require_same_tape(input, weight, "conv2d_dense");
  require_same_tape(input, bias, "conv2d_dense");
  require_rank(input, 4, "conv2d_dense");
  require_rank(weight, 4, "conv2d_dense");
  require_rank(bias, 1, "conv2d_dense");
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  if (ws[1] != is[1] || ws[2] != ws[3]) throw ShapeMismatch("conv2d_dense", is, ws);
  if (bias.shape()[0] != ws[0]) throw ShapeMismatch("conv2d_dense bias", ws, bias.shape());
  if (stride == 0) throw std::invalid_argument("conv2d_dense: stride must be >= 1");
  const std::size_t n = is[0], cin = is[1], h = is[2], w = is[3];
  const std::size_t cout = ws[0], k = ws[2];
  if (h + 2 * pad < k || w + 2 * pad < k) throw ShapeMismatch("conv2d_dense: kernel larger than padded input", is, ws);
  const std::size_t ho = (h + 2 * pad - k) / stride + 1, wo = (w + 2 * pad - k) / stride + 1;

  const Tensor& x = input.value();
  const Tensor& wt = weight.value();
  const Tensor& b = bias.value();
  Tensor out({n, cout, ho, wo});
  // Visits every (output, input, tap) triple; `fn` receives flat indices.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t oy = 0; oy < ho; ++oy)
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::size_t oi = ((s * cout + co) * ho + oy) * wo + ox;
            for (std::size_t ci = 0; ci < cin; ++ci)
              for (std::size_t ky = 0; ky < k; ++ky) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t kx = 0; kx < k; ++kx) {
                  const std::ptrdiff_t ix =
                      static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                  const std::size_t ii = ((s * cin + ci) * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix);
                  const std::size_t wi = ((co * cin + ci) * k + ky) * k + kx;
                  fn(oi, ii, wi);
                }
              }
          }
  };
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t p = 0; p < ho * wo; ++p) out[(s * cout + co) * ho * wo + p] = b[co];
  for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t wi) { out[oi] += wt[wi] * x[ii]; });

  const std::size_t ix_in = input.index(), ix_w = weight.index(), ix_b = bias.index();
  return input.tape().record(std::move(out), [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(ix_in);
    const Tensor& wv = t.value(ix_w);
    Tensor& dx = t.grad(ix_in);
    Tensor& dw = t.grad(ix_w);
    Tensor& db = t.grad(ix_b);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t p = 0; p < ho * wo; ++p) db[co] += g[(s * cout + co) * ho * wo + p];
    for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t wi) {
      dx[ii] += wv[wi] * g[oi];
      dw[wi] += xv[ii] * g[oi];
    });
  });
}

Var max_pool2d(Var input, std::size_t window, std::size_t stride) {
  require_rank(input, 4, "max_pool2d");
  if (window == 0 || stride == 0) throw std::invalid_argument("max_pool2d: window and stride must be >= 1");
  const Shape& is = input.shape();
  const std::size_t n = is[0], c = is[1], h = is[2], w = is[3];
  if (h < window || w < window) throw ShapeMismatch("max_pool2d: window larger than input " + to_string(is));
  const std::size_t ho = (h - window) / stride + 1, wo = (w - window) / stride + 1;
  const Tensor& x = input.value();
  Tensor out({n, c, ho, wo});
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t plane = 0; plane < n * c; ++plane)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_i = 0;
        for (std::size_t ky = 0; ky < window; ++ky)
          for (std::size_t kx = 0; kx < window; ++kx) {
            const std::size_t ii = (plane * h + oy * stride + ky) * w + ox * stride + kx;
            if (x[ii] > best) {
              best = x[ii];
              best_i = ii;
            }
          }
        const std::size_t oi = (plane * ho + oy) * wo + ox;
        out[oi] = best;
        argmax[oi] = best_i;
      }
  const std::size_t ia = input.index();
  return input.tape().record(std::move(out), [ia, argmax](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& d = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) d[argmax[i]] += g[i];
  });
}

}  // namespace evl
