#include "evl/optim.hpp"

#include <cmath>
#include <map>

#include "evl/binary_io.hpp"

namespace evl {

void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

void sgd_step(std::span<Parameter* const> params, double lr) {
  for (Parameter* p : params) {
    auto v = p->value.values();
    auto g = p->grad.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
  }
}

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (Parameter* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Adam::step() {
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto value = params_[k]->value.values();
    auto grad = params_[k]->grad.values();
    auto m = m_[k].values();
    auto v = v_[k].values();
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * grad[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

namespace {
constexpr std::string_view kCheckpointMagic = "EVCK";
}

std::vector<std::uint8_t> save_parameters(std::span<const Parameter* const> params) {
  ByteWriter out;
  out.put_bytes(kCheckpointMagic);
  for (const Parameter* p : params) {
    out.put_u32(p->id);
    out.put_u32(static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t e : p->value.shape()) out.put_u32(static_cast<std::uint32_t>(e));
    for (double v : p->value.values()) out.put_f64(v);
  }
  return out.take();
}

void load_parameters(std::span<const std::uint8_t> bytes, std::span<Parameter* const> params) {
  ByteReader in(bytes);
  try {
    if (in.get_bytes(kCheckpointMagic.size()) != kCheckpointMagic) throw CheckpointError("checkpoint: bad magic");
    std::map<std::uint32_t, Tensor> stored;
    while (in.remaining() > 0) {
      const std::uint32_t id = in.get_u32();
      const std::uint32_t rank = in.get_u32();
      if (rank > 8) throw CheckpointError("checkpoint: implausible rank " + std::to_string(rank));
      Shape shape(rank);
      for (auto& e : shape) e = in.get_u32();
      std::vector<double> values(shape_size(shape));
      for (auto& v : values) v = in.get_f64();
      if (!stored.emplace(id, Tensor(shape, std::move(values))).second)
        throw CheckpointError("checkpoint: duplicate parameter id " + std::to_string(id));
    }
    for (Parameter* p : params) {
      auto it = stored.find(p->id);
      if (it == stored.end()) throw CheckpointError("checkpoint: missing parameter id " + std::to_string(p->id));
      if (it->second.shape() != p->value.shape())
        throw CheckpointError("checkpoint: parameter " + std::to_string(p->id) + " has shape " +
                              to_string(it->second.shape()) + ", expected " + to_string(p->value.shape()));
      p->value = it->second;
    }
  } catch (const TruncatedInput& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, std::span<const Parameter* const> params) {
  write_file(path, save_parameters(params));
}

void load_checkpoint(const std::filesystem::path& path, std::span<Parameter* const> params) {
  load_parameters(read_file(path), params);
}

}  // namespace evl
