#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "msan/rng.hpp"
#include "msan/tensor.hpp"

namespace msan {

// Named trainable tensors with deterministic (sorted) iteration order.
// Serializes to a flat binary checkpoint of (name, shape, values) triples,
// value-exact at 64-bit, preceded by an opaque metadata string.
class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(std::uint64_t rng_seed) : rng_seed_(rng_seed) {}

  std::uint64_t rng_seed() const { return rng_seed_; }

  Tensor create(const std::string& name, Shape shape,
                std::vector<double> values) {
    if (params_.count(name)) fail("contract", "duplicate parameter " + name);
    Tensor t = Tensor::from(std::move(shape), std::move(values), true);
    t.node()->ensure_grad();
    params_.emplace(name, t);
    return t;
  }

  Tensor create_zeros(const std::string& name, Shape shape) {
    std::vector<double> v(shape_numel(shape), 0.0);
    return create(name, std::move(shape), std::move(v));
  }

  // uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
  Tensor create_uniform(const std::string& name, Shape shape,
                        std::size_t fan_in, Rng& rng) {
#ifndef MSAN_INIT_GAIN
#define MSAN_INIT_GAIN 1.0
#endif
    const double bound = MSAN_INIT_GAIN / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.uniform(-bound, bound);
    return create(name, std::move(shape), std::move(v));
  }

  bool has(const std::string& name) const { return params_.count(name) > 0; }

  Tensor get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) fail("contract", "unknown parameter " + name);
    return it->second;
  }

  const std::map<std::string, Tensor>& all() const { return params_; }

  std::size_t count() const { return params_.size(); }

  std::size_t value_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.size();
    return n;
  }

  void zero_grads() {
    for (auto& [name, t] : params_) {
      t.node()->ensure_grad();
      std::fill(t.node()->grad.begin(), t.node()->grad.end(), 0.0);
    }
  }

  const std::string& metadata() const { return metadata_; }
  void set_metadata(std::string meta) { metadata_ = std::move(meta); }

  // Deep copy; the clone's tensors are fresh leaves with zeroed grads.
  ParamStore clone() const {
    ParamStore out(rng_seed_);
    out.metadata_ = metadata_;
    for (const auto& [name, t] : params_) {
      out.create(name, t.shape(), t.values());
    }
    return out;
  }

  void copy_values_from(const ParamStore& other) {
    for (auto& [name, t] : params_) {
      Tensor src = other.get(name);
      if (src.shape() != t.shape())
        fail("compatibility", "parameter shape mismatch for " + name);
      t.values() = src.values();
    }
  }

  std::vector<std::uint8_t> to_bytes() const {
    std::vector<std::uint8_t> out;
    auto put_u64 = [&out](std::uint64_t v) {
      for (int i = 0; i < 8; ++i) out.push_back((v >> (8 * i)) & 0xff);
    };
    out.insert(out.end(), kMagic, kMagic + 8);
    put_u64(metadata_.size());
    out.insert(out.end(), metadata_.begin(), metadata_.end());
    put_u64(rng_seed_);
    put_u64(params_.size());
    for (const auto& [name, t] : params_) {
      put_u64(name.size());
      out.insert(out.end(), name.begin(), name.end());
      put_u64(t.ndim());
      for (std::size_t d : t.shape()) put_u64(d);
      const auto& vals = t.values();
      const std::size_t byte_count = vals.size() * sizeof(double);
      const std::size_t off = out.size();
      out.resize(off + byte_count);
      std::memcpy(out.data() + off, vals.data(), byte_count);
    }
    return out;
  }

  static ParamStore from_bytes(const std::vector<std::uint8_t>& bytes) {
    std::size_t pos = 0;
    auto need = [&](std::size_t n) {
      if (pos + n > bytes.size()) fail("validation", "truncated checkpoint");
    };
    auto get_u64 = [&]() {
      need(8);
      std::uint64_t v = 0;
      for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
      pos += 8;
      return v;
    };
    need(8);
    if (std::memcmp(bytes.data(), kMagic, 8) != 0)
      fail("validation", "bad checkpoint magic");
    pos += 8;
    const std::uint64_t meta_len = get_u64();
    need(meta_len);
    std::string meta(bytes.begin() + pos, bytes.begin() + pos + meta_len);
    pos += meta_len;
    ParamStore out(get_u64());
    out.metadata_ = std::move(meta);
    const std::uint64_t count = get_u64();
    for (std::uint64_t i = 0; i < count; ++i) {
      const std::uint64_t name_len = get_u64();
      need(name_len);
      std::string name(bytes.begin() + pos, bytes.begin() + pos + name_len);
      pos += name_len;
      const std::uint64_t ndim = get_u64();
      Shape shape;
      for (std::uint64_t k = 0; k < ndim; ++k) shape.push_back(get_u64());
      const std::size_t n = shape_numel(shape);
      need(n * sizeof(double));
      std::vector<double> vals(n);
      std::memcpy(vals.data(), bytes.data() + pos, n * sizeof(double));
      pos += n * sizeof(double);
      out.create(name, std::move(shape), std::move(vals));
    }
    return out;
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail("io", "cannot write checkpoint " + path);
    auto bytes = to_bytes();
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) fail("io", "failed writing checkpoint " + path);
  }

  static ParamStore load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("io", "cannot read checkpoint " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return from_bytes(bytes);
  }

 private:
  static constexpr const char kMagic[9] = "MSANCKP1";

  std::map<std::string, Tensor> params_;
  std::string metadata_;
  std::uint64_t rng_seed_ = 0;
};

}  // namespace msan
