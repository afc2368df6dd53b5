#pragma once

#include "relnet/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace relnet {

/// One named learnable array. `value` is stored as a 2-D matrix; `shape`
/// keeps the logical dimensions (e.g. {out, in, k, k} for a convolution).
template <typename Scalar>
struct Param {
  std::string name;
  std::vector<int> shape;
  RowMatrix<Scalar> value;
};

template <typename Scalar>
class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(std::string arch_hash) : arch_hash_(std::move(arch_hash)) {}

  /// Registers a zero-initialised parameter and returns its index.
  std::size_t add(const std::string& name, std::vector<int> shape, Eigen::Index rows, Eigen::Index cols);

  [[nodiscard]] std::size_t size() const { return params_.size(); }
  [[nodiscard]] std::size_t index_of(const std::string& name) const;
  [[nodiscard]] bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Param<Scalar>& operator[](std::size_t i) { return params_[i]; }
  const Param<Scalar>& operator[](std::size_t i) const { return params_[i]; }
  RowMatrix<Scalar>& value(std::size_t i) { return params_[i].value; }
  const RowMatrix<Scalar>& value(std::size_t i) const { return params_[i].value; }

  [[nodiscard]] auto begin() { return params_.begin(); }
  [[nodiscard]] auto end() { return params_.end(); }
  [[nodiscard]] auto begin() const { return params_.begin(); }
  [[nodiscard]] auto end() const { return params_.end(); }

  [[nodiscard]] const std::string& arch_hash() const { return arch_hash_; }

  /// Total number of scalars.
  [[nodiscard]] std::size_t count() const;
  [[nodiscard]] bool all_finite() const;

  /// Same layout, all values zero.
  [[nodiscard]] ParamStore zeros_like() const;
  void set_zero();
  /// this += scale * other (layouts must match).
  void add_scaled(const ParamStore& other, Scalar scale);

  /// Flat access over all scalars in registration order.
  [[nodiscard]] Scalar flat(std::size_t k) const;
  Scalar& flat(std::size_t k);

  template <typename Other>
  [[nodiscard]] ParamStore<Other> cast() const {
    ParamStore<Other> out(arch_hash_);
    for (const auto& p : params_) {
      auto idx = out.add(p.name, p.shape, p.value.rows(), p.value.cols());
      out.value(idx) = p.value.template cast<Other>();
    }
    return out;
  }

  bool operator==(const ParamStore& other) const;

 private:
  std::string arch_hash_;
  std::vector<Param<Scalar>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// 64-bit FNV-1a, used to fingerprint architecture descriptions.
std::uint64_t fnv1a(const std::string& text);
std::string hex64(std::uint64_t v);

/// Writes `dir/manifest.txt` (name, shape, dtype, byte offset per line) and
/// `dir/params.bin` (raw little-endian float32).
void save_checkpoint(const ParamStore<float>& params, const std::filesystem::path& dir, const std::string& kind);

/// Reads a checkpoint written by save_checkpoint. `kind` must match.
ParamStore<float> load_checkpoint(const std::filesystem::path& dir, const std::string& kind);

/// Adam over a ParamStore; state is reset by constructing a new instance.
class Adam {
 public:
  struct Options {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  explicit Adam(const ParamStore<float>& like, Options opts);
  void step(ParamStore<float>& params, const ParamStore<float>& grads);
  [[nodiscard]] long steps() const { return t_; }

 private:
  Options opts_;
  ParamStore<float> m_;
  ParamStore<float> v_;
  long t_ = 0;
};

}  // namespace relnet
