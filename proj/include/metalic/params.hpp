#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "metalic/errors.hpp"
#include "metalic/tensor.hpp"

namespace metalic {

struct TensorSpec {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;
  bool is_bias = false;

  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

using TensorId = std::size_t;

/// Named 2-D tensors packed into one flat buffer. Tensors whose name ends in
/// ".bias" are flagged as biases (excluded from weight decay).
class ParamLayout {
 public:
  TensorId add(std::string name, int rows, int cols);

  const std::vector<TensorSpec>& tensors() const { return tensors_; }
  const TensorSpec& spec(TensorId id) const { return tensors_.at(id); }
  TensorId id(const std::string& name) const;
  bool contains(const std::string& name) const { return by_name_.count(name) > 0; }
  std::size_t total_size() const { return total_; }

  bool operator==(const ParamLayout& other) const;

 private:
  std::vector<TensorSpec> tensors_;
  std::unordered_map<std::string, TensorId> by_name_;
  std::size_t total_ = 0;
};

/// A flat parameter (or gradient / optimizer moment) buffer over a layout.
/// The buffer is SIMD-aligned: Eigen picks its summation order by address,
/// so an unaligned buffer would make gradients depend on where it landed.
template <class T>
class ParamSet {
 public:
  ParamSet() = default;
  explicit ParamSet(std::shared_ptr<const ParamLayout> layout)
      : layout_(std::move(layout)), data_(layout_->total_size(), T(0)) {}

  const ParamLayout& layout() const { return *layout_; }
  const std::shared_ptr<const ParamLayout>& layout_ptr() const { return layout_; }

  MatMap<T> mat(TensorId id) {
    const auto& s = layout_->spec(id);
    return MatMap<T>(data_.data() + s.offset, s.rows, s.cols);
  }
  ConstMatMap<T> mat(TensorId id) const {
    const auto& s = layout_->spec(id);
    return ConstMatMap<T>(data_.data() + s.offset, s.rows, s.cols);
  }
  std::span<T> tensor(TensorId id) { return {data_.data() + layout_->spec(id).offset, layout_->spec(id).size()}; }
  std::span<const T> tensor(TensorId id) const {
    return {data_.data() + layout_->spec(id).offset, layout_->spec(id).size()};
  }

  std::span<T> flat() { return data_; }
  std::span<const T> flat() const { return data_; }
  std::size_t size() const { return data_.size(); }

  void set_zero() { std::fill(data_.begin(), data_.end(), T(0)); }
  ParamSet zeros_like() const { return ParamSet(layout_); }

  template <class U>
  ParamSet<U> cast() const {
    ParamSet<U> out(layout_);
    auto dst = out.flat();
    for (std::size_t i = 0; i < data_.size(); ++i) dst[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool all_finite() const;
  bool operator==(const ParamSet& other) const { return *layout_ == *other.layout_ && data_ == other.data_; }

 private:
  std::shared_ptr<const ParamLayout> layout_;
  std::vector<T, Eigen::aligned_allocator<T>> data_;
};

template <class T>
bool ParamSet<T>::all_finite() const {
  for (T v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

/// L2 norm over the whole buffer, accumulated in double.
template <class T>
double global_norm(const ParamSet<T>& p) {
  double ss = 0.0;
  for (T v : p.flat()) ss += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(ss);
}

}  // namespace metalic
