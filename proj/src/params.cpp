#include "metalic/params.hpp"

namespace metalic {

TensorId ParamLayout::add(std::string name, int rows, int cols) {
  if (rows <= 0 || cols <= 0) throw InvalidConfig("tensor '" + name + "' must have positive shape");
  if (by_name_.count(name)) throw InvalidConfig("duplicate tensor name '" + name + "'");
  TensorSpec spec;
  spec.is_bias = name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
  spec.name = std::move(name);
  spec.rows = rows;
  spec.cols = cols;
  spec.offset = total_;
  total_ += spec.size();
  const TensorId id = tensors_.size();
  by_name_[spec.name] = id;
  tensors_.push_back(std::move(spec));
  return id;
}

TensorId ParamLayout::id(const std::string& name) const {
  const auto it = by_name_.find(name);
  if (it == by_name_.end()) throw InvalidConfig("unknown tensor '" + name + "'");
  return it->second;
}

bool ParamLayout::operator==(const ParamLayout& other) const {
  if (tensors_.size() != other.tensors_.size()) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    const auto& a = tensors_[i];
    const auto& b = other.tensors_[i];
    if (a.name != b.name || a.rows != b.rows || a.cols != b.cols) return false;
  }
  return true;
}

}  // namespace metalic
