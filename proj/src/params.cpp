#include "gdfed/params.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "gdfed/error.hpp"

namespace gdfed {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d == 0) throw ArgumentError("tensor dimension must be positive: " + shape_string(shape_));
  }
  data_.assign(element_count(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_) {
    if (d == 0) throw ArgumentError("tensor dimension must be positive: " + shape_string(shape_));
  }
  if (element_count(shape_) != data_.size()) {
    throw StructuralError("tensor of shape " + shape_string(shape_) + " given " +
                          std::to_string(data_.size()) + " values");
  }
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

namespace {

void require_finite(const std::string& name, const Tensor& t) {
  if (!t.all_finite()) throw ArgumentError("non-finite value in entry '" + name + "'");
}

}  // namespace

void ParameterSet::set(const std::string& name, Tensor tensor, bool trainable) {
  if (name.empty()) throw ArgumentError("parameter name must be non-empty");
  entries_[name] = ParamEntry{std::move(tensor), trainable};
}

void ParameterSet::set_trainable(const std::string& name, bool trainable) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw StructuralError("unknown parameter '" + name + "'");
  it->second.trainable = trainable;
}

void ParameterSet::erase(const std::string& name) { entries_.erase(name); }

const ParamEntry& ParameterSet::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw StructuralError("unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParameterSet::mutable_tensor(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw StructuralError("unknown parameter '" + name + "'");
  return it->second.tensor;
}

std::vector<std::string> ParameterSet::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

std::size_t ParameterSet::element_count() const {
  std::size_t n = 0;
  for (const auto& [_, e] : entries_) n += e.tensor.size();
  return n;
}

std::size_t ParameterSet::trainable_element_count() const {
  std::size_t n = 0;
  for (const auto& [_, e] : entries_) {
    if (e.trainable) n += e.tensor.size();
  }
  return n;
}

ParameterSet ParameterSet::trainable_subset() const {
  ParameterSet out;
  for (const auto& [name, e] : entries_) {
    if (e.trainable) out.entries_.emplace(name, e);
  }
  return out;
}

void require_shape_compatible(const ParameterSet& a, const ParameterSet& b) {
  auto ia = a.begin();
  auto ib = b.begin();
  for (; ia != a.end() && ib != b.end(); ++ia, ++ib) {
    if (ia->first != ib->first) {
      throw StructuralError("entry name mismatch at '" + std::min(ia->first, ib->first) + "'");
    }
    if (ia->second.tensor.shape() != ib->second.tensor.shape()) {
      throw StructuralError("shape mismatch at '" + ia->first + "': " +
                            shape_string(ia->second.tensor.shape()) + " vs " +
                            shape_string(ib->second.tensor.shape()));
    }
    if (ia->second.trainable != ib->second.trainable) {
      throw StructuralError("trainable flag mismatch at '" + ia->first + "'");
    }
  }
  if (ia != a.end()) throw StructuralError("entry '" + ia->first + "' missing from second set");
  if (ib != b.end()) throw StructuralError("entry '" + ib->first + "' missing from first set");
}

bool shape_compatible(const ParameterSet& a, const ParameterSet& b) {
  try {
    require_shape_compatible(a, b);
    return true;
  } catch (const StructuralError&) {
    return false;
  }
}

ParameterSet subtract_trainable(const ParameterSet& local, const ParameterSet& global) {
  require_shape_compatible(local, global);
  ParameterSet out;
  for (const auto& [name, e] : local) {
    if (!e.trainable) continue;
    const auto& g = global.tensor(name);
    Tensor d(e.tensor.shape());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = e.tensor[i] - g[i];
    require_finite(name, d);
    out.set(name, std::move(d), true);
  }
  return out;
}

ParameterSet add_delta(const ParameterSet& base, const ParameterSet& delta) {
  ParameterSet out = base;
  for (const auto& [name, d] : delta) {
    if (!base.contains(name)) throw StructuralError("delta entry '" + name + "' not in base");
    const auto& b = base.entry(name);
    if (!b.trainable) throw StructuralError("delta targets frozen entry '" + name + "'");
    if (b.tensor.shape() != d.tensor.shape()) {
      throw StructuralError("shape mismatch at '" + name + "': " +
                            shape_string(b.tensor.shape()) + " vs " +
                            shape_string(d.tensor.shape()));
    }
    Tensor& t = out.mutable_tensor(name);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += d.tensor[i];
    require_finite(name, t);
  }
  return out;
}

ParameterSet scale(const ParameterSet& set, double factor) {
  if (!std::isfinite(factor)) throw ArgumentError("scale factor must be finite");
  ParameterSet out = set;
  for (const auto& name : set.names()) {
    Tensor& t = out.mutable_tensor(name);
    for (auto& v : t.values()) v *= factor;
    require_finite(name, t);
  }
  return out;
}

ParameterSet weighted_sum(std::span<const ParameterSet> sets, std::span<const double> weights) {
  if (sets.empty()) throw ArgumentError("weighted_sum of an empty list");
  if (sets.size() != weights.size()) {
    throw ArgumentError("weighted_sum: " + std::to_string(sets.size()) + " sets but " +
                        std::to_string(weights.size()) + " weights");
  }
  for (double w : weights) {
    if (!std::isfinite(w)) throw ArgumentError("weighted_sum: non-finite weight");
  }
  for (std::size_t k = 1; k < sets.size(); ++k) require_shape_compatible(sets[0], sets[k]);

  ParameterSet out = sets[0];
  for (const auto& name : out.names()) {
    Tensor& acc = out.mutable_tensor(name);
    for (auto& v : acc.values()) v *= weights[0];
    for (std::size_t k = 1; k < sets.size(); ++k) {
      const auto& src = sets[k].tensor(name);
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += weights[k] * src[i];
    }
    require_finite(name, acc);
  }
  return out;
}

double l2_norm(const ParameterSet& set) {
  double sum = 0.0;
  for (const auto& [_, e] : set) {
    if (!e.trainable) continue;
    for (double v : e.tensor.values()) sum += v * v;
  }
  return std::sqrt(sum);
}

double max_absolute_difference(const ParameterSet& a, const ParameterSet& b) {
  if (a.names() != b.names()) throw StructuralError("entry names differ");
  double worst = 0.0;
  for (const auto& [name, e] : a) {
    const auto& other = b.tensor(name);
    if (other.shape() != e.tensor.shape()) throw StructuralError("shape mismatch at '" + name + "'");
    for (std::size_t i = 0; i < other.size(); ++i) {
      worst = std::max(worst, std::abs(e.tensor[i] - other[i]));
    }
  }
  return worst;
}

double max_relative_difference(const ParameterSet& a, const ParameterSet& b, double floor) {
  double diff = max_absolute_difference(a, b);
  double mag = 0.0;
  for (const auto& [_, e] : b) {
    for (double v : e.tensor.values()) mag = std::max(mag, std::abs(v));
  }
  return diff / std::max(mag, floor);
}

}  // namespace gdfed
