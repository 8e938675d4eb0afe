#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace gdfed {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major tensor of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }

  std::span<const double> values() const { return data_; }
  std::span<double> values() { return data_; }
  const std::vector<double>& data() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  // 2-D access; caller guarantees rank 2.
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }

  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

struct ParamEntry {
  Tensor tensor;
  bool trainable = true;

  friend bool operator==(const ParamEntry&, const ParamEntry&) = default;
};

// Named tensors forming one model snapshot. Iteration is lexicographic by
// name, which fixes the order of every reduction and of serialization.
class ParameterSet {
 public:
  using Map = std::map<std::string, ParamEntry>;

  ParameterSet() = default;

  // Inserts or replaces an entry. Names must be non-empty.
  void set(const std::string& name, Tensor tensor, bool trainable);
  void set_trainable(const std::string& name, bool trainable);
  void erase(const std::string& name);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const ParamEntry& entry(const std::string& name) const;
  const Tensor& tensor(const std::string& name) const { return entry(name).tensor; }
  Tensor& mutable_tensor(const std::string& name);
  bool trainable(const std::string& name) const { return entry(name).trainable; }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::vector<std::string> names() const;

  // Elements summed over every entry, or only over trainable entries.
  std::size_t element_count() const;
  std::size_t trainable_element_count() const;

  ParameterSet trainable_subset() const;

  Map::const_iterator begin() const { return entries_.begin(); }
  Map::const_iterator end() const { return entries_.end(); }

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

 private:
  Map entries_;
};

// Throws StructuralError naming the first entry where names, shapes or
// trainable flags differ.
void require_shape_compatible(const ParameterSet& a, const ParameterSet& b);
bool shape_compatible(const ParameterSet& a, const ParameterSet& b);

// local - global over trainable entries only; frozen entries are omitted.
ParameterSet subtract_trainable(const ParameterSet& local, const ParameterSet& global);

// base with delta added to the named (trainable) entries.
ParameterSet add_delta(const ParameterSet& base, const ParameterSet& delta);

ParameterSet scale(const ParameterSet& set, double factor);

// Elementwise sum of weights[i] * sets[i]. Accumulates in list order.
ParameterSet weighted_sum(std::span<const ParameterSet> sets,
                          std::span<const double> weights);

// Euclidean norm over trainable elements.
double l2_norm(const ParameterSet& set);

// max|a - b| / max(max|b|, floor) across all elements of matching entries
// (infinity-norm relative error). Sets must carry the same names and shapes.
double max_relative_difference(const ParameterSet& a, const ParameterSet& b,
                               double floor = 1e-12);
double max_absolute_difference(const ParameterSet& a, const ParameterSet& b);

}  // namespace gdfed
