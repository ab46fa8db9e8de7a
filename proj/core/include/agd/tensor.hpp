#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace agd {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. Value type; copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  /// Rank-1 tensor holding `values`.
  static Tensor from_vector(std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const double> values() const noexcept { return data_; }
  std::span<double> values() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  /// Element of a rank-3 (channels, rows, cols) tensor.
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }

  /// Same data, new shape with the same element count.
  Tensor reshaped(Shape shape) const;
  /// Rank-1 view of the data (copy).
  Tensor flattened() const;

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& a);
Tensor& operator+=(Tensor& a, const Tensor& b);

double dot(const Tensor& a, const Tensor& b);
double l2_norm(const Tensor& a);
double l1_norm(const Tensor& a);
double l2_distance(const Tensor& a, const Tensor& b);
double linf_distance(const Tensor& a, const Tensor& b);

/// Clamp every element into [lo, hi].
Tensor clipped(Tensor a, double lo = 0.0, double hi = 1.0);

/// Result of an angular comparison. `degenerate` is set when either vector
/// has (near) zero norm, in which case `value` is 0.
struct Similarity {
  double value = 0.0;
  bool degenerate = false;
};

inline constexpr double kZeroNormTolerance = 1e-12;

/// Cosine of the angle between u and v, clamped to [-1, 1].
Similarity cosine_similarity(const Tensor& u, const Tensor& v);

/// Gradient of cosine_similarity(u, v) with respect to u. Zero when degenerate.
Tensor cosine_similarity_grad(const Tensor& u, const Tensor& v);

}  // namespace agd
