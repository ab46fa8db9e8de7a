#include "agd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "agd/common.hpp"

namespace agd {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

void check_shape(const Shape& shape) {
  require(!shape.empty(), ErrorKind::Config, "tensor shape must have rank >= 1");
  for (auto extent : shape) {
    require(extent > 0, ErrorKind::Config,
            "tensor extents must be positive, got " + shape_string(shape));
  }
}

void check_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::Config, std::string(op) + ": shape mismatch " +
                                shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(element_count(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (element_count(shape_) != data_.size()) {
    fail(ErrorKind::Config, "tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::from_vector(std::vector<double> values) {
  Shape shape{values.size()};
  return Tensor(std::move(shape), std::move(values));
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

Tensor Tensor::flattened() const { return Tensor(Shape{data_.size()}, data_); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  out += b;
  return out;
}

Tensor& operator+=(Tensor& a, const Tensor& b) {
  check_same(a, b, "add");
  auto dst = a.values();
  auto src = b.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  return a;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  check_same(a, b, "subtract");
  Tensor out = a;
  auto dst = out.values();
  auto src = b.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= src[i];
  return out;
}

Tensor operator*(double s, const Tensor& a) {
  Tensor out = a;
  for (auto& v : out.values()) v *= s;
  return out;
}

double dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) check_same(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double l2_norm(const Tensor& a) { return std::sqrt(dot(a, a)); }

double l1_norm(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += std::abs(v);
  return acc;
}

double l2_distance(const Tensor& a, const Tensor& b) { return l2_norm(a - b); }

double linf_distance(const Tensor& a, const Tensor& b) {
  check_same(a, b, "linf_distance");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

Tensor clipped(Tensor a, double lo, double hi) {
  for (auto& v : a.values()) v = std::clamp(v, lo, hi);
  return a;
}

Similarity cosine_similarity(const Tensor& u, const Tensor& v) {
  if (u.size() != v.size()) check_same(u, v, "cosine_similarity");
  const double nu = l2_norm(u);
  const double nv = l2_norm(v);
  if (nu < kZeroNormTolerance || nv < kZeroNormTolerance) return {0.0, true};
  return {std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0), false};
}

Tensor cosine_similarity_grad(const Tensor& u, const Tensor& v) {
  const double nu = l2_norm(u);
  const double nv = l2_norm(v);
  Tensor grad(u.shape());
  if (nu < kZeroNormTolerance || nv < kZeroNormTolerance) return grad;
  const double cos = dot(u, v) / (nu * nv);
  for (std::size_t i = 0; i < u.size(); ++i) {
    grad[i] = v[i] / (nu * nv) - cos * u[i] / (nu * nu);
  }
  return grad;
}

}  // namespace agd
