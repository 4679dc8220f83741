#ifndef FTSEG_TENSOR_HPP
#define FTSEG_TENSOR_HPP

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ftseg {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_count(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape);

/// Error raised for tensor shapes that do not fit an operation.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense NCHW activation tensor. Storage is one contiguous Eigen vector;
/// `plane(n)` views a single sample as a (C x H*W) row-major matrix, which is
/// the layout every convolution kernel works on.
template <typename Scalar>
class Tensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using PlaneMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstPlaneMap =
      Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  Tensor() = default;
  Tensor(int n, int c, int h, int w) : n_(n), c_(c), h_(h), w_(w), data_(Vector::Zero(Index(n) * c * h * w)) {}

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.n_, other.c_, other.h_, other.w_); }

  int batch() const { return n_; }
  int channels() const { return c_; }
  int height() const { return h_; }
  int width() const { return w_; }
  Eigen::Index size() const { return data_.size(); }
  Eigen::Index plane_size() const { return Eigen::Index(h_) * w_; }
  Eigen::Index sample_size() const { return Eigen::Index(c_) * h_ * w_; }
  bool empty() const { return data_.size() == 0; }
  bool same_shape(const Tensor& o) const { return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_; }
  std::string shape_string() const;

  Vector& data() { return data_; }
  const Vector& data() const { return data_; }
  Scalar* sample_ptr(int n) { return data_.data() + n * sample_size(); }
  const Scalar* sample_ptr(int n) const { return data_.data() + n * sample_size(); }

  PlaneMap plane(int n) { return PlaneMap(sample_ptr(n), c_, plane_size()); }
  ConstPlaneMap plane(int n) const { return ConstPlaneMap(sample_ptr(n), c_, plane_size()); }

  Scalar& at(int n, int c, int y, int x) { return data_[((Index(n) * c_ + c) * h_ + y) * w_ + x]; }
  Scalar at(int n, int c, int y, int x) const { return data_[((Index(n) * c_ + c) * h_ + y) * w_ + x]; }

 private:
  using Index = Eigen::Index;
  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  Vector data_;
};

template <typename Scalar>
std::string Tensor<Scalar>::shape_string() const {
  return std::to_string(n_) + "x" + std::to_string(c_) + "x" + std::to_string(h_) + "x" + std::to_string(w_);
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Concatenates two tensors along the channel axis.
template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.batch() != b.batch() || a.height() != b.height() || a.width() != b.width())
    throw ShapeError("concat_channels: " + a.shape_string() + " vs " + b.shape_string());
  Tensor<Scalar> out(a.batch(), a.channels() + b.channels(), a.height(), a.width());
  for (int n = 0; n < a.batch(); ++n) {
    auto dst = out.plane(n);
    dst.topRows(a.channels()) = a.plane(n);
    dst.bottomRows(b.channels()) = b.plane(n);
  }
  return out;
}

/// Splits a channel-concatenated gradient back into its two parts.
template <typename Scalar>
void split_channels(const Tensor<Scalar>& g, int first_channels, Tensor<Scalar>& a, Tensor<Scalar>& b) {
  const int second = g.channels() - first_channels;
  a = Tensor<Scalar>(g.batch(), first_channels, g.height(), g.width());
  b = Tensor<Scalar>(g.batch(), second, g.height(), g.width());
  for (int n = 0; n < g.batch(); ++n) {
    auto src = g.plane(n);
    a.plane(n) = src.topRows(first_channels);
    b.plane(n) = src.bottomRows(second);
  }
}

}  // namespace ftseg

#endif  // FTSEG_TENSOR_HPP
