#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace synprune {

// Dense row-major n-d float array. Activations use NCHW layout, conv weights
// K x C x kh x kw. Instantiated for float (training/inference) and double
// (gradient checking).
template <typename T>
class TensorT {
 public:
  TensorT() = default;
  explicit TensorT(std::vector<std::size_t> shape);
  TensorT(std::vector<std::size_t> shape, std::vector<T> data);

  static TensorT full(std::vector<std::size_t> shape, T value);
  static TensorT scalar(T value);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // NCHW accessors.
  T& at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  T& at2(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& at2(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  void fill(T value);
  bool all_finite() const;
  bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

  template <typename U>
  TensorT<U> cast() const {
    if (shape_.empty()) return TensorT<U>();  // absent optional tensor
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return TensorT<U>(shape_, std::move(out));
  }

  std::string shape_str() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

std::size_t shape_product(const std::vector<std::size_t>& shape);

// Throws std::invalid_argument with `what` when `cond` is false.
void check(bool cond, const std::string& what);

}  // namespace synprune
