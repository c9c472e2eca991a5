#include "synprune/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace synprune {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

void check(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

template <typename T>
TensorT<T>::TensorT(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), T(0)) {
  for (std::size_t d : shape_) check(d > 0, "tensor extent must be positive");
}

template <typename T>
TensorT<T>::TensorT(std::vector<std::size_t> shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check(shape_product(shape_) == data_.size(), "tensor shape/data size mismatch");
}

template <typename T>
TensorT<T> TensorT<T>::full(std::vector<std::size_t> shape, T value) {
  TensorT t(std::move(shape));
  t.fill(value);
  return t;
}

template <typename T>
TensorT<T> TensorT<T>::scalar(T value) {
  return TensorT({1}, {value});
}

template <typename T>
void TensorT<T>::fill(T value) {
  for (T& v : data_) v = value;
}

template <typename T>
bool TensorT<T>::all_finite() const {
  for (T v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

template <typename T>
std::string TensorT<T>::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
  os << "]";
  return os.str();
}

template class TensorT<float>;
template class TensorT<double>;

}  // namespace synprune
