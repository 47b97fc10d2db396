#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace cyclesafe {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major tensor. Copies share storage; use clone() for a deep copy. Storage is
/// aligned to Eigen's packet width.
template <class T>
class Tensor {
 public:
  using value_type = T;
  using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

  Tensor() : storage_(std::make_shared<Buffer>()) {}
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), storage_(std::make_shared<Buffer>(static_cast<std::size_t>(shape_numel(shape_)), fill)) {}
  Tensor(Shape shape, const std::vector<T>& values)
      : shape_(std::move(shape)), storage_(std::make_shared<Buffer>(values.begin(), values.end())) {
    check_size();
  }
  Tensor(Shape shape, std::initializer_list<T> values)
      : shape_(std::move(shape)), storage_(std::make_shared<Buffer>(values.begin(), values.end())) {
    check_size();
  }
  Tensor(Shape shape, Buffer values) : shape_(std::move(shape)), storage_(std::make_shared<Buffer>(std::move(values))) {
    check_size();
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int i) const { return shape_.at(i < 0 ? shape_.size() + i : i); }
  std::int64_t numel() const { return static_cast<std::int64_t>(storage_->size()); }
  bool empty() const { return storage_->empty(); }

  T* data() { return storage_->data(); }
  const T* data() const { return storage_->data(); }
  std::span<T> values() { return {storage_->data(), storage_->size()}; }
  std::span<const T> values() const { return {storage_->data(), storage_->size()}; }

  T& operator[](std::int64_t i) { return (*storage_)[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return (*storage_)[static_cast<std::size_t>(i)]; }

  /// View with a new shape over the same storage.
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel())
      throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(shape));
    Tensor out;
    out.shape_ = std::move(shape);
    out.storage_ = storage_;
    return out;
  }

  Tensor clone() const { return Tensor(shape_, *storage_); }

  void fill(T v) { std::fill(storage_->begin(), storage_->end(), v); }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, typename Tensor<U>::Buffer(storage_->begin(), storage_->end()));
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  void check_size() const {
    if (static_cast<std::int64_t>(storage_->size()) != shape_numel(shape_))
      throw ShapeError("tensor: value count does not match shape " + shape_str(shape_));
  }

  Shape shape_;
  std::shared_ptr<Buffer> storage_;
};

/// Byte-level equality, used by bit-exact checks.
template <class T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data(), b.data(), sizeof(T) * static_cast<std::size_t>(a.numel())) == 0;
}

}  // namespace cyclesafe
