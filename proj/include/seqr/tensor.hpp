#pragma once

// Dense row-major tensor of 32- or 64-bit floats. Deliberately minimal: the
// layer kernels index raw data pointers, so this only has to carry shape and
// storage.

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace seqr {

struct shape_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <class S = double>
class Tensor {
 public:
  using value_type = S;

  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(count(shape_)), S(0));
  }

  Tensor(std::vector<int> shape, std::vector<S> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != count(shape_))
      throw shape_error("Tensor: data length does not match shape");
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor scalar(S v) { return Tensor({1}, {v}); }

  static std::int64_t count(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
      if (d < 0) throw shape_error("Tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  int ndim() const { return static_cast<int>(shape_.size()); }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  S& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const S& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool operator==(const Tensor& o) const {
    return shape_ == o.shape_ && data_ == o.data_;
  }

  Tensor reshaped(std::vector<int> shape) const {
    if (count(shape) != size()) throw shape_error("Tensor::reshaped: element count mismatch");
    return Tensor(std::move(shape), data_);
  }

  template <class T>
  Tensor<T> cast() const {
    std::vector<T> d(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) d[i] = static_cast<T>(data_[i]);
    return Tensor<T>(shape_, std::move(d));
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << ']';
    return os.str();
  }

 private:
  std::vector<int> shape_;
  std::vector<S> data_;
};

}  // namespace seqr
