#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fusionbert/error.hpp"

namespace fusionbert {

using Dims = std::vector<std::size_t>;

inline std::string dims_str(const Dims& d) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < d.size(); ++i) os << (i ? "," : "") << d[i];
  os << ']';
  return os.str();
}

inline std::size_t dims_numel(const Dims& d) {
  return std::accumulate(d.begin(), d.end(), std::size_t{1}, std::multiplies<>());
}

// Dense row-major tensor of rank 1..3. Rank-1 tensors behave as a single row
// wherever a matrix is expected.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Dims dims, T fill = T(0)) : dims_(std::move(dims)) {
    validate_dims();
    data_.assign(dims_numel(dims_), fill);
  }

  Tensor(Dims dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
    validate_dims();
    if (data_.size() != dims_numel(dims_))
      throw DataError("tensor: data length " + std::to_string(data_.size()) +
                      " does not match dims " + dims_str(dims_));
  }

  static Tensor zeros(Dims dims) { return Tensor(std::move(dims)); }

  static Tensor matrix(std::size_t r, std::size_t c, std::initializer_list<T> vals) {
    return Tensor({r, c}, std::vector<T>(vals));
  }
  static Tensor vector(std::initializer_list<T> vals) {
    return Tensor({vals.size()}, std::vector<T>(vals));
  }
  static Tensor vector(std::vector<T> vals) {
    const std::size_t n = vals.size();
    return Tensor({n}, std::move(vals));
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(dims_, std::move(out));
  }

  const Dims& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Matrix view: leading extents fold into rows, the last extent is columns.
  std::size_t cols() const noexcept { return dims_.empty() ? 0 : dims_.back(); }
  std::size_t rows() const noexcept { return cols() ? data_.size() / cols() : 0; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  // Throws NumericError naming the first offending element.
  void require_finite(const std::string& what) const {
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (!std::isfinite(data_[i])) {
        std::ostringstream os;
        os << what << ": non-finite value at ";
        if (cols()) os << "row " << i / cols() << " col " << i % cols();
        throw NumericError(os.str());
      }
    }
  }

  bool operator==(const Tensor& o) const { return dims_ == o.dims_ && data_ == o.data_; }

 private:
  void validate_dims() const {
    if (dims_.empty() || dims_.size() > 3)
      throw DataError("tensor: rank must be 1..3, got " + std::to_string(dims_.size()));
    for (auto d : dims_)
      if (d == 0) throw DataError("tensor: zero extent in " + dims_str(dims_));
  }

  Dims dims_;
  std::vector<T> data_;
};

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
  T s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
T l2_norm(std::span<const T> a) {
  return std::sqrt(dot(a, a));
}

}  // namespace fusionbert
