// Copyright 2026 The dualdit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dualdit {

// Scalar type of the whole library. The default build is 64-bit so that
// finite-difference checks have headroom; the training CLI is compiled with
// DUALDIT_REAL_FLOAT for speed.
#ifdef DUALDIT_REAL_FLOAT
using Real = float;
#else
using Real = double;
#endif

enum class ErrorCode {
  kInvalidShape,
  kConfig,
  kIndex,
  kLayout,
  kOracleFailure,
  kNonFinite,
  kIo,
  kFormat,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

using Shape = std::vector<std::size_t>;

/// 64-byte aligned allocation. Vectorized reductions peel according to the
/// runtime address, so a fixed alignment keeps results independent of where
/// the heap happens to place a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Storage = std::vector<Real, AlignedAllocator<Real>>;

std::string shape_str(const Shape& shape);

/// Dense row-major array. Most of the library treats a tensor as a matrix of
/// rows() x cols(), where cols() is the last dimension.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real(0));
  Tensor(Shape shape, Storage data);
  Tensor(Shape shape, const std::vector<Real>& data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor scalar(Real v) { return Tensor({1}, Storage{v}); }
  static Tensor from_rows(std::initializer_list<std::initializer_list<Real>> rows);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }
  std::size_t rows() const noexcept { return cols() == 0 ? 0 : data_.size() / cols(); }

  Real* data() noexcept { return data_.data(); }
  const Real* data() const noexcept { return data_.data(); }
  std::span<Real> values() & noexcept { return data_; }
  std::span<const Real> values() const& noexcept { return data_; }
  /// A temporary hands over its storage so range-for over a result is safe.
  Storage values() && noexcept { return std::move(data_); }
  Storage& storage() noexcept { return data_; }
  const Storage& storage() const noexcept { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }
  Real& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  Real at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  Real item() const;

  std::span<Real> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const Real> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  /// Same data, new shape. Throws kInvalidShape if the element count differs.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const noexcept;
  void fill(Real v);

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  Storage data_;
};

std::size_t numel(const Shape& shape);

Real max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace dualdit
