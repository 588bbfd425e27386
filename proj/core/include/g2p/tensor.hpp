#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

namespace g2p {

// Dense row-major matrix. Vectors are stored as a single row.
template <class T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {}

  int rows() const noexcept { return rows_; }
  int cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  T* row(int r) noexcept { return data_.data() + static_cast<std::size_t>(r) * cols_; }
  const T* row(int r) const noexcept { return data_.data() + static_cast<std::size_t>(r) * cols_; }
  T& operator()(int r, int c) noexcept { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  T operator()(int r, int c) const noexcept { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  // Reshapes and zero-fills.
  void reset(int rows, int cols) {
    rows_ = rows;
    cols_ = cols;
    data_.assign(static_cast<std::size_t>(rows) * cols, T{0});
  }
  void set_zero() { std::fill(data_.begin(), data_.end(), T{0}); }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> data_;
};

// out = a * b, or out += a * b when `accumulate`. Each output element is a
// fused multiply-add chain over k in ascending order, so a row's result never
// depends on how many other rows are in the same call.
template <class T>
void gemm(const T* a, const T* b, T* out, int m, int n, int k, bool accumulate);

template <class T>
void matmul(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out);

template <class T>
void matmul_accumulate(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out);

template <class T>
Matrix<T> transpose(const Matrix<T>& a);

// out += a^T * b, the weight-gradient form.
template <class T>
void matmul_tn_accumulate(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out);

// out = a * b^T.
template <class T>
void matmul_nt(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out);

}  // namespace g2p
