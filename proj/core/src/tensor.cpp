#include "g2p/tensor.hpp"

#include <cassert>
#include <cmath>

namespace g2p {
namespace {

template <class T>
constexpr int kColBlock = 64 * 4 / static_cast<int>(sizeof(T));
constexpr int kRowBlock = 4;

template <class T>
inline T dot_column(const T* a, const T* b, int n, int k) {
  T acc = T{0};
  for (int p = 0; p < k; ++p) acc = std::fma(a[p], b[static_cast<std::size_t>(p) * n], acc);
  return acc;
}

}  // namespace

template <class T>
void gemm(const T* a, const T* b, T* out, int m, int n, int k, bool accumulate) {
  constexpr int cb = kColBlock<T>;
  int i = 0;
  for (; i + kRowBlock <= m; i += kRowBlock) {
    int j = 0;
    for (; j + cb <= n; j += cb) {
      T acc[kRowBlock][cb] = {};
      for (int p = 0; p < k; ++p) {
        const T* brow = b + static_cast<std::size_t>(p) * n + j;
        for (int r = 0; r < kRowBlock; ++r) {
          const T av = a[static_cast<std::size_t>(i + r) * k + p];
          for (int q = 0; q < cb; ++q) acc[r][q] = std::fma(av, brow[q], acc[r][q]);
        }
      }
      for (int r = 0; r < kRowBlock; ++r) {
        T* dst = out + static_cast<std::size_t>(i + r) * n + j;
        for (int q = 0; q < cb; ++q) dst[q] = accumulate ? dst[q] + acc[r][q] : acc[r][q];
      }
    }
    for (; j < n; ++j) {
      for (int r = 0; r < kRowBlock; ++r) {
        const T v = dot_column(a + static_cast<std::size_t>(i + r) * k, b + j, n, k);
        T& dst = out[static_cast<std::size_t>(i + r) * n + j];
        dst = accumulate ? dst + v : v;
      }
    }
  }
  for (; i < m; ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * k;
    int j = 0;
    for (; j + cb <= n; j += cb) {
      T acc[cb] = {};
      for (int p = 0; p < k; ++p) {
        const T* brow = b + static_cast<std::size_t>(p) * n + j;
        const T av = arow[p];
        for (int q = 0; q < cb; ++q) acc[q] = std::fma(av, brow[q], acc[q]);
      }
      T* dst = out + static_cast<std::size_t>(i) * n + j;
      for (int q = 0; q < cb; ++q) dst[q] = accumulate ? dst[q] + acc[q] : acc[q];
    }
    for (; j < n; ++j) {
      const T v = dot_column(arow, b + j, n, k);
      T& dst = out[static_cast<std::size_t>(i) * n + j];
      dst = accumulate ? dst + v : v;
    }
  }
}

template <class T>
void matmul(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out) {
  assert(a.cols() == b.rows());
  if (out.rows() != a.rows() || out.cols() != b.cols()) out.reset(a.rows(), b.cols());
  gemm(a.data(), b.data(), out.data(), a.rows(), b.cols(), a.cols(), false);
}

template <class T>
void matmul_accumulate(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out) {
  assert(a.cols() == b.rows() && out.rows() == a.rows() && out.cols() == b.cols());
  gemm(a.data(), b.data(), out.data(), a.rows(), b.cols(), a.cols(), true);
}

template <class T>
Matrix<T> transpose(const Matrix<T>& a) {
  Matrix<T> t(a.cols(), a.rows());
  constexpr int kTile = 32;
  for (int r0 = 0; r0 < a.rows(); r0 += kTile) {
    for (int c0 = 0; c0 < a.cols(); c0 += kTile) {
      const int r1 = std::min(r0 + kTile, a.rows());
      const int c1 = std::min(c0 + kTile, a.cols());
      for (int r = r0; r < r1; ++r) {
        for (int c = c0; c < c1; ++c) t(c, r) = a(r, c);
      }
    }
  }
  return t;
}

template <class T>
void matmul_tn_accumulate(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out) {
  assert(a.rows() == b.rows() && out.rows() == a.cols() && out.cols() == b.cols());
  if (a.rows() == 0) return;
  const Matrix<T> at = transpose(a);
  gemm(at.data(), b.data(), out.data(), at.rows(), b.cols(), at.cols(), true);
}

template <class T>
void matmul_nt(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out) {
  assert(a.cols() == b.cols());
  const Matrix<T> bt = transpose(b);
  matmul(a, bt, out);
}

#define G2P_INSTANTIATE_TENSOR(T)                                                   \
  template void gemm<T>(const T*, const T*, T*, int, int, int, bool);               \
  template void matmul<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>&);          \
  template void matmul_accumulate<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>&); \
  template Matrix<T> transpose<T>(const Matrix<T>&);                                \
  template void matmul_tn_accumulate<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>&); \
  template void matmul_nt<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>&);

G2P_INSTANTIATE_TENSOR(float)
G2P_INSTANTIATE_TENSOR(double)

#undef G2P_INSTANTIATE_TENSOR

}  // namespace g2p
