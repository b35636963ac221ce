#include "uiim/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace uiim::kernels {

namespace {

void check_nn(MatrixView a, MatrixView b, MutableMatrixView c) {
  if (a.cols != b.rows || c.rows != a.rows || c.cols != b.cols)
    throw std::invalid_argument("gemm_nn: dimension mismatch");
}

void check_nt(MatrixView a, MatrixView b, MutableMatrixView c) {
  if (a.cols != b.cols || c.rows != a.rows || c.cols != b.rows)
    throw std::invalid_argument("gemm_nt: dimension mismatch");
}

void check_tn(MatrixView a, MatrixView b, MutableMatrixView c) {
  if (a.rows != b.rows || c.rows != a.cols || c.cols != b.cols)
    throw std::invalid_argument("gemm_tn: dimension mismatch");
}

// Register tile and cache block sizes.
constexpr std::size_t kMr = 6;
constexpr std::size_t kNr = 16;
constexpr std::size_t kKc = 256;
constexpr std::size_t kMc = 96;
constexpr std::size_t kNc = 512;

// Element (i, j) of a logical operand stored with arbitrary strides, which
// lets one driver serve all three transpose variants.
struct Strided {
  const double* data;
  std::size_t row_stride;
  std::size_t col_stride;
  double at(std::size_t i, std::size_t j) const { return data[i * row_stride + j * col_stride]; }
};

// Packs rows [i0, i0 + mc) x cols [p0, p0 + kc) of A into kMr-row panels,
// column-major within a panel, zero-filling the ragged last panel.
void pack_a(Strided a, std::size_t i0, std::size_t mc, std::size_t p0, std::size_t kc, double* out) {
  for (std::size_t ir = 0; ir < mc; ir += kMr) {
    const std::size_t rows = std::min(kMr, mc - ir);
    for (std::size_t p = 0; p < kc; ++p) {
      for (std::size_t i = 0; i < rows; ++i) out[i] = a.at(i0 + ir + i, p0 + p);
      for (std::size_t i = rows; i < kMr; ++i) out[i] = 0.0;
      out += kMr;
    }
  }
}

// Packs rows [p0, p0 + kc) x cols [j0, j0 + nc) of B into kNr-column panels.
void pack_b(Strided b, std::size_t p0, std::size_t kc, std::size_t j0, std::size_t nc, double* out) {
  for (std::size_t jr = 0; jr < nc; jr += kNr) {
    const std::size_t cols = std::min(kNr, nc - jr);
    for (std::size_t p = 0; p < kc; ++p) {
      if (b.col_stride == 1) {
        const double* src = b.data + (p0 + p) * b.row_stride + j0 + jr;
        std::copy(src, src + cols, out);
      } else {
        for (std::size_t j = 0; j < cols; ++j) out[j] = b.at(p0 + p, j0 + jr + j);
      }
      for (std::size_t j = cols; j < kNr; ++j) out[j] = 0.0;
      out += kNr;
    }
  }
}

// Eight doubles; GCC/Clang lower this to whatever vector width the target has.
typedef double Lane __attribute__((vector_size(64), aligned(8), may_alias));
constexpr std::size_t kLanes = kNr / 8;

// tile (+)= Ap * Bp over kc; only the leading rows x cols of the tile are
// written back.
void micro_kernel(std::size_t kc, const double* ap, const double* bp, double* c, std::size_t ldc, std::size_t rows,
                  std::size_t cols, bool accumulate) {
  Lane acc[kMr][kLanes] = {};
  for (std::size_t p = 0; p < kc; ++p) {
    const double* a = ap + p * kMr;
    Lane b[kLanes];
    for (std::size_t l = 0; l < kLanes; ++l) b[l] = *reinterpret_cast<const Lane*>(bp + p * kNr + 8 * l);
    for (std::size_t i = 0; i < kMr; ++i)
      for (std::size_t l = 0; l < kLanes; ++l) acc[i][l] += a[i] * b[l];
  }
  double tile[kMr][kNr];
  std::memcpy(tile, acc, sizeof tile);
  for (std::size_t i = 0; i < rows; ++i) {
    double* crow = c + i * ldc;
    if (accumulate)
      for (std::size_t j = 0; j < cols; ++j) crow[j] += tile[i][j];
    else
      for (std::size_t j = 0; j < cols; ++j) crow[j] = tile[i][j];
  }
}

// C (+)= A * B with A m x k and B k x n given as strided views. Work is split
// across threads by blocks of output rows; each output element is reduced in
// the same order whatever the thread count or the position of its row.
void gemm_driver(Strided a, Strided b, MutableMatrixView c, std::size_t k, bool accumulate) {
  const std::size_t m = c.rows, n = c.cols;
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) std::fill(c.data, c.data + m * n, 0.0);
    return;
  }
  std::vector<double> bpack(kKc * ((std::min(kNc, n) + kNr - 1) / kNr) * kNr);
  for (std::size_t jc = 0; jc < n; jc += kNc) {
    const std::size_t nc = std::min(kNc, n - jc);
    for (std::size_t pc = 0; pc < k; pc += kKc) {
      const std::size_t kc = std::min(kKc, k - pc);
      const bool add = accumulate || pc > 0;
      pack_b(b, pc, kc, jc, nc, bpack.data());
      const auto blocks = static_cast<long>((m + kMc - 1) / kMc);
#pragma omp parallel if (blocks > 1)
      {
        std::vector<double> apack(kMc * kKc);
#pragma omp for schedule(static)
        for (long blk = 0; blk < blocks; ++blk) {
          const std::size_t ic = static_cast<std::size_t>(blk) * kMc;
          const std::size_t mc = std::min(kMc, m - ic);
          pack_a(a, ic, mc, pc, kc, apack.data());
          for (std::size_t jr = 0; jr < nc; jr += kNr) {
            const double* bp = bpack.data() + (jr / kNr) * kc * kNr;
            for (std::size_t ir = 0; ir < mc; ir += kMr) {
              micro_kernel(kc, apack.data() + (ir / kMr) * kc * kMr, bp, c.data + (ic + ir) * n + jc + jr, n,
                           std::min(kMr, mc - ir), std::min(kNr, nc - jr), add);
            }
          }
        }
      }
    }
  }
}

}  // namespace

void gemm_nn(MatrixView a, MatrixView b, MutableMatrixView c, bool accumulate) {
  check_nn(a, b, c);
  gemm_driver({a.data, a.cols, 1}, {b.data, b.cols, 1}, c, a.cols, accumulate);
}

void gemm_nt(MatrixView a, MatrixView b, MutableMatrixView c, bool accumulate) {
  check_nt(a, b, c);
  gemm_driver({a.data, a.cols, 1}, {b.data, 1, b.cols}, c, a.cols, accumulate);
}

void gemm_tn(MatrixView a, MatrixView b, MutableMatrixView c, bool accumulate) {
  check_tn(a, b, c);
  gemm_driver({a.data, 1, a.cols}, {b.data, b.cols, 1}, c, a.rows, accumulate);
}

int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_thread_count(int n) {
#ifdef _OPENMP
  omp_set_num_threads(std::max(1, n));
#else
  (void)n;
#endif
}

namespace reference {

void gemm_nn(MatrixView a, MatrixView b, MutableMatrixView c, bool accumulate) {
  check_nn(a, b, c);
  for (std::size_t i = 0; i < c.rows; ++i)
    for (std::size_t j = 0; j < c.cols; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols; ++p) s += a.data[i * a.cols + p] * b.data[p * b.cols + j];
      double& out = c.data[i * c.cols + j];
      out = accumulate ? out + s : s;
    }
}

void gemm_nt(MatrixView a, MatrixView b, MutableMatrixView c, bool accumulate) {
  check_nt(a, b, c);
  for (std::size_t i = 0; i < c.rows; ++i)
    for (std::size_t j = 0; j < c.cols; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols; ++p) s += a.data[i * a.cols + p] * b.data[j * b.cols + p];
      double& out = c.data[i * c.cols + j];
      out = accumulate ? out + s : s;
    }
}

void gemm_tn(MatrixView a, MatrixView b, MutableMatrixView c, bool accumulate) {
  check_tn(a, b, c);
  for (std::size_t i = 0; i < c.rows; ++i)
    for (std::size_t j = 0; j < c.cols; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.rows; ++p) s += a.data[p * a.cols + i] * b.data[p * b.cols + j];
      double& out = c.data[i * c.cols + j];
      out = accumulate ? out + s : s;
    }
}

}  // namespace reference

}  // namespace uiim::kernels
