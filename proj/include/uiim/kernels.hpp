#pragma once

#include <cstddef>
#include <span>

// Dense matrix kernels behind the autodiff engine. All matrices are row-major.
//
// Each kernel exists twice: `reference::` is the plain triple loop kept as the
// test oracle, and the unqualified version is the blocked, OpenMP-parallel
// kernel used in training. The parallel kernels split work by output rows only,
// so every output element is reduced in the same order regardless of thread
// count and results are reproducible run to run.

namespace uiim::kernels {

struct MatrixView {
  const double* data;
  std::size_t rows;
  std::size_t cols;
};

struct MutableMatrixView {
  double* data;
  std::size_t rows;
  std::size_t cols;
};

// C (+)= A * B      A: m x k, B: k x n, C: m x n
void gemm_nn(MatrixView a, MatrixView b, MutableMatrixView c, bool accumulate);
// C (+)= A * B^T    A: m x k, B: n x k, C: m x n
void gemm_nt(MatrixView a, MatrixView b, MutableMatrixView c, bool accumulate);
// C (+)= A^T * B    A: k x m, B: k x n, C: m x n
void gemm_tn(MatrixView a, MatrixView b, MutableMatrixView c, bool accumulate);

/// Number of threads the parallel kernels will use (1 without OpenMP).
int thread_count();
void set_thread_count(int n);

namespace reference {

void gemm_nn(MatrixView a, MatrixView b, MutableMatrixView c, bool accumulate);
void gemm_nt(MatrixView a, MatrixView b, MutableMatrixView c, bool accumulate);
void gemm_tn(MatrixView a, MatrixView b, MutableMatrixView c, bool accumulate);

}  // namespace reference

}  // namespace uiim::kernels
