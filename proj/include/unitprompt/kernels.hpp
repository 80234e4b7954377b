#pragma once

// Dense inner loops used by the autodiff ops and the quantizer.
//
// Each kernel has a serial reference in `serial::` and an OpenMP version in
// `parallel::`. Both accumulate every output element over the reduction index
// in ascending order, so their results are bit-identical; the parallel form
// only splits independent output rows across threads. The unqualified entry
// points pick the parallel form when the problem is large enough and no outer
// parallel region is active.

#include <cstddef>
#include <span>
#include <vector>

namespace unitprompt::kernels {

// Selects between the serial reference and the OpenMP path where both exist.
enum class Execution { serial, parallel };

struct GemmDims {
  std::size_t m = 0;
  std::size_t k = 0;
  std::size_t n = 0;
};

namespace serial {
// c[m x n] (+)= a[m x k] * b[k x n]
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims dims,
             bool accumulate);
// c[m x n] (+)= a[m x k] * b[n x k]^T
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims dims,
             bool accumulate);
// c[m x n] (+)= a[k x m]^T * b[k x n]
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims dims,
             bool accumulate);
// Index of the nearest centroid for each row; ties go to the lowest id.
void nearest_centroid(std::span<const double> rows, std::span<const double> centroids, std::size_t dim,
                      std::span<std::size_t> ids, std::span<double> sq_dist);
}  // namespace serial

namespace parallel {
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims dims,
             bool accumulate);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims dims,
             bool accumulate);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims dims,
             bool accumulate);
void nearest_centroid(std::span<const double> rows, std::span<const double> centroids, std::size_t dim,
                      std::span<std::size_t> ids, std::span<double> sq_dist);
}  // namespace parallel

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims dims,
             bool accumulate);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims dims,
             bool accumulate);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims dims,
             bool accumulate);
void nearest_centroid(std::span<const double> rows, std::span<const double> centroids, std::size_t dim,
                      std::span<std::size_t> ids, std::span<double> sq_dist);

// Work (multiply-adds) above which the dispatchers go parallel.
inline constexpr std::size_t kParallelThreshold = std::size_t{1} << 18;

int max_threads();

}  // namespace unitprompt::kernels
