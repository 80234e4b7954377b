#include "unitprompt/kernels.hpp"

#include <omp.h>

#include <limits>

namespace unitprompt::kernels {

namespace {

// One output row of each gemm flavour. Shared by both namespaces so the two
// paths perform the same floating-point operations in the same order.

inline void row_nn(const double* a, const double* b, double* c, GemmDims d, std::size_t i, bool acc) {
  double* ci = c + i * d.n;
  if (!acc) {
    for (std::size_t j = 0; j < d.n; ++j) ci[j] = 0.0;
  }
  const double* ai = a + i * d.k;
  for (std::size_t p = 0; p < d.k; ++p) {
    const double av = ai[p];
    const double* bp = b + p * d.n;
    for (std::size_t j = 0; j < d.n; ++j) ci[j] += av * bp[j];
  }
}

inline void row_nt(const double* a, const double* b, double* c, GemmDims d, std::size_t i, bool acc) {
  const double* ai = a + i * d.k;
  double* ci = c + i * d.n;
  std::size_t j = 0;
  // Four independent dot products per pass; each still sums over p in order.
  for (; j + 4 <= d.n; j += 4) {
    const double* b0 = b + j * d.k;
    const double* b1 = b0 + d.k;
    const double* b2 = b1 + d.k;
    const double* b3 = b2 + d.k;
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    for (std::size_t p = 0; p < d.k; ++p) {
      const double av = ai[p];
      s0 += av * b0[p];
      s1 += av * b1[p];
      s2 += av * b2[p];
      s3 += av * b3[p];
    }
    if (acc) {
      ci[j] += s0;
      ci[j + 1] += s1;
      ci[j + 2] += s2;
      ci[j + 3] += s3;
    } else {
      ci[j] = s0;
      ci[j + 1] = s1;
      ci[j + 2] = s2;
      ci[j + 3] = s3;
    }
  }
  for (; j < d.n; ++j) {
    const double* bj = b + j * d.k;
    double s = 0.0;
    for (std::size_t p = 0; p < d.k; ++p) s += ai[p] * bj[p];
    ci[j] = acc ? ci[j] + s : s;
  }
}

inline void row_tn(const double* a, const double* b, double* c, GemmDims d, std::size_t i, bool acc) {
  // a is (k x m): column i of a pairs with every row of b.
  double* ci = c + i * d.n;
  if (!acc) {
    for (std::size_t j = 0; j < d.n; ++j) ci[j] = 0.0;
  }
  for (std::size_t p = 0; p < d.k; ++p) {
    const double av = a[p * d.m + i];
    const double* bp = b + p * d.n;
    for (std::size_t j = 0; j < d.n; ++j) ci[j] += av * bp[j];
  }
}

inline void nearest_row(const double* rows, const double* centroids, std::size_t k, std::size_t dim,
                        std::size_t r, std::size_t* ids, double* dists) {
  const double* x = rows + r * dim;
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < k; ++c) {
    const double* mu = centroids + c * dim;
    double s = 0.0;
    for (std::size_t q = 0; q < dim; ++q) {
      const double diff = x[q] - mu[q];
      s += diff * diff;
    }
    if (s < best_d) {
      best_d = s;
      best = c;
    }
  }
  ids[r] = best;
  dists[r] = best_d;
}

}  // namespace

namespace serial {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims d, bool acc) {
  for (std::size_t i = 0; i < d.m; ++i) row_nn(a.data(), b.data(), c.data(), d, i, acc);
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims d, bool acc) {
  for (std::size_t i = 0; i < d.m; ++i) row_nt(a.data(), b.data(), c.data(), d, i, acc);
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims d, bool acc) {
  for (std::size_t i = 0; i < d.m; ++i) row_tn(a.data(), b.data(), c.data(), d, i, acc);
}

void nearest_centroid(std::span<const double> rows, std::span<const double> centroids, std::size_t dim,
                      std::span<std::size_t> ids, std::span<double> sq_dist) {
  const std::size_t k = centroids.size() / dim;
  for (std::size_t r = 0; r < ids.size(); ++r) {
    nearest_row(rows.data(), centroids.data(), k, dim, r, ids.data(), sq_dist.data());
  }
}

}  // namespace serial

namespace parallel {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims d, bool acc) {
  const auto m = static_cast<std::ptrdiff_t>(d.m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < m; ++i) {
    row_nn(a.data(), b.data(), c.data(), d, static_cast<std::size_t>(i), acc);
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims d, bool acc) {
  const auto m = static_cast<std::ptrdiff_t>(d.m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < m; ++i) {
    row_nt(a.data(), b.data(), c.data(), d, static_cast<std::size_t>(i), acc);
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims d, bool acc) {
  const auto m = static_cast<std::ptrdiff_t>(d.m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < m; ++i) {
    row_tn(a.data(), b.data(), c.data(), d, static_cast<std::size_t>(i), acc);
  }
}

void nearest_centroid(std::span<const double> rows, std::span<const double> centroids, std::size_t dim,
                      std::span<std::size_t> ids, std::span<double> sq_dist) {
  const std::size_t k = centroids.size() / dim;
  const auto n = static_cast<std::ptrdiff_t>(ids.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < n; ++r) {
    nearest_row(rows.data(), centroids.data(), k, dim, static_cast<std::size_t>(r), ids.data(), sq_dist.data());
  }
}

}  // namespace parallel

namespace {
bool go_parallel(std::size_t work) {
  return work >= kParallelThreshold && !omp_in_parallel() && omp_get_max_threads() > 1;
}
}  // namespace

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims d, bool acc) {
  if (go_parallel(d.m * d.k * d.n)) {
    parallel::gemm_nn(a, b, c, d, acc);
  } else {
    serial::gemm_nn(a, b, c, d, acc);
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims d, bool acc) {
  if (go_parallel(d.m * d.k * d.n)) {
    parallel::gemm_nt(a, b, c, d, acc);
  } else {
    serial::gemm_nt(a, b, c, d, acc);
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims d, bool acc) {
  if (go_parallel(d.m * d.k * d.n)) {
    parallel::gemm_tn(a, b, c, d, acc);
  } else {
    serial::gemm_tn(a, b, c, d, acc);
  }
}

void nearest_centroid(std::span<const double> rows, std::span<const double> centroids, std::size_t dim,
                      std::span<std::size_t> ids, std::span<double> sq_dist) {
  if (go_parallel(ids.size() * centroids.size())) {
    parallel::nearest_centroid(rows, centroids, dim, ids, sq_dist);
  } else {
    serial::nearest_centroid(rows, centroids, dim, ids, sq_dist);
  }
}

int max_threads() { return omp_get_max_threads(); }

}  // namespace unitprompt::kernels
