#include "dsm/kernels.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dsm::kernels {

namespace {
Backend g_backend = Backend::parallel;
}

Backend default_backend() { return g_backend; }
void set_default_backend(Backend b) { g_backend = b; }

bool openmp_enabled() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace parallel {

// Tiny problems are not worth a fork/join.
constexpr std::int64_t kMinParallelWork = 1 << 14;

void dense_forward(std::span<const double> w, std::span<const double> b,
                   std::span<const double> x, DenseDims d, std::span<double> y) {
  const auto rows = static_cast<std::int64_t>(d.rows);
  const auto outs = static_cast<std::int64_t>(d.out);
  const std::int64_t work = rows * outs * static_cast<std::int64_t>(d.in);
#pragma omp parallel for collapse(2) schedule(static) if (work > kMinParallelWork)
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t o = 0; o < outs; ++o) {
      const double* xr = x.data() + r * d.in;
      const double* wo = w.data() + o * d.in;
      double acc = b[o];
      for (std::size_t i = 0; i < d.in; ++i) acc += wo[i] * xr[i];
      y[r * outs + o] = acc;
    }
  }
}

void dense_backward_params(std::span<const double> delta, std::span<const double> x,
                           DenseDims d, std::span<double> dw, std::span<double> db) {
  const auto outs = static_cast<std::int64_t>(d.out);
  const std::int64_t work = outs * static_cast<std::int64_t>(d.rows * d.in);
#pragma omp parallel for schedule(static) if (work > kMinParallelWork)
  for (std::int64_t o = 0; o < outs; ++o) {
    double* dwo = dw.data() + o * d.in;
    for (std::size_t i = 0; i < d.in; ++i) dwo[i] = 0.0;
    double bias = 0.0;
    for (std::size_t r = 0; r < d.rows; ++r) {
      const double g = delta[r * d.out + o];
      bias += g;
      const double* xr = x.data() + r * d.in;
      for (std::size_t i = 0; i < d.in; ++i) dwo[i] += g * xr[i];
    }
    db[o] = bias;
  }
}

void dense_backward_input(std::span<const double> w, std::span<const double> delta,
                          DenseDims d, std::span<double> dx) {
  const auto rows = static_cast<std::int64_t>(d.rows);
  const std::int64_t work = rows * static_cast<std::int64_t>(d.out * d.in);
#pragma omp parallel for schedule(static) if (work > kMinParallelWork)
  for (std::int64_t r = 0; r < rows; ++r) {
    double* dxr = dx.data() + r * d.in;
    for (std::size_t i = 0; i < d.in; ++i) dxr[i] = 0.0;
    for (std::size_t o = 0; o < d.out; ++o) {
      const double g = delta[r * d.out + o];
      const double* wo = w.data() + o * d.in;
      for (std::size_t i = 0; i < d.in; ++i) dxr[i] += g * wo[i];
    }
  }
}

double rbf_pair_sum(std::span<const double> a, std::size_t na, std::span<const double> b,
                    std::size_t nb, std::size_t dim, double gamma, bool same_set) {
  std::vector<double> partial(na, 0.0);
  const auto n = static_cast<std::int64_t>(na);
#pragma omp parallel for schedule(dynamic, 64)
  for (std::int64_t i = 0; i < n; ++i) {
    const double* ai = a.data() + i * dim;
    double acc = 0.0;
    const std::size_t j0 = same_set ? static_cast<std::size_t>(i) + 1 : 0;
    for (std::size_t j = j0; j < nb; ++j) {
      const double* bj = b.data() + j * dim;
      double dist2 = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double diff = ai[k] - bj[k];
        dist2 += diff * diff;
      }
      acc += std::exp(-gamma * dist2);
    }
    partial[static_cast<std::size_t>(i)] = acc;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return same_set ? 2.0 * total : total;
}

}  // namespace parallel

void dense_forward(std::span<const double> w, std::span<const double> b,
                   std::span<const double> x, DenseDims d, std::span<double> y) {
  if (g_backend == Backend::parallel) return parallel::dense_forward(w, b, x, d, y);
  serial::dense_forward(w, b, x, d, y);
}

void dense_backward_params(std::span<const double> delta, std::span<const double> x,
                           DenseDims d, std::span<double> dw, std::span<double> db) {
  if (g_backend == Backend::parallel) return parallel::dense_backward_params(delta, x, d, dw, db);
  serial::dense_backward_params(delta, x, d, dw, db);
}

void dense_backward_input(std::span<const double> w, std::span<const double> delta,
                          DenseDims d, std::span<double> dx) {
  if (g_backend == Backend::parallel) return parallel::dense_backward_input(w, delta, d, dx);
  serial::dense_backward_input(w, delta, d, dx);
}

double rbf_pair_sum(std::span<const double> a, std::size_t na, std::span<const double> b,
                    std::size_t nb, std::size_t dim, double gamma, bool same_set) {
  if (g_backend == Backend::parallel) {
    return parallel::rbf_pair_sum(a, na, b, nb, dim, gamma, same_set);
  }
  return serial::rbf_pair_sum(a, na, b, nb, dim, gamma, same_set);
}

}  // namespace dsm::kernels
