#pragma once

#include <cstddef>
#include <span>

// Dense-layer and pairwise-kernel primitives. Each kernel exists twice: a
// serial reference and an OpenMP variant. The parallel variants split work
// only across independent outputs and keep every per-output reduction in the
// same order as the serial code, so both produce bit-identical results for
// any thread count.
namespace dsm::kernels {

struct DenseDims {
  std::size_t rows;  // batch
  std::size_t in;
  std::size_t out;
};

enum class Backend { serial, parallel };

/// Backend used by the networks and metrics; parallel unless overridden.
Backend default_backend();
void set_default_backend(Backend b);
bool openmp_enabled();
int max_threads();

namespace serial {
// Y = X W^T + b, W is out x in row-major.
void dense_forward(std::span<const double> w, std::span<const double> b,
                   std::span<const double> x, DenseDims d, std::span<double> y);
// dW = delta^T X, db = column sums of delta (overwrites).
void dense_backward_params(std::span<const double> delta, std::span<const double> x,
                           DenseDims d, std::span<double> dw, std::span<double> db);
// dX = delta W (overwrites).
void dense_backward_input(std::span<const double> w, std::span<const double> delta,
                          DenseDims d, std::span<double> dx);
// Sum of exp(-|a_i - b_j|^2 * gamma). With same_set the diagonal is skipped and
// a, b must be the same set.
double rbf_pair_sum(std::span<const double> a, std::size_t na, std::span<const double> b,
                    std::size_t nb, std::size_t dim, double gamma, bool same_set);
}  // namespace serial

namespace parallel {
void dense_forward(std::span<const double> w, std::span<const double> b,
                   std::span<const double> x, DenseDims d, std::span<double> y);
void dense_backward_params(std::span<const double> delta, std::span<const double> x,
                           DenseDims d, std::span<double> dw, std::span<double> db);
void dense_backward_input(std::span<const double> w, std::span<const double> delta,
                          DenseDims d, std::span<double> dx);
double rbf_pair_sum(std::span<const double> a, std::size_t na, std::span<const double> b,
                    std::size_t nb, std::size_t dim, double gamma, bool same_set);
}  // namespace parallel

void dense_forward(std::span<const double> w, std::span<const double> b,
                   std::span<const double> x, DenseDims d, std::span<double> y);
void dense_backward_params(std::span<const double> delta, std::span<const double> x,
                           DenseDims d, std::span<double> dw, std::span<double> db);
void dense_backward_input(std::span<const double> w, std::span<const double> delta,
                          DenseDims d, std::span<double> dx);
double rbf_pair_sum(std::span<const double> a, std::size_t na, std::span<const double> b,
                    std::size_t nb, std::size_t dim, double gamma, bool same_set);

}  // namespace dsm::kernels
