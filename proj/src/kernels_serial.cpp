#include "dsm/kernels.hpp"

#include <cmath>
#include <vector>

namespace dsm::kernels::serial {

void dense_forward(std::span<const double> w, std::span<const double> b,
                   std::span<const double> x, DenseDims d, std::span<double> y) {
  for (std::size_t r = 0; r < d.rows; ++r) {
    const double* xr = x.data() + r * d.in;
    for (std::size_t o = 0; o < d.out; ++o) {
      const double* wo = w.data() + o * d.in;
      double acc = b[o];
      for (std::size_t i = 0; i < d.in; ++i) acc += wo[i] * xr[i];
      y[r * d.out + o] = acc;
    }
  }
}

void dense_backward_params(std::span<const double> delta, std::span<const double> x,
                           DenseDims d, std::span<double> dw, std::span<double> db) {
  for (std::size_t o = 0; o < d.out; ++o) {
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
  for (std::size_t r = 0; r < d.rows; ++r) {
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
  for (std::size_t i = 0; i < na; ++i) {
    const double* ai = a.data() + i * dim;
    double acc = 0.0;
    const std::size_t j0 = same_set ? i + 1 : 0;
    for (std::size_t j = j0; j < nb; ++j) {
      const double* bj = b.data() + j * dim;
      double dist2 = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double diff = ai[k] - bj[k];
        dist2 += diff * diff;
      }
      acc += std::exp(-gamma * dist2);
    }
    partial[i] = acc;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return same_set ? 2.0 * total : total;
}

}  // namespace dsm::kernels::serial
