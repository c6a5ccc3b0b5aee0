#include "relkit/kernels.hpp"

#include "kernel_variants.hpp"

namespace relkit::kernels {
namespace {

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void multiply_scalar(const double* x, const double* y, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

void positive_part_scalar(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void negative_part_scalar(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] < 0.0 ? x[i] : 0.0;
}

constexpr KernelSet kScalar{"scalar", dot_scalar, axpy_scalar, multiply_scalar,
                            positive_part_scalar, negative_part_scalar};

}  // namespace

const KernelSet& scalar() { return kScalar; }

}  // namespace relkit::kernels
