#pragma once

#include <cstddef>
#include <string_view>

// Inner-loop kernels over contiguous double arrays. Every kernel has a scalar
// reference implementation; vectorized variants (AVX2+FMA on x86-64, NEON on
// AArch64) are compiled in when the toolchain supports them and chosen at
// runtime. Variants may differ from the reference by reassociation and FMA
// rounding only.

namespace relkit::kernels {

struct KernelSet {
  std::string_view name;
  /// sum_i x[i] * y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);
  /// y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  /// out[i] = x[i] * y[i]
  void (*multiply)(const double* x, const double* y, double* out, std::size_t n);
  /// out[i] = max(0, x[i])
  void (*positive_part)(const double* x, double* out, std::size_t n);
  /// out[i] = min(0, x[i])
  void (*negative_part)(const double* x, double* out, std::size_t n);
};

const KernelSet& scalar();

/// nullptr when not compiled in or not supported by the running CPU.
const KernelSet* avx2();
const KernelSet* neon();

/// The set used by the library. Picked once: the RK_KERNELS environment
/// variable ("scalar", "avx2", "neon") overrides, otherwise the widest
/// supported variant.
const KernelSet& active();

/// Overrides the active set for the rest of the process (tests, benchmarks).
void set_active(const KernelSet& kernels);

}  // namespace relkit::kernels
