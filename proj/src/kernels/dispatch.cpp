#include <atomic>
#include <cstdlib>
#include <string_view>

#include "kernel_variants.hpp"
#include "relkit/kernels.hpp"

namespace relkit::kernels {
namespace {

const KernelSet* pick_default() {
  if (const char* env = std::getenv("RK_KERNELS")) {
    const std::string_view want(env);
    if (want == "scalar") return &scalar();
    if (want == "avx2" && avx2() != nullptr) return avx2();
    if (want == "neon" && neon() != nullptr) return neon();
  }
  if (const KernelSet* k = avx2()) return k;
  if (const KernelSet* k = neon()) return k;
  return &scalar();
}

std::atomic<const KernelSet*>& slot() {
  static std::atomic<const KernelSet*> current{pick_default()};
  return current;
}

}  // namespace

const KernelSet* avx2() {
#if defined(RELKIT_HAVE_AVX2)
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? detail::avx2_table() : nullptr;
#else
  return nullptr;
#endif
}

const KernelSet* neon() {
#if defined(RELKIT_HAVE_NEON)
  return detail::neon_table();
#else
  return nullptr;
#endif
}

const KernelSet& active() { return *slot().load(std::memory_order_acquire); }

void set_active(const KernelSet& kernels) { slot().store(&kernels, std::memory_order_release); }

}  // namespace relkit::kernels
