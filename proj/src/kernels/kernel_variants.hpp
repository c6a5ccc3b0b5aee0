#pragma once

#include "relkit/kernels.hpp"

namespace relkit::kernels::detail {

// Defined only in the translation units built for the matching ISA.
const KernelSet* avx2_table();
const KernelSet* neon_table();

}  // namespace relkit::kernels::detail
