#pragma once

#include "advpatch/simd/kernels.hpp"

namespace advpatch::simd::detail {

#if defined(ADVPATCH_HAVE_AVX2)
const KernelTable& avx2_table();
#endif

}  // namespace advpatch::simd::detail
