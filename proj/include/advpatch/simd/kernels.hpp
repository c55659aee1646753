#pragma once

// Inner-loop kernels with a scalar reference and vector variants chosen at
// runtime. Elementwise kernels (axpy, nearest_color, adam_update) are
// bitwise-identical across variants; dot differs only in summation order.

#include <cstddef>
#include <string_view>

namespace advpatch::simd {

enum class Isa { Scalar, Avx2 };

struct NearestColor {
    double distance_sq;
    std::size_t index;
};

struct AdamArgs {
    double learning_rate;
    double beta1;
    double beta2;
    double epsilon;
    double bias_correction1;  // 1 - beta1^t
    double bias_correction2;  // 1 - beta2^t
};

struct KernelTable {
    Isa isa;
    std::string_view name;

    double (*dot)(const double* a, const double* b, std::size_t n);
    // y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // First color (lowest index) minimizing squared RGB distance to pixel[0..2].
    // Colors are stored as three planes of length n.
    NearestColor (*nearest_color)(const double* pixel, const double* red, const double* green,
                                  const double* blue, std::size_t n);
    void (*adam_update)(const AdamArgs& args, double* params, const double* grads, double* m,
                        double* v, std::size_t n);
};

const KernelTable& scalar_kernels();

/// nullptr when the build has no AVX2 variant.
const KernelTable* avx2_kernels();

bool cpu_supports(Isa isa);

/// Table used by the library. Chosen once from the CPU, overridable with the
/// ADVPATCH_SIMD environment variable (scalar | avx2 | auto).
const KernelTable& active_kernels();

/// Forces a variant; throws std::invalid_argument if it is unavailable.
void set_active_kernels(Isa isa);

std::string_view isa_name(Isa isa);

}  // namespace advpatch::simd
