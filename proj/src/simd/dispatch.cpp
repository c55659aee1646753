#include "kernels_impl.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace advpatch::simd {
namespace {

const KernelTable* table_for(Isa isa) {
    switch (isa) {
        case Isa::Scalar:
            return &scalar_kernels();
        case Isa::Avx2:
            return cpu_supports(Isa::Avx2) ? avx2_kernels() : nullptr;
    }
    return nullptr;
}

const KernelTable* select_initial() {
    const char* env = std::getenv("ADVPATCH_SIMD");
    const std::string choice = env ? env : "auto";
    if (choice == "scalar") {
        return &scalar_kernels();
    }
    if (choice == "avx2") {
        if (const KernelTable* t = table_for(Isa::Avx2)) {
            return t;
        }
        throw std::runtime_error("ADVPATCH_SIMD=avx2 but AVX2 is unavailable");
    }
    if (choice != "auto") {
        throw std::runtime_error("ADVPATCH_SIMD must be scalar, avx2 or auto, got '" + choice + "'");
    }
    if (const KernelTable* t = table_for(Isa::Avx2)) {
        return t;
    }
    return &scalar_kernels();
}

std::atomic<const KernelTable*>& active_slot() {
    static std::atomic<const KernelTable*> slot{select_initial()};
    return slot;
}

}  // namespace

const KernelTable* avx2_kernels() {
#if defined(ADVPATCH_HAVE_AVX2)
    return &detail::avx2_table();
#else
    return nullptr;
#endif
}

bool cpu_supports(Isa isa) {
    switch (isa) {
        case Isa::Scalar:
            return true;
        case Isa::Avx2:
#if defined(ADVPATCH_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
            return __builtin_cpu_supports("avx2");
#else
            return false;
#endif
    }
    return false;
}

const KernelTable& active_kernels() {
    return *active_slot().load(std::memory_order_acquire);
}

void set_active_kernels(Isa isa) {
    const KernelTable* t = table_for(isa);
    if (t == nullptr) {
        throw std::invalid_argument("kernel variant '" + std::string(isa_name(isa)) +
                                    "' is not available on this machine");
    }
    active_slot().store(t, std::memory_order_release);
}

std::string_view isa_name(Isa isa) {
    switch (isa) {
        case Isa::Scalar:
            return "scalar";
        case Isa::Avx2:
            return "avx2";
    }
    return "unknown";
}

}  // namespace advpatch::simd
