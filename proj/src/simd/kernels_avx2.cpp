// Compiled with -mavx2 only. FMA is deliberately not enabled so that the
// elementwise kernels round identically to the scalar reference.

#include "kernels_impl.hpp"

#include <immintrin.h>

#include <cmath>

namespace advpatch::simd::detail {
namespace {

double dot_avx2(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
        acc1 = _mm256_add_pd(acc1,
                             _mm256_mul_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4)));
    }
    for (; i + 4 <= n; i += 4) {
        acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    acc0 = _mm256_add_pd(acc0, acc1);
    const __m128d lo = _mm256_castpd256_pd128(acc0);
    const __m128d hi = _mm256_extractf128_pd(acc0, 1);
    const __m128d pair = _mm_add_pd(lo, hi);
    double sum = _mm_cvtsd_f64(_mm_add_sd(pair, _mm_unpackhi_pd(pair, pair)));
    for (; i < n; ++i) {
        sum += a[i] * b[i];
    }
    return sum;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
    }
    for (; i < n; ++i) {
        y[i] += alpha * x[i];
    }
}

NearestColor nearest_color_avx2(const double* pixel, const double* red, const double* green,
                                const double* blue, std::size_t n) {
    NearestColor best{HUGE_VAL, 0};
    std::size_t k = 0;
    if (n >= 4) {
        const __m256d pr = _mm256_set1_pd(pixel[0]);
        const __m256d pg = _mm256_set1_pd(pixel[1]);
        const __m256d pb = _mm256_set1_pd(pixel[2]);
        __m256d best_d = _mm256_set1_pd(HUGE_VAL);
        __m256d best_i = _mm256_setzero_pd();
        __m256d idx = _mm256_set_pd(3.0, 2.0, 1.0, 0.0);
        const __m256d step = _mm256_set1_pd(4.0);
        for (; k + 4 <= n; k += 4) {
            const __m256d dr = _mm256_sub_pd(pr, _mm256_loadu_pd(red + k));
            const __m256d dg = _mm256_sub_pd(pg, _mm256_loadu_pd(green + k));
            const __m256d db = _mm256_sub_pd(pb, _mm256_loadu_pd(blue + k));
            const __m256d d = _mm256_add_pd(
                _mm256_add_pd(_mm256_mul_pd(dr, dr), _mm256_mul_pd(dg, dg)), _mm256_mul_pd(db, db));
            // Strict less-than keeps the earliest index within each lane.
            const __m256d better = _mm256_cmp_pd(d, best_d, _CMP_LT_OQ);
            best_d = _mm256_blendv_pd(best_d, d, better);
            best_i = _mm256_blendv_pd(best_i, idx, better);
            idx = _mm256_add_pd(idx, step);
        }
        alignas(32) double lane_d[4];
        alignas(32) double lane_i[4];
        _mm256_store_pd(lane_d, best_d);
        _mm256_store_pd(lane_i, best_i);
        for (int lane = 0; lane < 4; ++lane) {
            const auto li = static_cast<std::size_t>(lane_i[lane]);
            if (lane_d[lane] < best.distance_sq ||
                (lane_d[lane] == best.distance_sq && li < best.index)) {
                best = {lane_d[lane], li};
            }
        }
    }
    for (; k < n; ++k) {
        const double dr = pixel[0] - red[k];
        const double dg = pixel[1] - green[k];
        const double db = pixel[2] - blue[k];
        const double d = dr * dr + dg * dg + db * db;
        if (d < best.distance_sq) {
            best = {d, k};
        }
    }
    return best;
}

void adam_update_avx2(const AdamArgs& args, double* params, const double* grads, double* m,
                      double* v, std::size_t n) {
    const __m256d b1 = _mm256_set1_pd(args.beta1);
    const __m256d b2 = _mm256_set1_pd(args.beta2);
    const __m256d omb1 = _mm256_set1_pd(1.0 - args.beta1);
    const __m256d omb2 = _mm256_set1_pd(1.0 - args.beta2);
    const __m256d bc1 = _mm256_set1_pd(args.bias_correction1);
    const __m256d bc2 = _mm256_set1_pd(args.bias_correction2);
    const __m256d lr = _mm256_set1_pd(args.learning_rate);
    const __m256d eps = _mm256_set1_pd(args.epsilon);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d g = _mm256_loadu_pd(grads + i);
        const __m256d mi = _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)),
                                         _mm256_mul_pd(omb1, g));
        const __m256d vi = _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)),
                                         _mm256_mul_pd(omb2, _mm256_mul_pd(g, g)));
        _mm256_storeu_pd(m + i, mi);
        _mm256_storeu_pd(v + i, vi);
        const __m256d m_hat = _mm256_div_pd(mi, bc1);
        const __m256d v_hat = _mm256_div_pd(vi, bc2);
        const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(v_hat), eps);
        const __m256d delta = _mm256_div_pd(_mm256_mul_pd(lr, m_hat), denom);
        _mm256_storeu_pd(params + i, _mm256_sub_pd(_mm256_loadu_pd(params + i), delta));
    }
    if (i < n) {
        scalar_kernels().adam_update(args, params + i, grads + i, m + i, v + i, n - i);
    }
}

}  // namespace

const KernelTable& avx2_table() {
    static const KernelTable table{
        Isa::Avx2, "avx2", dot_avx2, axpy_avx2, nearest_color_avx2, adam_update_avx2,
    };
    return table;
}

}  // namespace advpatch::simd::detail
