#include "kernels_impl.hpp"

#include <cmath>

namespace advpatch::simd {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sum += a[i] * b[i];
    }
    return sum;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        y[i] += alpha * x[i];
    }
}

NearestColor nearest_color_scalar(const double* pixel, const double* red, const double* green,
                                  const double* blue, std::size_t n) {
    NearestColor best{HUGE_VAL, 0};
    for (std::size_t k = 0; k < n; ++k) {
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

void adam_update_scalar(const AdamArgs& args, double* params, const double* grads, double* m,
                        double* v, std::size_t n) {
    const double one_minus_b1 = 1.0 - args.beta1;
    const double one_minus_b2 = 1.0 - args.beta2;
    for (std::size_t i = 0; i < n; ++i) {
        const double g = grads[i];
        m[i] = args.beta1 * m[i] + one_minus_b1 * g;
        v[i] = args.beta2 * v[i] + one_minus_b2 * (g * g);
        const double m_hat = m[i] / args.bias_correction1;
        const double v_hat = v[i] / args.bias_correction2;
        params[i] = params[i] - args.learning_rate * m_hat / (std::sqrt(v_hat) + args.epsilon);
    }
}

}  // namespace

const KernelTable& scalar_kernels() {
    static const KernelTable table{
        Isa::Scalar, "scalar", dot_scalar, axpy_scalar, nearest_color_scalar, adam_update_scalar,
    };
    return table;
}

}  // namespace advpatch::simd
