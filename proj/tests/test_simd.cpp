#include <cmath>
#include <cstring>
#include <vector>

#include <gtest/gtest.h>

#include "advpatch/rng.hpp"
#include "advpatch/simd/kernels.hpp"

namespace advpatch::simd {
namespace {

std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (double& x : v) {
        x = uniform(rng, lo, hi);
    }
    return v;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

class Avx2Equivalence : public ::testing::Test {
protected:
    void SetUp() override {
        vec_ = avx2_kernels();
        if (vec_ == nullptr || !cpu_supports(Isa::Avx2)) {
            GTEST_SKIP() << "AVX2 variant not available on this build or CPU";
        }
    }
    const KernelTable& ref_ = scalar_kernels();
    const KernelTable* vec_ = nullptr;
};

// Lengths straddling the 4-lane width and the unrolled tails.
const std::size_t kLengths[] = {0, 1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 31, 64, 97, 1000};

TEST(ScalarKernels, DotMatchesNaiveSum) {
    const auto a = random_vector(37, 1);
    const auto b = random_vector(37, 2);
    double expect = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        expect += a[i] * b[i];
    }
    EXPECT_EQ(scalar_kernels().dot(a.data(), b.data(), a.size()), expect);
}

TEST(ScalarKernels, NearestColorPrefersLowestIndexOnTies) {
    const double pixel[3] = {0.5, 0.5, 0.5};
    const double r[3] = {0.0, 1.0, 0.0};
    const double g[3] = {0.0, 1.0, 0.0};
    const double b[3] = {0.0, 1.0, 0.0};
    const NearestColor nc = scalar_kernels().nearest_color(pixel, r, g, b, 3);
    EXPECT_EQ(nc.index, 0u);
    EXPECT_DOUBLE_EQ(nc.distance_sq, 0.75);
}

TEST(ScalarKernels, AdamFirstStepMovesByLearningRate) {
    // With zero moments, the bias-corrected first update is lr * g / (|g| + eps).
    double p = 0.5;
    const double g = 0.2;
    double m = 0.0;
    double v = 0.0;
    const AdamArgs args{0.01, 0.9, 0.999, 1e-8, 1.0 - 0.9, 1.0 - 0.999};
    scalar_kernels().adam_update(args, &p, &g, &m, &v, 1);
    EXPECT_NEAR(p, 0.5 - 0.01, 1e-9);
    EXPECT_DOUBLE_EQ(m, 0.1 * g);
}

TEST_F(Avx2Equivalence, DotAgreesWithinRounding) {
    for (std::size_t n : kLengths) {
        const auto a = random_vector(n, 10 + n);
        const auto b = random_vector(n, 20 + n);
        const double s = ref_.dot(a.data(), b.data(), n);
        const double v = vec_->dot(a.data(), b.data(), n);
        double abs_sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            abs_sum += std::abs(a[i] * b[i]);
        }
        EXPECT_LE(std::abs(s - v), 1e-15 * (abs_sum + 1.0) * static_cast<double>(n + 1)) << "n=" << n;
    }
}

TEST_F(Avx2Equivalence, AxpyIsBitwiseIdentical) {
    for (std::size_t n : kLengths) {
        const auto x = random_vector(n, 30 + n);
        auto y_ref = random_vector(n, 40 + n);
        auto y_vec = y_ref;
        ref_.axpy(-0.37, x.data(), y_ref.data(), n);
        vec_->axpy(-0.37, x.data(), y_vec.data(), n);
        EXPECT_TRUE(bitwise_equal(y_ref, y_vec)) << "n=" << n;
    }
}

TEST_F(Avx2Equivalence, NearestColorIsIdenticalIncludingTies) {
    for (std::size_t n : kLengths) {
        if (n == 0) {
            continue;
        }
        // Coarse lattice values make exact ties common.
        Rng rng(50 + n);
        std::vector<double> r(n), g(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            r[i] = static_cast<double>(uniform_index(rng, 3)) * 0.5;
            g[i] = static_cast<double>(uniform_index(rng, 3)) * 0.5;
            b[i] = static_cast<double>(uniform_index(rng, 3)) * 0.5;
        }
        for (int k = 0; k < 50; ++k) {
            double px[3];
            for (double& c : px) {
                c = k % 2 == 0 ? static_cast<double>(uniform_index(rng, 5)) * 0.25 : uniform01(rng);
            }
            const NearestColor a = ref_.nearest_color(px, r.data(), g.data(), b.data(), n);
            const NearestColor c = vec_->nearest_color(px, r.data(), g.data(), b.data(), n);
            EXPECT_EQ(a.index, c.index) << "n=" << n << " k=" << k;
            EXPECT_EQ(a.distance_sq, c.distance_sq);
        }
    }
}

TEST_F(Avx2Equivalence, AdamUpdateIsBitwiseIdentical) {
    for (std::size_t n : kLengths) {
        auto p_ref = random_vector(n, 60 + n, 0.0, 1.0);
        const auto grad = random_vector(n, 70 + n);
        auto m_ref = random_vector(n, 80 + n, -0.1, 0.1);
        auto v_ref = random_vector(n, 90 + n, 0.0, 0.1);
        auto p_vec = p_ref;
        auto m_vec = m_ref;
        auto v_vec = v_ref;
        const AdamArgs args{0.03, 0.9, 0.999, 1e-8, 1.0 - std::pow(0.9, 7), 1.0 - std::pow(0.999, 7)};
        ref_.adam_update(args, p_ref.data(), grad.data(), m_ref.data(), v_ref.data(), n);
        vec_->adam_update(args, p_vec.data(), grad.data(), m_vec.data(), v_vec.data(), n);
        EXPECT_TRUE(bitwise_equal(p_ref, p_vec)) << "n=" << n;
        EXPECT_TRUE(bitwise_equal(m_ref, m_vec)) << "n=" << n;
        EXPECT_TRUE(bitwise_equal(v_ref, v_vec)) << "n=" << n;
    }
}

TEST(Dispatch, ForcingScalarSelectsScalarTable) {
    const Isa before = active_kernels().isa;
    set_active_kernels(Isa::Scalar);
    EXPECT_EQ(active_kernels().isa, Isa::Scalar);
    EXPECT_EQ(active_kernels().name, "scalar");
    set_active_kernels(before);
}

TEST(Dispatch, UnavailableVariantIsRejected) {
    if (avx2_kernels() != nullptr && cpu_supports(Isa::Avx2)) {
        GTEST_SKIP() << "AVX2 is available here";
    }
    EXPECT_THROW(set_active_kernels(Isa::Avx2), std::invalid_argument);
}

}  // namespace
}  // namespace advpatch::simd
