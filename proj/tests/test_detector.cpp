#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "advpatch/detector.hpp"
#include "advpatch/errors.hpp"
#include "advpatch/io_util.hpp"
#include "test_support.hpp"

namespace advpatch {
namespace {

using testing::random_image;
using testing::relative_error;
using testing::TempDir;

// One person class; every anchor set to a box of `w` x `h` cells at the cell
// center with the given objectness.
DetectionGrid single_class_grid(int rows, int cols, int anchors) {
    return DetectionGrid(rows, cols, anchors, 1, 0);
}

void set_anchor(DetectionGrid& g, int r, int c, int a, double obj, double person, double w = 1.0,
                double h = 1.0) {
    double* v = g.anchor(r, c, a);
    v[DetectionGrid::kX] = 0.5;
    v[DetectionGrid::kY] = 0.5;
    v[DetectionGrid::kW] = w;
    v[DetectionGrid::kH] = h;
    v[DetectionGrid::kObj] = obj;
    v[DetectionGrid::kCls] = person;
}

DetectionGrid random_grid(std::uint64_t seed) {
    Rng rng(seed);
    DetectionGrid g(3, 4, 2, 2, 0);
    for (std::size_t f = 0; f < g.cell_count(); ++f) {
        double* v = g.anchor(f);
        v[DetectionGrid::kX] = uniform01(rng);
        v[DetectionGrid::kY] = uniform01(rng);
        v[DetectionGrid::kW] = uniform(rng, 0.2, 2.0);
        v[DetectionGrid::kH] = uniform(rng, 0.2, 2.0);
        v[DetectionGrid::kObj] = uniform01(rng);
        const double p = uniform01(rng);
        v[DetectionGrid::kCls] = p;
        v[DetectionGrid::kCls + 1] = 1.0 - p;
    }
    return g;
}

// Brute-force greedy NMS: repeatedly take the most confident remaining box.
std::vector<Detection> nms_oracle(std::vector<Detection> d, double nms_iou) {
    std::vector<Detection> out;
    while (!d.empty()) {
        auto best = std::max_element(d.begin(), d.end(),
                                     [](const Detection& a, const Detection& b) { return a.confidence < b.confidence; });
        const Detection keep = *best;
        out.push_back(keep);
        std::vector<Detection> rest;
        for (const auto& x : d) {
            if (&x != &*best && !(x.class_index == keep.class_index && iou(x.box, keep.box) >= nms_iou)) {
                rest.push_back(x);
            }
        }
        d = std::move(rest);
    }
    return out;
}

TEST(DetectionGrid, LayoutAccessors) {
    DetectionGrid g(2, 3, 4, 5, 2);
    EXPECT_EQ(g.vector_length(), 10);
    EXPECT_EQ(g.cell_count(), 24u);
    EXPECT_EQ(g.values().size(), 240u);
    g.anchor(1, 2, 3)[DetectionGrid::kObj] = 0.25;
    EXPECT_EQ(g.objectness(23), 0.25);
    g.anchor(1, 2, 3)[DetectionGrid::kCls + 2] = 0.75;
    EXPECT_EQ(g.person_prob(23), 0.75);
}

TEST(ExtractionScore, ZeroGridScoresZeroInEveryMode) {
    const DetectionGrid g = single_class_grid(2, 2, 3);
    for (ScoreMode m : {ScoreMode::Obj, ScoreMode::Cls, ScoreMode::ObjCls}) {
        EXPECT_EQ(extraction_score(g, m), 0.0);
    }
}

TEST(ExtractionScore, ObjIsMaxObjectness) {
    DetectionGrid g = single_class_grid(1, 1, 2);
    set_anchor(g, 0, 0, 0, 0.3, 0.5);
    set_anchor(g, 0, 0, 1, 0.7, 0.5);
    EXPECT_EQ(extraction_score(g, ScoreMode::Obj), 0.7);
}

TEST(ExtractionScore, ObjClsIsMaxProduct) {
    DetectionGrid g = single_class_grid(1, 2, 1);
    set_anchor(g, 0, 0, 0, 0.8, 0.5);
    set_anchor(g, 0, 1, 0, 0.6, 0.9);
    const double s = extraction_score(g, ScoreMode::ObjCls);
    EXPECT_NEAR(s, 0.54, 1e-12);
    EXPECT_EQ(s, std::max(0.8 * 0.5, 0.6 * 0.9));
}

TEST(ExtractionScore, GradientFlowsToFirstArgmaxOnly) {
    DetectionGrid g = single_class_grid(1, 3, 1);
    set_anchor(g, 0, 0, 0, 0.2, 0.5);
    set_anchor(g, 0, 1, 0, 0.9, 0.4);
    set_anchor(g, 0, 2, 0, 0.9, 0.3);
    DetectionGrid grad;
    extraction_score(g, ScoreMode::ObjCls, &grad);
    ASSERT_TRUE(grad.same_shape(g));
    double total = 0.0;
    for (double v : grad.values()) {
        total += std::abs(v);
    }
    EXPECT_EQ(grad.anchor(0, 1, 0)[DetectionGrid::kObj], 0.4);
    EXPECT_EQ(grad.anchor(0, 1, 0)[DetectionGrid::kCls], 0.9);
    EXPECT_NEAR(total, 1.3, 1e-12);
}

TEST(ExtractionScore, MonotoneAndObjClsBoundedByObj) {
    for (std::uint64_t s = 0; s < 50; ++s) {
        DetectionGrid g = random_grid(s);
        EXPECT_LE(extraction_score(g, ScoreMode::ObjCls), extraction_score(g, ScoreMode::Obj));
        const double before = extraction_score(g, ScoreMode::Obj);
        g.anchor(s % g.cell_count())[DetectionGrid::kObj] += 0.05;
        EXPECT_GE(extraction_score(g, ScoreMode::Obj), before);
    }
}

TEST(ScoreMode, ParsesAllSpellings) {
    EXPECT_EQ(parse_score_mode("OBJ"), ScoreMode::Obj);
    EXPECT_EQ(parse_score_mode("CLS"), ScoreMode::Cls);
    EXPECT_EQ(parse_score_mode("OBJ_CLS"), ScoreMode::ObjCls);
    EXPECT_EQ(parse_score_mode("OBJ-CLS"), ScoreMode::ObjCls);
    EXPECT_THROW(parse_score_mode("obj"), std::invalid_argument);
    EXPECT_EQ(to_string(ScoreMode::ObjCls), "OBJ_CLS");
}

TEST(DecodeDetections, NothingAboveThreshold) {
    const DetectionGrid g = single_class_grid(3, 3, 2);
    EXPECT_TRUE(decode_detections(g, 0.1, 0.5).empty());
}

TEST(DecodeDetections, IdenticalBoxesKeepHigherConfidence) {
    DetectionGrid g = single_class_grid(1, 1, 2);
    set_anchor(g, 0, 0, 0, 0.8, 1.0);
    set_anchor(g, 0, 0, 1, 0.9, 1.0);
    const auto d = decode_detections(g, 0.1, 0.5);
    ASSERT_EQ(d.size(), 1u);
    EXPECT_EQ(d[0].confidence, 0.9);
}

TEST(DecodeDetections, DisjointBoxesSortedByConfidence) {
    DetectionGrid g = single_class_grid(1, 3, 1);
    set_anchor(g, 0, 0, 0, 0.5, 1.0, 0.8, 0.8);
    set_anchor(g, 0, 1, 0, 0.9, 1.0, 0.8, 0.8);
    set_anchor(g, 0, 2, 0, 0.7, 1.0, 0.8, 0.8);
    const auto d = decode_detections(g, 0.1, 0.5);
    ASSERT_EQ(d.size(), 3u);
    EXPECT_EQ(d[0].confidence, 0.9);
    EXPECT_EQ(d[1].confidence, 0.7);
    EXPECT_EQ(d[2].confidence, 0.5);
    std::vector<Detection> all(d);
    EXPECT_EQ(nms_oracle(all, 0.5), d);
}

TEST(DecodeDetections, BoxGeometry) {
    DetectionGrid g = single_class_grid(2, 4, 1);
    double* v = g.anchor(1, 2, 0);
    v[DetectionGrid::kX] = 0.25;
    v[DetectionGrid::kY] = 0.75;
    v[DetectionGrid::kW] = 2.0;
    v[DetectionGrid::kH] = 1.0;
    v[DetectionGrid::kObj] = 0.8;
    v[DetectionGrid::kCls] = 0.5;
    const auto d = decode_detections(g, 0.0, 0.5);
    ASSERT_EQ(d.size(), 1u);
    EXPECT_DOUBLE_EQ(d[0].box.cx, 2.25 / 4.0);
    EXPECT_DOUBLE_EQ(d[0].box.cy, 1.75 / 2.0);
    EXPECT_DOUBLE_EQ(d[0].box.w, 0.5);
    EXPECT_DOUBLE_EQ(d[0].box.h, 0.5);
    EXPECT_EQ(d[0].confidence, d[0].objectness * d[0].class_prob);
}

TEST(DecodeDetections, MatchesBruteForceNmsOnRandomGrids) {
    for (std::uint64_t s = 0; s < 100; ++s) {
        const DetectionGrid g = random_grid(s + 1000);
        const auto all = decode_detections(g, 0.0, 1.1);  // IoU never reaches 1.1: no suppression
        for (double thr : {0.3, 0.5}) {
            std::vector<Detection> kept;
            std::copy_if(all.begin(), all.end(), std::back_inserter(kept),
                         [&](const Detection& d) { return d.confidence >= 0.1; });
            const auto expect = nms_oracle(kept, thr);
            const auto got = decode_detections(g, 0.1, thr);
            ASSERT_EQ(got.size(), expect.size());
            for (std::size_t i = 0; i < got.size(); ++i) {
                EXPECT_EQ(got[i].confidence, expect[i].confidence);
            }
        }
    }
}

TEST(DecodeDetections, CountNonIncreasingInThreshold) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const DetectionGrid g = random_grid(s + 2000);
        std::size_t prev = decode_detections(g, 0.0, 0.45).size();
        for (double t = 0.05; t <= 1.0; t += 0.05) {
            const std::size_t n = decode_detections(g, t, 0.45).size();
            EXPECT_LE(n, prev);
            prev = n;
        }
        EXPECT_EQ(decode_detections(g, 0.3, 0.45), decode_detections(g, 0.3, 0.45));
    }
}

class FixtureDetector : public ::testing::Test {
protected:
    ConvDetector det_ = fixture_detector(1);
};

TEST_F(FixtureDetector, GridIsThirtyTwoTimesSmaller) {
    EXPECT_EQ(det_.stride(), 32);
    const DetectionGrid g = det_.forward(Image(416, 416, 3, 0.3));
    EXPECT_EQ(g.rows(), 13);
    EXPECT_EQ(g.cols(), 13);
    EXPECT_EQ(g.anchors(), 3);
    EXPECT_EQ(g.classes(), 2);
    EXPECT_EQ(g.person_class_index(), 0);
}

TEST_F(FixtureDetector, RejectsBadShapes) {
    EXPECT_THROW(det_.forward(Image(415, 415, 3)), std::invalid_argument);
    EXPECT_THROW(det_.forward(Image(64, 96, 1)), std::invalid_argument);
    EXPECT_NO_THROW(det_.forward(Image(64, 96, 3)));
}

TEST_F(FixtureDetector, DeterministicAndInRange) {
    const Image img = random_image(128, 96, 3, 5);
    const DetectionGrid a = det_.forward(img);
    EXPECT_EQ(a, det_.forward(img));
    EXPECT_EQ(a, fixture_detector(1).forward(img));
    EXPECT_NE(a, fixture_detector(2).forward(img));
    const DetectionGrid z = det_.forward(Image(64, 64, 3, 0.0));
    for (std::size_t f = 0; f < z.cell_count(); ++f) {
        for (int k = 0; k < z.vector_length(); ++k) {
            ASSERT_TRUE(std::isfinite(z.anchor(f)[k]));
        }
        EXPECT_GE(z.objectness(f), 0.0);
        EXPECT_LE(z.objectness(f), 1.0);
        double sum = 0.0;
        for (int k = 0; k < z.classes(); ++k) {
            sum += z.anchor(f)[DetectionGrid::kCls + k];
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST_F(FixtureDetector, MidGrayCalibration) {
    const DetectionGrid g = det_.forward(Image(64, 64, 3, 0.5));
    for (std::size_t f = 0; f < g.cell_count(); ++f) {
        EXPECT_NEAR(g.objectness(f), 1.0 / (1.0 + std::exp(4.0)), 1e-12);
    }
}

TEST_F(FixtureDetector, BatchForwardMatchesSingle) {
    const std::vector<Image> imgs{random_image(64, 64, 3, 1), random_image(64, 64, 3, 2)};
    const auto grids = det_.forward(imgs);
    ASSERT_EQ(grids.size(), 2u);
    EXPECT_EQ(grids[1], det_.forward(imgs[1]));
}

TEST_F(FixtureDetector, ObjectnessGradientIsNonzeroAndMatchesProbe) {
    const Image img = random_image(64, 64, 3, 9);
    DetectionGrid dgrid;
    extraction_score(det_.forward(img), ScoreMode::Obj, &dgrid);
    const Image grad = det_.backward(img, dgrid);
    ASSERT_TRUE(grad.same_shape(img));
    std::size_t arg = 0;
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (std::abs(grad.values()[i]) > std::abs(grad.values()[arg])) {
            arg = i;
        }
    }
    ASSERT_GT(std::abs(grad.values()[arg]), 0.0);
    const double h = 1e-5;
    Image plus = img;
    Image minus = img;
    plus.values()[arg] += h;
    minus.values()[arg] -= h;
    const double fd = (extraction_score(det_.forward(plus), ScoreMode::Obj) -
                       extraction_score(det_.forward(minus), ScoreMode::Obj)) /
                      (2 * h);
    EXPECT_LT(relative_error(grad.values()[arg], fd), 1e-4);
}

TEST_F(FixtureDetector, BackwardIsVectorJacobianProduct) {
    // Random cotangent over every grid value, checked along random pixels.
    const Image img = random_image(64, 64, 3, 21);
    const DetectionGrid g = det_.forward(img);
    DetectionGrid cot(g.rows(), g.cols(), g.anchors(), g.classes(), g.person_class_index());
    Rng rng(22);
    for (double& v : cot.values()) {
        v = uniform(rng, -1.0, 1.0);
    }
    auto objective = [&](const Image& x) {
        const DetectionGrid out = det_.forward(x);
        double s = 0.0;
        for (std::size_t i = 0; i < out.values().size(); ++i) {
            s += out.values()[i] * cot.values()[i];
        }
        return s;
    };
    const Image grad = det_.backward(img, cot);
    const double h = 1e-5;
    for (int k = 0; k < 10; ++k) {
        const std::size_t i = uniform_index(rng, img.size());
        Image plus = img;
        Image minus = img;
        plus.values()[i] += h;
        minus.values()[i] -= h;
        const double fd = (objective(plus) - objective(minus)) / (2 * h);
        EXPECT_LT(relative_error(grad.values()[i], fd), 1e-4) << "pixel " << i;
    }
}

TEST_F(FixtureDetector, WeightsFileRoundTrip) {
    TempDir dir;
    det_.save_weights(dir / "w.apw");
    write_file_atomic(dir / "names.txt", "clutter\nperson\n");
    const ConvDetector loaded = ConvDetector::load(dir / "w.apw", dir / "names.txt");
    EXPECT_EQ(loaded.person_class_index(), 1);
    EXPECT_EQ(loaded.stride(), 32);
    const Image img = random_image(64, 64, 3, 4);
    EXPECT_EQ(loaded.forward(img).values().size(), det_.forward(img).values().size());
    const auto a = loaded.forward(img);
    const auto b = det_.forward(img);
    for (std::size_t i = 0; i < a.values().size(); ++i) {
        ASSERT_EQ(a.values()[i], b.values()[i]);
    }
}

TEST_F(FixtureDetector, LoadRejectsBadInputs) {
    TempDir dir;
    det_.save_weights(dir / "w.apw");
    write_file_atomic(dir / "nobody.txt", "car\ntree\n");
    EXPECT_THROW(ConvDetector::load(dir / "w.apw", dir / "nobody.txt"), std::invalid_argument);
    write_file_atomic(dir / "names.txt", "person\nclutter\n");
    write_file_atomic(dir / "bad.apw", std::string_view("APX1\0\0\0\0", 8));
    try {
        ConvDetector::load(dir / "bad.apw", dir / "names.txt");
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 0u);
    }
    auto bytes = read_file_bytes(dir / "w.apw");
    bytes.resize(bytes.size() / 2);
    write_file_atomic(dir / "short.apw", bytes);
    EXPECT_THROW(ConvDetector::load(dir / "short.apw", dir / "names.txt"), FormatError);
}

}  // namespace
}  // namespace advpatch
