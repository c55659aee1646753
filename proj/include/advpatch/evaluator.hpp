#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "advpatch/applier.hpp"
#include "advpatch/data.hpp"
#include "advpatch/detector.hpp"
#include "advpatch/patch.hpp"

namespace advpatch {

enum class ConditionKind { Clean, Noise, ObjCls, Obj, Cls };

/// "CLEAN", "NOISE", "OBJ-CLS", "OBJ", "CLS".
std::string_view condition_name(ConditionKind kind);
/// Also accepts "OBJ_CLS".
ConditionKind parse_condition(std::string_view text);
bool is_trained(ConditionKind kind);

/// Summary-table order: CLEAN, NOISE, OBJ-CLS, OBJ, CLS.
inline constexpr ConditionKind kConditionOrder[] = {ConditionKind::Clean, ConditionKind::Noise,
                                                    ConditionKind::ObjCls, ConditionKind::Obj,
                                                    ConditionKind::Cls};

struct EvalCondition {
    ConditionKind kind = ConditionKind::Clean;
    std::optional<Patch> patch;                 // required for trained kinds
    std::optional<std::uint64_t> expected_hash;  // checked against patch_hash when set
};

/// FNV-1a 64 of the patch's sidecar encoding.
std::uint64_t patch_hash(const Patch& patch);

struct EvalOptions {
    double nms_iou = 0.45;
    int passes = 1;
    int noise_patch_size = 300;
};

struct ImageResult {
    std::filesystem::path path;
    std::vector<Detection> detections;  // person class, descending confidence
    std::vector<BoundingBox> ground_truth;
};

/// Runs the detector on every test image under the condition. Patched
/// conditions place the patch on each ground-truth box with transforms
/// drawn from (seed, pass, image, box), shared across conditions. NOISE uses
/// a uniform random patch derived from `seed`. Detections are kept down to
/// confidence 0. With passes > 1 every pass contributes its own results.
std::vector<ImageResult> evaluate_condition(const DetectorAdapter& detector, const Dataset& dataset,
                                            const EvalCondition& condition,
                                            const TransformConfig& transform, std::uint64_t seed,
                                            const EvalOptions& options = {});

struct ScoredDetection {
    double confidence;
    bool true_positive;
};

/// Per image, greedy matching by descending confidence: each detection takes
/// the unmatched ground-truth box of highest IoU if that IoU >= iou_threshold.
/// Only detections with confidence >= min_confidence take part.
std::vector<ScoredDetection> match_detections(std::span<const ImageResult> results, double iou_threshold,
                                              double min_confidence = 0.0);

std::size_t count_ground_truth(std::span<const ImageResult> results);

struct PRPoint {
    double threshold;
    double precision;
    double recall;

    friend bool operator==(const PRPoint&, const PRPoint&) = default;
};

struct PRCurve {
    std::vector<PRPoint> points;  // ascending threshold
    double ap = 0.0;
};

/// One point per distinct confidence; AP is the area under the all-point
/// monotone precision envelope.
PRCurve curve_from_matches(std::vector<ScoredDetection> matches, std::size_t ground_truth_count);

/// Throws std::invalid_argument when there is no ground truth.
PRCurve pr_curve(std::span<const ImageResult> results, double iou_threshold = 0.5);

/// Threshold of the curve point closest to precision == recall; ties go to
/// higher recall. Returns 0 for an empty curve.
double working_point(const PRCurve& clean_curve);

/// Percentage of ground-truth boxes matched by detections with confidence
/// >= threshold. 0 when there is no ground truth.
double recall_at(std::span<const ImageResult> results, double threshold, double iou_threshold = 0.5);

struct ConditionResult {
    ConditionKind kind;
    std::vector<ImageResult> results;
};

struct RecallRow {
    ConditionKind kind;
    double recall_pct;
    double threshold;
};

struct EvalReport {
    std::vector<std::pair<ConditionKind, PRCurve>> curves;  // summary order
    std::vector<RecallRow> recall;                          // empty if not requested
    double working_threshold = 0.0;
};

/// Throws std::invalid_argument on duplicate conditions, or when a recall
/// table is requested without CLEAN (the working point is undefined).
EvalReport build_report(std::span<const ConditionResult> conditions, double iou_threshold = 0.5,
                        bool with_recall = true);

/// Writes pr_<NAME>.csv (threshold,precision,recall), recall_summary.csv
/// (condition,recall_pct,threshold_used) and pr_curves.png.
void write_report(const EvalReport& report, const std::filesystem::path& output_dir);

std::string recall_table(const EvalReport& report);

/// Rendered PR plot with the precision == recall diagonal.
Image render_pr_plot(std::span<const std::pair<ConditionKind, PRCurve>> curves);

}  // namespace advpatch
