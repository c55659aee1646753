#include "advpatch/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include <fmt/format.h>

#include "advpatch/errors.hpp"
#include "advpatch/image_io.hpp"
#include "advpatch/io_util.hpp"
#include "advpatch/rng.hpp"
#include "advpatch/trainer.hpp"

namespace advpatch {

std::string_view condition_name(ConditionKind kind) {
    switch (kind) {
        case ConditionKind::Clean:
            return "CLEAN";
        case ConditionKind::Noise:
            return "NOISE";
        case ConditionKind::ObjCls:
            return "OBJ-CLS";
        case ConditionKind::Obj:
            return "OBJ";
        case ConditionKind::Cls:
            return "CLS";
    }
    return "?";
}

ConditionKind parse_condition(std::string_view text) {
    for (ConditionKind k : kConditionOrder) {
        if (text == condition_name(k)) {
            return k;
        }
    }
    if (text == "OBJ_CLS") {
        return ConditionKind::ObjCls;
    }
    throw std::invalid_argument("unknown condition '" + std::string(text) + "'");
}

bool is_trained(ConditionKind kind) {
    return kind == ConditionKind::Obj || kind == ConditionKind::Cls || kind == ConditionKind::ObjCls;
}

std::uint64_t patch_hash(const Patch& patch) {
    std::vector<std::uint8_t> bytes;
    write_patch_block(bytes, patch.pixels());
    return fnv1a64(bytes);
}

std::vector<ImageResult> evaluate_condition(const DetectorAdapter& detector, const Dataset& dataset,
                                            const EvalCondition& condition,
                                            const TransformConfig& transform, std::uint64_t seed,
                                            const EvalOptions& options) {
    if (options.passes < 1) {
        throw std::invalid_argument("eval passes must be >= 1");
    }
    std::optional<Patch> patch;
    if (is_trained(condition.kind)) {
        if (!condition.patch) {
            throw std::invalid_argument(std::string("condition ") +
                                        std::string(condition_name(condition.kind)) + " needs a patch");
        }
        if (condition.expected_hash && patch_hash(*condition.patch) != *condition.expected_hash) {
            throw IntegrityError(fmt::format("patch for {} has hash {} but the manifest records {}",
                                             condition_name(condition.kind),
                                             to_hex(patch_hash(*condition.patch)),
                                             to_hex(*condition.expected_hash)));
        }
        patch = condition.patch;
    } else if (condition.kind == ConditionKind::Noise) {
        patch = init_patch(options.noise_patch_size, options.noise_patch_size, InitMode::Random,
                           derive_seed(seed, {0x0153}));
    }

    std::vector<ImageResult> out;
    for (int pass = 0; pass < options.passes; ++pass) {
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            const LabeledImage& item = dataset.images[i];
            ImageResult r;
            r.path = item.path;
            for (const auto& b : item.boxes) {
                r.ground_truth.push_back(b.box);
            }
            DetectionGrid grid;
            if (patch) {
                const auto params = sample_box_transforms(transform, seed, {static_cast<std::uint64_t>(pass), 0}, i,
                                                          r.ground_truth.size());
                grid = detector.forward(apply_patch(item.image, *patch, r.ground_truth, params, transform).image);
            } else {
                grid = detector.forward(item.image);
            }
            for (auto& d : decode_detections(grid, 0.0, options.nms_iou)) {
                if (d.class_index == detector.person_class_index()) {
                    r.detections.push_back(d);
                }
            }
            out.push_back(std::move(r));
        }
    }
    return out;
}

std::vector<ScoredDetection> match_detections(std::span<const ImageResult> results, double iou_threshold,
                                              double min_confidence) {
    std::vector<ScoredDetection> out;
    for (const auto& r : results) {
        std::vector<const Detection*> order;
        for (const auto& d : r.detections) {
            if (d.confidence >= min_confidence) {
                order.push_back(&d);
            }
        }
        std::stable_sort(order.begin(), order.end(),
                         [](const Detection* a, const Detection* b) { return a->confidence > b->confidence; });
        std::vector<bool> taken(r.ground_truth.size(), false);
        for (const Detection* d : order) {
            double best = -1.0;
            std::size_t best_gt = 0;
            for (std::size_t g = 0; g < r.ground_truth.size(); ++g) {
                if (taken[g]) {
                    continue;
                }
                const double o = iou(d->box, r.ground_truth[g]);
                if (o > best) {
                    best = o;
                    best_gt = g;
                }
            }
            const bool tp = best >= iou_threshold;
            if (tp) {
                taken[best_gt] = true;
            }
            out.push_back({d->confidence, tp});
        }
    }
    return out;
}

std::size_t count_ground_truth(std::span<const ImageResult> results) {
    std::size_t n = 0;
    for (const auto& r : results) {
        n += r.ground_truth.size();
    }
    return n;
}

PRCurve curve_from_matches(std::vector<ScoredDetection> matches, std::size_t ground_truth_count) {
    if (ground_truth_count == 0) {
        throw std::invalid_argument("pr_curve: no ground-truth boxes");
    }
    std::stable_sort(matches.begin(), matches.end(),
                     [](const ScoredDetection& a, const ScoredDetection& b) { return a.confidence > b.confidence; });
    const double n_gt = static_cast<double>(ground_truth_count);
    std::vector<PRPoint> desc;
    std::size_t tp = 0;
    for (std::size_t i = 0; i < matches.size(); ++i) {
        tp += matches[i].true_positive ? 1 : 0;
        if (i + 1 < matches.size() && matches[i + 1].confidence == matches[i].confidence) {
            continue;
        }
        desc.push_back({matches[i].confidence, static_cast<double>(tp) / static_cast<double>(i + 1),
                        static_cast<double>(tp) / n_gt});
    }

    // Envelope: best precision at this recall or any higher one.
    std::vector<double> envelope(desc.size());
    double running = 0.0;
    for (std::size_t i = desc.size(); i-- > 0;) {
        running = std::max(running, desc[i].precision);
        envelope[i] = running;
    }
    PRCurve curve;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < desc.size(); ++i) {
        curve.ap += (desc[i].recall - prev_recall) * envelope[i];
        prev_recall = desc[i].recall;
    }
    curve.points.assign(desc.rbegin(), desc.rend());
    return curve;
}

PRCurve pr_curve(std::span<const ImageResult> results, double iou_threshold) {
    return curve_from_matches(match_detections(results, iou_threshold), count_ground_truth(results));
}

double working_point(const PRCurve& clean_curve) {
    const PRPoint* best = nullptr;
    double best_gap = 0.0;
    for (const auto& p : clean_curve.points) {
        const double gap = std::abs(p.precision - p.recall);
        if (best == nullptr || gap < best_gap || (gap == best_gap && p.recall > best->recall)) {
            best = &p;
            best_gap = gap;
        }
    }
    return best != nullptr ? best->threshold : 0.0;
}

double recall_at(std::span<const ImageResult> results, double threshold, double iou_threshold) {
    const std::size_t n_gt = count_ground_truth(results);
    if (n_gt == 0) {
        return 0.0;
    }
    std::size_t tp = 0;
    for (const auto& m : match_detections(results, iou_threshold, threshold)) {
        tp += m.true_positive ? 1 : 0;
    }
    return 100.0 * static_cast<double>(tp) / static_cast<double>(n_gt);
}

EvalReport build_report(std::span<const ConditionResult> conditions, double iou_threshold, bool with_recall) {
    EvalReport report;
    const ConditionResult* clean = nullptr;
    for (std::size_t i = 0; i < conditions.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            if (conditions[i].kind == conditions[j].kind) {
                throw std::invalid_argument("duplicate condition " +
                                            std::string(condition_name(conditions[i].kind)));
            }
        }
        if (conditions[i].kind == ConditionKind::Clean) {
            clean = &conditions[i];
        }
    }
    if (with_recall && clean == nullptr) {
        throw std::invalid_argument("recall table needs the CLEAN condition to fix the working point");
    }
    for (ConditionKind k : kConditionOrder) {
        for (const auto& c : conditions) {
            if (c.kind == k) {
                report.curves.emplace_back(k, pr_curve(c.results, iou_threshold));
            }
        }
    }
    if (with_recall) {
        const auto it = std::find_if(report.curves.begin(), report.curves.end(),
                                     [](const auto& kc) { return kc.first == ConditionKind::Clean; });
        report.working_threshold = working_point(it->second);
        for (ConditionKind k : kConditionOrder) {
            for (const auto& c : conditions) {
                if (c.kind == k) {
                    report.recall.push_back({k, recall_at(c.results, report.working_threshold, iou_threshold),
                                             report.working_threshold});
                }
            }
        }
    }
    return report;
}

void write_report(const EvalReport& report, const std::filesystem::path& output_dir) {
    std::filesystem::create_directories(output_dir);
    for (const auto& [kind, curve] : report.curves) {
        std::string csv = "threshold,precision,recall\n";
        for (const auto& p : curve.points) {
            csv += fmt::format("{},{},{}\n", p.threshold, p.precision, p.recall);
        }
        write_file_atomic(output_dir / fmt::format("pr_{}.csv", condition_name(kind)), csv);
    }
    if (!report.recall.empty()) {
        std::string csv = "condition,recall_pct,threshold_used\n";
        for (const auto& row : report.recall) {
            csv += fmt::format("{},{},{}\n", condition_name(row.kind), row.recall_pct, row.threshold);
        }
        write_file_atomic(output_dir / "recall_summary.csv", csv);
    }
    write_png(output_dir / "pr_curves.png", render_pr_plot(report.curves));
}

std::string recall_table(const EvalReport& report) {
    std::string out = fmt::format("{:<10}{:>12}   (threshold {:.4f})\n", "Approach", "Recall (%)",
                                  report.working_threshold);
    for (const auto& row : report.recall) {
        out += fmt::format("{:<10}{:>12.2f}\n", condition_name(row.kind), row.recall_pct);
    }
    return out;
}

}  // namespace advpatch
