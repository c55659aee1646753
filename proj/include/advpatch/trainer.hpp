#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advpatch/applier.hpp"
#include "advpatch/data.hpp"
#include "advpatch/detector.hpp"
#include "advpatch/patch.hpp"

namespace advpatch {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct TrainConfig {
    ScoreMode mode = ScoreMode::Obj;
    LossWeights weights;
    double learning_rate = 0.03;
    int epochs = 1;
    std::size_t batch_size = 8;
    std::uint64_t seed = 0;
    int patch_size = 300;
    InitMode init = InitMode::Random;
    std::uint64_t checkpoint_every = 0;  // steps; 0 disables
    AdamConfig adam;
    TransformConfig transform;

    void validate() const;
};

/// Adam moments share the patch layout. `step` counts completed updates.
struct OptimizerState {
    Image m;
    Image v;
    std::uint64_t step = 0;

    static OptimizerState zeros_like(const Patch& patch);
    friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

struct TrainState {
    Patch patch;
    OptimizerState optimizer;
};

struct StepRecord {
    std::uint64_t step = 0;  // 1-based index of the update
    LossBreakdown loss;
};

struct TrainHistory {
    ScoreMode mode = ScoreMode::Obj;
    std::vector<StepRecord> steps;
    std::vector<double> epoch_seconds;

    /// "# mode=<MODE>" then "step,nps,tv,obj,total" rows. Timing is left out
    /// so reruns are byte-identical.
    std::string to_csv() const;
};

/// Which batch of which epoch a step works on; seeds the transforms.
struct StepPosition {
    std::uint64_t epoch = 0;
    std::uint64_t batch = 0;
};

/// Transform draws for one image's boxes. Depends only on
/// (seed, epoch, batch, image index within the batch, box index).
std::vector<TransformParams> sample_box_transforms(const TransformConfig& config, std::uint64_t seed,
                                                   const StepPosition& pos, std::size_t image_index,
                                                   std::size_t box_count);

/// Total loss for the patch on one batch, with the patch gradient written to
/// `grad` when non-null. L_obj is the batch mean of per-image max scores.
LossBreakdown patch_objective(const Patch& patch, std::span<const LabeledImage> batch,
                              const DetectorAdapter& detector, const TrainConfig& config,
                              const PrintableColorSet& colors, const StepPosition& pos,
                              Image* grad = nullptr);

/// One Adam update of the patch followed by projection to [0, 1]. Throws
/// NumericalError naming the first non-finite term. Returns the loss at the
/// pre-update patch.
LossBreakdown step(Patch& patch, std::span<const LabeledImage> batch, const DetectorAdapter& detector,
                   const TrainConfig& config, const PrintableColorSet& colors, OptimizerState& state,
                   const StepPosition& pos);

struct TrainHooks {
    std::function<void(const StepRecord&)> on_step;
    std::function<void(const TrainState&)> on_checkpoint;  // every checkpoint_every steps
    std::optional<std::uint64_t> stop_after_step;           // for interrupted runs
};

struct TrainResult {
    TrainState state;
    TrainHistory history;
};

/// The patch a fresh run starts from.
Patch initial_patch(const TrainConfig& config);

/// Runs epochs x batches steps (or resumes from `resume`). Detector weights
/// are never touched. Deterministic for a fixed config.
TrainResult train(const TrainConfig& config, const DetectorAdapter& detector, const Dataset& dataset,
                  const PrintableColorSet& colors, std::optional<TrainState> resume = {},
                  const TrainHooks& hooks = {});

/// Mean over images of the per-image max score with the patch applied using
/// transforms drawn from (seed, image index).
double mean_patched_score(const Patch& patch, const Dataset& dataset, const DetectorAdapter& detector,
                          ScoreMode mode, const TransformConfig& transform, std::uint64_t seed);

// Checkpoint: "APC1", patch block, m block, v block (APF1 layout each), u64 step.
void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace advpatch
