#include "advpatch/trainer.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>

#include <fmt/format.h>

#include "advpatch/errors.hpp"
#include "advpatch/io_util.hpp"
#include "advpatch/rng.hpp"
#include "advpatch/simd/kernels.hpp"

namespace advpatch {
namespace {

constexpr char kCheckpointMagic[4] = {'A', 'P', 'C', '1'};

std::vector<BoundingBox> boxes_of(const LabeledImage& item) {
    std::vector<BoundingBox> boxes;
    boxes.reserve(item.boxes.size());
    for (const auto& b : item.boxes) {
        boxes.push_back(b.box);
    }
    return boxes;
}

// Patch and moments are stored as float32 on disk; keeping them
// float-representable in memory makes checkpoints exact.
void round_to_float(std::span<double> values) {
    for (double& v : values) {
        v = static_cast<float>(v);
    }
}

void check_finite(double value, const char* term, std::uint64_t step) {
    if (!std::isfinite(value)) {
        throw NumericalError(fmt::format("non-finite {} loss ({}) at step {}", term, value, step));
    }
}

}  // namespace

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw std::invalid_argument("learning_rate must be finite and >= 0");
    }
    if (epochs < 1) {
        throw std::invalid_argument("epochs must be >= 1");
    }
    if (batch_size < 1) {
        throw std::invalid_argument("batch_size must be >= 1");
    }
    if (patch_size < 1) {
        throw std::invalid_argument("patch_size must be >= 1");
    }
    if (!(weights.alpha >= 0.0) || !(weights.beta >= 0.0)) {
        throw std::invalid_argument("loss weights must be >= 0");
    }
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) ||
        !(adam.epsilon > 0.0)) {
        throw std::invalid_argument("invalid Adam hyperparameters");
    }
    transform.validate();
}

OptimizerState OptimizerState::zeros_like(const Patch& patch) {
    return {Image(patch.height(), patch.width(), 3), Image(patch.height(), patch.width(), 3), 0};
}

std::string TrainHistory::to_csv() const {
    std::string out = fmt::format("# mode={}\nstep,nps,tv,obj,total\n", to_string(mode));
    for (const auto& r : steps) {
        out += fmt::format("{},{},{},{},{}\n", r.step, r.loss.nps, r.loss.tv, r.loss.obj, r.loss.total);
    }
    return out;
}

std::vector<TransformParams> sample_box_transforms(const TransformConfig& config, std::uint64_t seed,
                                                   const StepPosition& pos, std::size_t image_index,
                                                   std::size_t box_count) {
    std::vector<TransformParams> params;
    params.reserve(box_count);
    for (std::size_t b = 0; b < box_count; ++b) {
        Rng rng(derive_seed(seed, {pos.epoch, pos.batch, image_index, b}));
        params.push_back(sample_transform(config, rng));
    }
    return params;
}

LossBreakdown patch_objective(const Patch& patch, std::span<const LabeledImage> batch,
                              const DetectorAdapter& detector, const TrainConfig& config,
                              const PrintableColorSet& colors, const StepPosition& pos, Image* grad) {
    if (batch.empty()) {
        throw std::invalid_argument("patch_objective: empty batch");
    }
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    Image grad_obj;
    if (grad != nullptr) {
        grad_obj = Image(patch.height(), patch.width(), 3);
    }
    double obj_sum = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto boxes = boxes_of(batch[i]);
        const auto params = sample_box_transforms(config.transform, config.seed, pos, i, boxes.size());
        const AppliedPatch applied = apply_patch(batch[i].image, patch, boxes, params, config.transform);
        const DetectionGrid grid = detector.forward(applied.image);
        DetectionGrid score_grad;
        obj_sum += extraction_score(grid, config.mode, grad != nullptr ? &score_grad : nullptr);
        if (grad != nullptr && !boxes.empty()) {
            for (double& g : score_grad.values()) {
                g *= inv_n;
            }
            const Image grad_image = detector.backward(applied.image, score_grad);
            const Image gp = apply_patch_backward(applied, patch, grad_image);
            simd::active_kernels().axpy(1.0, gp.data(), grad_obj.data(), gp.size());
        }
    }
    const double obj = obj_sum * inv_n;

    Image grad_nps;
    Image grad_tv;
    const double nps = nps_loss(patch, colors, grad != nullptr ? &grad_nps : nullptr);
    const double tv = tv_loss(patch, grad != nullptr ? &grad_tv : nullptr);
    if (grad != nullptr) {
        const auto& k = simd::active_kernels();
        *grad = std::move(grad_obj);
        k.axpy(config.weights.alpha, grad_nps.data(), grad->data(), grad->size());
        k.axpy(config.weights.beta, grad_tv.data(), grad->data(), grad->size());
    }
    return total_loss(nps, tv, obj, config.weights);
}

LossBreakdown step(Patch& patch, std::span<const LabeledImage> batch, const DetectorAdapter& detector,
                   const TrainConfig& config, const PrintableColorSet& colors, OptimizerState& state,
                   const StepPosition& pos) {
    if (!state.m.same_shape(patch.pixels()) || !state.v.same_shape(patch.pixels())) {
        throw std::invalid_argument("optimizer state does not match patch shape");
    }
    Image grad;
    const LossBreakdown loss = patch_objective(patch, batch, detector, config, colors, pos, &grad);
    const std::uint64_t t = state.step + 1;
    check_finite(loss.nps, "nps", t);
    check_finite(loss.tv, "tv", t);
    check_finite(loss.obj, "obj", t);
    check_finite(loss.total, "total", t);
    for (double g : grad.values()) {
        if (!std::isfinite(g)) {
            throw NumericalError(fmt::format("non-finite patch gradient at step {}", t));
        }
    }

    const simd::AdamArgs args{
        config.learning_rate,
        config.adam.beta1,
        config.adam.beta2,
        config.adam.epsilon,
        1.0 - std::pow(config.adam.beta1, static_cast<double>(t)),
        1.0 - std::pow(config.adam.beta2, static_cast<double>(t)),
    };
    const auto& k = simd::active_kernels();
    patch.update([&](std::span<double> values) {
        k.adam_update(args, values.data(), grad.data(), state.m.data(), state.v.data(), values.size());
    });
    patch.update(round_to_float);
    round_to_float(state.m.values());
    round_to_float(state.v.values());
    state.step = t;
    return loss;
}

TrainResult train(const TrainConfig& config, const DetectorAdapter& detector, const Dataset& dataset,
                  const PrintableColorSet& colors, std::optional<TrainState> resume, const TrainHooks& hooks) {
    config.validate();
    if (dataset.empty()) {
        throw std::invalid_argument("train: dataset is empty");
    }
    TrainResult result;
    result.history.mode = config.mode;
    if (resume) {
        if (resume->patch.height() != config.patch_size || resume->patch.width() != config.patch_size) {
            throw std::invalid_argument("train: resumed patch size does not match patch_size");
        }
        result.state = std::move(*resume);
    } else {
        result.state.patch = initial_patch(config);
        result.state.optimizer = OptimizerState::zeros_like(result.state.patch);
    }

    const auto parts = batches(dataset, config.batch_size);
    const std::uint64_t per_epoch = parts.size();
    const std::uint64_t total = per_epoch * static_cast<std::uint64_t>(config.epochs);
    std::uint64_t stop = total;
    if (hooks.stop_after_step) {
        stop = std::min(stop, *hooks.stop_after_step);
    }

    auto& state = result.state;
    auto epoch_start = std::chrono::steady_clock::now();
    while (state.optimizer.step < stop) {
        const std::uint64_t s = state.optimizer.step;
        const StepPosition pos{s / per_epoch, s % per_epoch};
        const LossBreakdown loss =
            step(state.patch, parts[pos.batch], detector, config, colors, state.optimizer, pos);
        const StepRecord rec{state.optimizer.step, loss};
        result.history.steps.push_back(rec);
        if (hooks.on_step) {
            hooks.on_step(rec);
        }
        if (config.checkpoint_every > 0 && state.optimizer.step % config.checkpoint_every == 0 &&
            hooks.on_checkpoint) {
            hooks.on_checkpoint(state);
        }
        if (state.optimizer.step % per_epoch == 0) {
            const auto now = std::chrono::steady_clock::now();
            result.history.epoch_seconds.push_back(std::chrono::duration<double>(now - epoch_start).count());
            epoch_start = now;
        }
    }
    return result;
}

Patch initial_patch(const TrainConfig& config) {
    return init_patch(config.patch_size, config.patch_size, config.init, derive_seed(config.seed, {0x9a7c}));
}

double mean_patched_score(const Patch& patch, const Dataset& dataset, const DetectorAdapter& detector,
                          ScoreMode mode, const TransformConfig& transform, std::uint64_t seed) {
    if (dataset.empty()) {
        throw std::invalid_argument("mean_patched_score: empty dataset");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto& item = dataset.images[i];
        const auto boxes = boxes_of(item);
        const auto params = sample_box_transforms(transform, seed, {0, 0}, i, boxes.size());
        const auto applied = apply_patch(item.image, patch, boxes, params, transform);
        sum += extraction_score(detector.forward(applied.image), mode);
    }
    return sum / static_cast<double>(dataset.size());
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
    std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
    write_patch_block(out, state.patch.pixels());
    write_patch_block(out, state.optimizer.m);
    write_patch_block(out, state.optimizer.v);
    put_u64(out, state.optimizer.step);
    write_file_atomic(path, out);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() < 4) {
        throw FormatError("truncated checkpoint header", bytes.size());
    }
    if (!std::equal(std::begin(kCheckpointMagic), std::end(kCheckpointMagic), bytes.begin())) {
        throw FormatError("bad checkpoint magic, expected APC1", 0);
    }
    std::size_t offset = 4;
    Image patch = read_patch_block(bytes, offset);
    const std::size_t m_at = offset;
    Image m = read_patch_block(bytes, offset);
    const std::size_t v_at = offset;
    Image v = read_patch_block(bytes, offset);
    if (patch.channels() != 3) {
        throw FormatError("checkpoint patch must have 3 channels", 4);
    }
    if (!m.same_shape(patch)) {
        throw FormatError("first moment shape differs from patch", m_at);
    }
    if (!v.same_shape(patch)) {
        throw FormatError("second moment shape differs from patch", v_at);
    }
    if (bytes.size() < offset + 8) {
        throw FormatError("truncated step counter", bytes.size());
    }
    const std::uint64_t step_count = get_u64(bytes.data() + offset);
    offset += 8;
    if (offset != bytes.size()) {
        throw FormatError("trailing bytes after checkpoint", offset);
    }
    for (double x : patch.values()) {
        if (!(x >= 0.0 && x <= 1.0)) {
            throw FormatError("checkpoint patch value outside [0, 1]", 4);
        }
    }
    return {Patch::from_image(std::move(patch)), {std::move(m), std::move(v), step_count}};
}

}  // namespace advpatch
