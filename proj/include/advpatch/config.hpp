#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>

#include "advpatch/applier.hpp"
#include "advpatch/detector.hpp"
#include "advpatch/evaluator.hpp"
#include "advpatch/patch.hpp"
#include "advpatch/trainer.hpp"

namespace advpatch {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Flat "section.key = value" configuration. Every key has a default;
/// unknown keys and malformed values are rejected with ConfigError.
///
/// Relative paths are resolved against the directory of the config file.
class RunConfig {
public:
    RunConfig();

    static RunConfig parse(std::string_view text, const std::filesystem::path& base_dir = {});
    static RunConfig load(const std::filesystem::path& path);

    void set(std::string_view key, std::string_view value);
    /// "key=value".
    void apply_override(std::string_view assignment);

    const std::string& get(std::string_view key) const;
    double get_double(std::string_view key) const;
    std::int64_t get_int(std::string_view key) const;
    std::uint64_t get_uint(std::string_view key) const;
    /// Empty when unset; otherwise resolved against the base directory.
    std::filesystem::path get_path(std::string_view key) const;

    /// Sorted "key = value" lines; identical configs give identical text.
    std::string canonical_text() const;
    std::uint64_t hash() const;

    TransformConfig transform() const;
    TrainConfig train() const;
    EvalOptions eval_options() const;
    LossWeights loss_weights() const;

    /// Built-in 27-color lattice {0, 0.5, 1}^3 unless paths.colors is set.
    PrintableColorSet printable_colors() const;
    std::unique_ptr<DetectorAdapter> make_detector() const;

private:
    std::map<std::string, std::string, std::less<>> values_;
    std::filesystem::path base_dir_;
};

}  // namespace advpatch
