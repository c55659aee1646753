#include "advpatch/config.hpp"

#include <algorithm>
#include <cmath>
#include <array>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "advpatch/io_util.hpp"

namespace advpatch {
namespace {

enum class Kind { Real, Int, UInt, Text, Path, Choice };

struct KeySpec {
    std::string_view key;
    std::string_view fallback;
    Kind kind;
    std::string_view choices = {};  // '|' separated, for Kind::Choice
};

constexpr KeySpec kKeys[] = {
    {"detector.kind", "fixture", Kind::Choice, "fixture|external"},
    {"detector.seed", "1", Kind::UInt},
    {"detector.weights", "", Kind::Path},
    {"detector.classes", "", Kind::Path},
    {"detector.input_size", "416", Kind::Int},
    {"label.conf_threshold", "0.5", Kind::Real},
    {"label.nms_iou", "0.45", Kind::Real},
    {"transform.max_rotation_deg", "20", Kind::Real},
    {"transform.scale_lo", "0.8", Kind::Real},
    {"transform.scale_hi", "1.2", Kind::Real},
    {"transform.noise_amplitude", "0.1", Kind::Real},
    {"transform.brightness_lo", "-0.1", Kind::Real},
    {"transform.brightness_hi", "0.1", Kind::Real},
    {"transform.contrast_lo", "0.8", Kind::Real},
    {"transform.contrast_hi", "1.2", Kind::Real},
    {"transform.base_scale", "0.25", Kind::Real},
    {"loss.alpha", "0.01", Kind::Real},
    {"loss.beta", "2.5", Kind::Real},
    {"train.mode", "OBJ", Kind::Choice, "OBJ|CLS|OBJ_CLS|OBJ-CLS"},
    {"train.learning_rate", "0.03", Kind::Real},
    {"train.epochs", "1", Kind::Int},
    {"train.batch_size", "8", Kind::Int},
    {"train.seed", "0", Kind::UInt},
    {"train.patch_size", "300", Kind::Int},
    {"train.init", "random", Kind::Choice, "random|gray"},
    {"train.checkpoint_every", "0", Kind::UInt},
    {"train.adam_beta1", "0.9", Kind::Real},
    {"train.adam_beta2", "0.999", Kind::Real},
    {"train.adam_epsilon", "1e-8", Kind::Real},
    {"eval.iou_match", "0.5", Kind::Real},
    {"eval.nms_iou", "0.45", Kind::Real},
    {"eval.seed", "0", Kind::UInt},
    {"eval.passes", "1", Kind::Int},
    {"paths.train_images", "", Kind::Path},
    {"paths.train_labels", "", Kind::Path},
    {"paths.test_images", "", Kind::Path},
    {"paths.test_labels", "", Kind::Path},
    {"paths.colors", "", Kind::Path},
    {"paths.output_root", "runs", Kind::Path},
};

const KeySpec* find_key(std::string_view key) {
    for (const auto& k : kKeys) {
        if (k.key == key) {
            return &k;
        }
    }
    return nullptr;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
        s.remove_prefix(1);
    }
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
        s.remove_suffix(1);
    }
    return s;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
    if (!s.empty() && s.front() == '+') {
        s.remove_prefix(1);
    }
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && p == s.data() + s.size();
}

void validate_value(const KeySpec& spec, std::string_view value) {
    bool ok = true;
    switch (spec.kind) {
        case Kind::Real: {
            double v;
            ok = parse_number(value, v) && std::isfinite(v);
            break;
        }
        case Kind::Int: {
            std::int64_t v;
            ok = parse_number(value, v);
            break;
        }
        case Kind::UInt: {
            std::uint64_t v;
            ok = parse_number(value, v);
            break;
        }
        case Kind::Choice: {
            ok = false;
            std::string_view rest = spec.choices;
            while (!rest.empty()) {
                const auto bar = rest.find('|');
                if (rest.substr(0, bar) == value) {
                    ok = true;
                }
                rest = bar == std::string_view::npos ? std::string_view{} : rest.substr(bar + 1);
            }
            break;
        }
        case Kind::Text:
        case Kind::Path:
            break;
    }
    if (!ok) {
        throw ConfigError(fmt::format("invalid value '{}' for {}", value, spec.key));
    }
}

}  // namespace

RunConfig::RunConfig() {
    for (const auto& k : kKeys) {
        values_.emplace(std::string(k.key), std::string(k.fallback));
    }
}

RunConfig RunConfig::parse(std::string_view text, const std::filesystem::path& base_dir) {
    RunConfig cfg;
    cfg.base_dir_ = base_dir;
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        const std::string_view body = trim(line);
        if (body.empty()) {
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError(fmt::format("line {}: expected 'section.key = value'", line_no));
        }
        try {
            cfg.set(trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(fmt::format("line {}: {}", line_no, e.what()));
        }
    }
    return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config file '" + path.string() + "'");
    }
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse(ss.str(), path.parent_path());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void RunConfig::set(std::string_view key, std::string_view value) {
    const KeySpec* spec = find_key(key);
    if (spec == nullptr) {
        throw ConfigError(fmt::format("unknown config key '{}'", key));
    }
    validate_value(*spec, value);
    values_[std::string(key)] = std::string(value);
}

void RunConfig::apply_override(std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) {
        throw ConfigError(fmt::format("override '{}' is not key=value", assignment));
    }
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string& RunConfig::get(std::string_view key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) {
        throw ConfigError(fmt::format("unknown config key '{}'", key));
    }
    return it->second;
}

double RunConfig::get_double(std::string_view key) const {
    double v = 0.0;
    parse_number(std::string_view(get(key)), v);
    return v;
}

std::int64_t RunConfig::get_int(std::string_view key) const {
    std::int64_t v = 0;
    parse_number(std::string_view(get(key)), v);
    return v;
}

std::uint64_t RunConfig::get_uint(std::string_view key) const {
    std::uint64_t v = 0;
    parse_number(std::string_view(get(key)), v);
    return v;
}

std::filesystem::path RunConfig::get_path(std::string_view key) const {
    const std::string& v = get(key);
    if (v.empty()) {
        return {};
    }
    const std::filesystem::path p(v);
    return p.is_absolute() || base_dir_.empty() ? p : base_dir_ / p;
}

std::string RunConfig::canonical_text() const {
    std::string out;
    for (const auto& [k, v] : values_) {
        out += k + " = " + v + "\n";
    }
    return out;
}

std::uint64_t RunConfig::hash() const {
    const std::string text = canonical_text();
    return fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

TransformConfig RunConfig::transform() const {
    TransformConfig t;
    t.max_rotation_deg = get_double("transform.max_rotation_deg");
    t.scale_lo = get_double("transform.scale_lo");
    t.scale_hi = get_double("transform.scale_hi");
    t.noise_amplitude = get_double("transform.noise_amplitude");
    t.brightness_lo = get_double("transform.brightness_lo");
    t.brightness_hi = get_double("transform.brightness_hi");
    t.contrast_lo = get_double("transform.contrast_lo");
    t.contrast_hi = get_double("transform.contrast_hi");
    t.base_scale = get_double("transform.base_scale");
    try {
        t.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return t;
}

LossWeights RunConfig::loss_weights() const {
    return {get_double("loss.alpha"), get_double("loss.beta")};
}

TrainConfig RunConfig::train() const {
    TrainConfig c;
    c.mode = parse_score_mode(get("train.mode"));
    c.weights = loss_weights();
    c.learning_rate = get_double("train.learning_rate");
    c.epochs = static_cast<int>(get_int("train.epochs"));
    c.batch_size = static_cast<std::size_t>(std::max<std::int64_t>(0, get_int("train.batch_size")));
    c.seed = get_uint("train.seed");
    c.patch_size = static_cast<int>(get_int("train.patch_size"));
    c.init = get("train.init") == "gray" ? InitMode::Gray : InitMode::Random;
    c.checkpoint_every = get_uint("train.checkpoint_every");
    c.adam = {get_double("train.adam_beta1"), get_double("train.adam_beta2"), get_double("train.adam_epsilon")};
    c.transform = transform();
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return c;
}

EvalOptions RunConfig::eval_options() const {
    EvalOptions o;
    o.nms_iou = get_double("eval.nms_iou");
    o.passes = static_cast<int>(get_int("eval.passes"));
    o.noise_patch_size = static_cast<int>(get_int("train.patch_size"));
    if (o.passes < 1 || o.noise_patch_size < 1) {
        throw ConfigError("eval.passes and train.patch_size must be >= 1");
    }
    return o;
}

PrintableColorSet RunConfig::printable_colors() const {
    const auto path = get_path("paths.colors");
    if (!path.empty()) {
        return load_printable_colors(path);
    }
    std::vector<std::array<double, 3>> lattice;
    for (double r : {0.0, 0.5, 1.0}) {
        for (double g : {0.0, 0.5, 1.0}) {
            for (double b : {0.0, 0.5, 1.0}) {
                lattice.push_back({r, g, b});
            }
        }
    }
    return PrintableColorSet(lattice);
}

std::unique_ptr<DetectorAdapter> RunConfig::make_detector() const {
    if (get("detector.kind") == "fixture") {
        return std::make_unique<ConvDetector>(fixture_detector(get_uint("detector.seed")));
    }
    const auto weights = get_path("detector.weights");
    const auto classes = get_path("detector.classes");
    if (weights.empty() || classes.empty()) {
        throw ConfigError("external detector needs detector.weights and detector.classes");
    }
    return std::make_unique<ConvDetector>(ConvDetector::load(weights, classes));
}

}  // namespace advpatch
