#include "fedmme/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <cstdlib>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "fedmme/errors.hpp"
#include "fedmme/rng.hpp"

namespace fedmme {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

std::uint32_t read_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void append_u32_le(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 24) & 0xFF));
}

std::vector<unsigned char> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<unsigned char> read_sized(const fs::path& path, std::size_t expected_bytes) {
    std::error_code ec;
    const auto actual = fs::file_size(path, ec);
    if (ec) throw Error(ErrorCode::IoFailure, "cannot stat " + path.string() + ": " + ec.message());
    if (actual != expected_bytes) {
        throw Error(ErrorCode::SizeMismatch, path.filename().string() + " has " + std::to_string(actual) +
                                                 " bytes, expected " + std::to_string(expected_bytes));
    }
    auto bytes = read_file(path);
    if (bytes.size() != expected_bytes) throw Error(ErrorCode::IoFailure, "short read on " + path.string());
    return bytes;
}

Matrix decode_matrix(const std::vector<unsigned char>& bytes, std::size_t rows, std::size_t cols,
                     const std::string& what) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows * cols; ++i) {
        const float f = std::bit_cast<float>(read_u32_le(bytes.data() + 4 * i));
        if (!std::isfinite(f)) {
            throw Error(ErrorCode::NonFiniteValue,
                        what + " row " + std::to_string(i / cols) + " col " + std::to_string(i % cols));
        }
        m.data[i] = static_cast<double>(f);
    }
    return m;
}

std::size_t require_count(const json& j, const char* key) {
    const auto it = j.find(key);
    if (it == j.end() || !it->is_number_integer() || it->get<long long>() < 0) {
        throw Error(ErrorCode::ManifestMalformed, std::string("field '") + key + "' missing or not a count");
    }
    return it->get<std::size_t>();
}

std::string require_string(const json& j, const char* key) {
    const auto it = j.find(key);
    if (it == j.end() || !it->is_string()) {
        throw Error(ErrorCode::ManifestMalformed, std::string("field '") + key + "' missing or not a string");
    }
    return it->get<std::string>();
}

} // namespace

void append_f32_le(std::vector<unsigned char>& out, double value) {
    append_u32_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(value)));
}

void write_bytes(const fs::path& path, std::span<const unsigned char> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoFailure, "write failed on " + path.string());
}

void validate(const FeatureDataset& ds) {
    const std::size_t n = ds.labels.size();
    if (ds.visual_dim < 1 || ds.textual_dim < 1) throw Error(ErrorCode::InvalidSpec, "feature dims must be >= 1");
    if (ds.num_classes < 2) throw Error(ErrorCode::InvalidSpec, "num_classes must be >= 2");
    if (ds.visual.rows != n || ds.visual.cols != ds.visual_dim || ds.visual.data.size() != n * ds.visual_dim) {
        throw Error(ErrorCode::SizeMismatch, "visual matrix shape disagrees with dataset header");
    }
    if (ds.textual.rows != n || ds.textual.cols != ds.textual_dim ||
        ds.textual.data.size() != n * ds.textual_dim) {
        throw Error(ErrorCode::SizeMismatch, "textual matrix shape disagrees with dataset header");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (ds.labels[i] >= ds.num_classes) {
            throw Error(ErrorCode::LabelOutOfRange, "sample " + std::to_string(i) + " has label " +
                                                        std::to_string(ds.labels[i]) + " >= " +
                                                        std::to_string(ds.num_classes));
        }
    }
    auto finite = [](const Matrix& m) { return std::all_of(m.data.begin(), m.data.end(), [](double v) { return std::isfinite(v); }); };
    if (!finite(ds.visual) || !finite(ds.textual)) throw Error(ErrorCode::NonFiniteValue, "dataset holds NaN/Inf");
}

FeatureDataset subset(const FeatureDataset& ds, std::span<const std::size_t> indices, std::string name) {
    FeatureDataset out;
    out.name = name.empty() ? ds.name : std::move(name);
    out.visual_dim = ds.visual_dim;
    out.textual_dim = ds.textual_dim;
    out.num_classes = ds.num_classes;
    out.visual = Matrix(indices.size(), ds.visual_dim);
    out.textual = Matrix(indices.size(), ds.textual_dim);
    out.labels.reserve(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const std::size_t i = indices[k];
        std::copy_n(ds.visual.row(i).begin(), ds.visual_dim, out.visual.row(k).begin());
        std::copy_n(ds.textual.row(i).begin(), ds.textual_dim, out.textual.row(k).begin());
        out.labels.push_back(ds.labels[i]);
    }
    return out;
}

std::vector<std::size_t> class_counts(const FeatureDataset& ds) {
    std::vector<std::size_t> counts(ds.num_classes, 0);
    for (auto y : ds.labels) ++counts.at(y);
    return counts;
}

FeatureDataset load_dataset(const fs::path& manifest_path) {
    json manifest;
    {
        const auto bytes = read_file(manifest_path);
        manifest = json::parse(bytes.begin(), bytes.end(), nullptr, /*allow_exceptions=*/false);
    }
    if (manifest.is_discarded() || !manifest.is_object()) {
        throw Error(ErrorCode::ManifestMalformed, manifest_path.string() + " is not a JSON object");
    }
    static const std::vector<std::string> kFields = {"format_version", "name",        "num_samples",
                                                     "visual_dim",     "textual_dim", "num_classes",
                                                     "visual_file",    "textual_file", "labels_file"};
    for (const auto& [key, _] : manifest.items()) {
        if (std::find(kFields.begin(), kFields.end(), key) == kFields.end()) {
            throw Error(ErrorCode::ManifestMalformed, "unexpected field '" + key + "'");
        }
    }
    if (require_count(manifest, "format_version") != kFormatVersion) {
        throw Error(ErrorCode::ManifestMalformed, "unsupported format_version");
    }

    FeatureDataset ds;
    ds.name = require_string(manifest, "name");
    const std::size_t n = require_count(manifest, "num_samples");
    ds.visual_dim = require_count(manifest, "visual_dim");
    ds.textual_dim = require_count(manifest, "textual_dim");
    ds.num_classes = require_count(manifest, "num_classes");
    if (ds.visual_dim < 1 || ds.textual_dim < 1 || ds.num_classes < 2) {
        throw Error(ErrorCode::ManifestMalformed, "dims must be >= 1 and num_classes >= 2");
    }

    const fs::path dir = manifest_path.parent_path();
    const auto visual_bytes = read_sized(dir / require_string(manifest, "visual_file"), n * ds.visual_dim * 4);
    const auto textual_bytes = read_sized(dir / require_string(manifest, "textual_file"), n * ds.textual_dim * 4);
    const auto label_bytes = read_sized(dir / require_string(manifest, "labels_file"), n * 4);

    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        ds.labels[i] = read_u32_le(label_bytes.data() + 4 * i);
        if (ds.labels[i] >= ds.num_classes) {
            throw Error(ErrorCode::LabelOutOfRange,
                        "sample " + std::to_string(i) + " has label " + std::to_string(ds.labels[i]));
        }
    }
    ds.visual = decode_matrix(visual_bytes, n, ds.visual_dim, "visual");
    ds.textual = decode_matrix(textual_bytes, n, ds.textual_dim, "textual");
    return ds;
}

fs::path save_dataset(const FeatureDataset& ds, const fs::path& dir) {
    validate(ds);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());

    const json manifest = {
        {"format_version", kFormatVersion}, {"name", ds.name},
        {"num_samples", ds.size()},         {"visual_dim", ds.visual_dim},
        {"textual_dim", ds.textual_dim},    {"num_classes", ds.num_classes},
        {"visual_file", "visual.bin"},      {"textual_file", "textual.bin"},
        {"labels_file", "labels.bin"},
    };

    std::vector<unsigned char> buf;
    buf.reserve(ds.visual.data.size() * 4);
    for (double v : ds.visual.data) append_f32_le(buf, v);
    write_bytes(dir / "visual.bin", buf);

    buf.clear();
    for (double v : ds.textual.data) append_f32_le(buf, v);
    write_bytes(dir / "textual.bin", buf);

    buf.clear();
    for (auto y : ds.labels) append_u32_le(buf, y);
    write_bytes(dir / "labels.bin", buf);

    const std::string text = manifest.dump(2) + "\n";
    const fs::path manifest_path = dir / "manifest.json";
    write_bytes(manifest_path, {reinterpret_cast<const unsigned char*>(text.data()), text.size()});
    return manifest_path;
}

// ---------------------------------------------------------------------------

std::string to_string(SynthMode mode) {
    switch (mode) {
    case SynthMode::joint_linear: return "joint_linear";
    case SynthMode::visual_only: return "visual_only";
    case SynthMode::label_uniform: return "label_uniform";
    }
    return "joint_linear";
}

SynthMode synth_mode_from_string(const std::string& s) {
    if (s == "joint_linear") return SynthMode::joint_linear;
    if (s == "visual_only") return SynthMode::visual_only;
    if (s == "label_uniform") return SynthMode::label_uniform;
    throw Error(ErrorCode::InvalidSpec, "unknown synth mode '" + s + "'");
}

namespace {

// Stream tags keep the feature, weight, noise and label draws independent.
enum : std::uint64_t { kStreamWeights = 1, kStreamFeatures = 2, kStreamNoise = 3, kStreamLabels = 4 };

// Generator constants. Features are N(0, kFeatureScale^2) per coordinate,
// which puts vector norms in the range of typical embedding dumps. The textual
// weight block is kTextualWeightRatio times the visual one, so a visual-only
// classifier misses most of the label signal. Candidates whose top two
// noiseless class scores differ by less than kMinScoreGap times the RMS class
// score are redrawn, leaving a margin around every class boundary.
constexpr double kFeatureScale = 32.0;
constexpr double kTextualWeightRatio = 3.0;
constexpr double kMinScoreGap = 2.2;

std::size_t argmax_first(const std::vector<double>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

double top_two_gap(const std::vector<double>& v) {
    double first = -std::numeric_limits<double>::infinity(), second = first;
    for (double x : v) {
        if (x > first) {
            second = first;
            first = x;
        } else if (x > second) {
            second = x;
        }
    }
    return first - second;
}

double round_to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

// Every class gets at least one sample: for each missing class (ascending),
// the lowest-index sample whose class still has two or more members and that
// has not already been moved is relabeled.
std::size_t fill_empty_classes(std::vector<std::uint32_t>& labels, std::size_t num_classes) {
    std::vector<std::size_t> counts(num_classes, 0);
    for (auto y : labels) ++counts[y];
    std::vector<bool> moved(labels.size(), false);
    std::size_t relabeled = 0;
    std::size_t cursor = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (counts[c] > 0) continue;
        while (cursor < labels.size() && (moved[cursor] || counts[labels[cursor]] < 2)) ++cursor;
        if (cursor == labels.size()) break;
        --counts[labels[cursor]];
        labels[cursor] = static_cast<std::uint32_t>(c);
        ++counts[c];
        moved[cursor] = true;
        ++relabeled;
    }
    return relabeled;
}

} // namespace

SynthResult generate_synthetic(const SynthSpec& spec) {
    if (spec.visual_dim < 1 || spec.textual_dim < 1) throw Error(ErrorCode::InvalidSpec, "dims must be >= 1");
    if (spec.num_classes < 2) throw Error(ErrorCode::InvalidSpec, "num_classes must be >= 2");
    if (!(spec.noise_sigma >= 0.0) || !std::isfinite(spec.noise_sigma)) {
        throw Error(ErrorCode::InvalidSpec, "noise_sigma must be finite and >= 0");
    }

    const std::size_t n = spec.n, d1 = spec.visual_dim, d2 = spec.textual_dim, ny = spec.num_classes;

    SynthResult out;
    SynthTruth& truth = out.truth;
    truth.mode = spec.mode;
    truth.noise_sigma = spec.noise_sigma;
    truth.visual_weights = Matrix(ny, d1);
    truth.textual_weights = Matrix(ny, d2);

    // Rows have unit expected norm per modality before the textual ratio.
    Rng weight_rng(derive_seed(spec.seed, kStreamWeights));
    const double sv = 1.0 / std::sqrt(static_cast<double>(d1));
    const double st = 1.0 / std::sqrt(static_cast<double>(d2));
    for (double& w : truth.visual_weights.data) w = weight_rng.normal() * sv;
    for (double& w : truth.textual_weights.data) w = weight_rng.normal() * st * kTextualWeightRatio;
    if (spec.mode != SynthMode::joint_linear) std::fill(truth.textual_weights.data.begin(), truth.textual_weights.data.end(), 0.0);

    FeatureDataset& ds = out.dataset;
    ds.name = "synthetic_" + to_string(spec.mode);
    ds.visual_dim = d1;
    ds.textual_dim = d2;
    ds.num_classes = ny;
    ds.visual = Matrix(n, d1);
    ds.textual = Matrix(n, d2);
    ds.labels.assign(n, 0);

    Rng feature_rng(derive_seed(spec.seed, kStreamFeatures));
    Rng noise_rng(derive_seed(spec.seed, kStreamNoise));
    Rng label_rng(derive_seed(spec.seed, kStreamLabels));
    std::vector<double> scores(ny);
    double weight_energy = 0.0;
    for (double w : truth.visual_weights.data) weight_energy += w * w;
    for (double w : truth.textual_weights.data) weight_energy += w * w;
    const double margin = kMinScoreGap * kFeatureScale * std::sqrt(weight_energy / static_cast<double>(ny));
    for (std::size_t i = 0; i < n; ++i) {
        auto v = ds.visual.row(i);
        auto t = ds.textual.row(i);
        for (;;) {
            for (double& x : v) x = round_to_f32(kFeatureScale * feature_rng.normal());
            for (double& x : t) x = round_to_f32(kFeatureScale * feature_rng.normal());
            if (spec.mode == SynthMode::label_uniform) break;
            for (std::size_t c = 0; c < ny; ++c) {
                double s = 0.0;
                for (std::size_t k = 0; k < d1; ++k) s += truth.visual_weights(c, k) * v[k];
                for (std::size_t k = 0; k < d2; ++k) s += truth.textual_weights(c, k) * t[k];
                scores[c] = s;
            }
            if (top_two_gap(scores) >= margin) break;
        }
        if (spec.mode == SynthMode::label_uniform) {
            ds.labels[i] = static_cast<std::uint32_t>(label_rng.below(ny));
        } else {
            for (double& s : scores) s += spec.noise_sigma * noise_rng.normal();
            ds.labels[i] = static_cast<std::uint32_t>(argmax_first(scores));
        }
    }

    if (n >= 10 * ny) truth.relabeled = fill_empty_classes(ds.labels, ny);
    return out;
}

} // namespace fedmme
