#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fedmme/matrix.hpp"

namespace fedmme {

/// Multi-modal feature dataset: one visual and one textual vector per sample
/// plus a class label. Values are stored as float64 in memory and float32 on
/// disk.
struct FeatureDataset {
    std::string name;
    std::size_t visual_dim = 0;
    std::size_t textual_dim = 0;
    std::size_t num_classes = 0;
    Matrix visual;   // n x visual_dim
    Matrix textual;  // n x textual_dim
    std::vector<std::uint32_t> labels;

    std::size_t size() const { return labels.size(); }

    bool operator==(const FeatureDataset&) const = default;
};

/// Throws Error if any structural invariant is broken.
void validate(const FeatureDataset& ds);

/// Copies the rows named by `indices` into a new dataset.
FeatureDataset subset(const FeatureDataset& ds, std::span<const std::size_t> indices, std::string name = {});

/// Number of samples per class.
std::vector<std::size_t> class_counts(const FeatureDataset& ds);

FeatureDataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes manifest.json, visual.bin, textual.bin and labels.bin into `dir`
/// (created if missing). Returns the manifest path.
std::filesystem::path save_dataset(const FeatureDataset& ds, const std::filesystem::path& dir);

// Raw little-endian helpers shared with the ingest service.
void append_f32_le(std::vector<unsigned char>& out, double value);
void write_bytes(const std::filesystem::path& path, std::span<const unsigned char> bytes);

// ---------------------------------------------------------------------------
// Synthetic data

enum class SynthMode { joint_linear, visual_only, label_uniform };

std::string to_string(SynthMode mode);
SynthMode synth_mode_from_string(const std::string& s);

struct SynthSpec {
    std::size_t n = 1000;
    std::size_t visual_dim = 16;
    std::size_t textual_dim = 16;
    std::size_t num_classes = 4;
    std::uint64_t seed = 0;
    double noise_sigma = 0.0;
    SynthMode mode = SynthMode::joint_linear;
};

/// The generative parameters behind a synthetic dataset. Labels are
/// argmax_c of visual_weights * v + textual_weights * t + noise_sigma * N(0, 1)
/// (joint_linear; visual_only has zero textual weights), with features redrawn
/// until the noiseless top-two class scores are clearly apart. label_uniform
/// draws labels independently of the features.
struct SynthTruth {
    Matrix visual_weights;   // Y x d1
    Matrix textual_weights;  // Y x d2, all zero unless mode == joint_linear
    double noise_sigma = 0.0;
    SynthMode mode = SynthMode::joint_linear;
    std::size_t relabeled = 0;  // samples moved to otherwise-empty classes
};

struct SynthResult {
    FeatureDataset dataset;
    SynthTruth truth;
};

SynthResult generate_synthetic(const SynthSpec& spec);

} // namespace fedmme
