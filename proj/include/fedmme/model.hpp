#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fedmme/dataset.hpp"
#include "fedmme/matrix.hpp"

namespace fedmme {

enum class Modality { multimodal, visual_only };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

struct HeadConfig {
    std::size_t visual_dim = 512;
    std::size_t textual_dim = 768;
    std::size_t dr_dim = 128;
    std::size_t num_classes = 2;
    Modality modality = Modality::multimodal;
    std::uint64_t init_seed = 0;

    /// Width of the vector fed to the classifier: d1 + d_r, or d1 for visual_only.
    std::size_t fused_dim() const { return visual_dim + (modality == Modality::multimodal ? dr_dim : 0); }

    bool operator==(const HeadConfig&) const = default;
};

/// Throws InvalidConfig on a hard violation and returns advisory warnings
/// (currently: reduced textual width not below the visual width).
std::vector<std::string> validate(const HeadConfig& cfg);

struct TrainConfig {
    double lr = 1e-3;
    std::size_t epochs = 100;
    std::size_t batch_size = 128;
    std::uint64_t shuffle_seed = 0;

    bool operator==(const TrainConfig&) const = default;
};

void validate(const TrainConfig& tc);

/// Mini-batch sizes for one epoch over n samples: ceil(n / batch_size) batches,
/// all full except possibly the last.
std::vector<std::size_t> batch_sizes(std::size_t n, std::size_t batch_size);

struct TrainMeta {
    double lr = 0.0;
    std::size_t epochs = 0;
    std::size_t batch_size = 0;
    std::uint64_t shuffle_seed = 0;
    double final_loss = 0.0;

    bool operator==(const TrainMeta&) const = default;
};

/// Late-fusion classifier over precomputed features:
///   reduced = w_dr * textual + b_dr
///   fused   = [visual ; reduced]
///   logits  = w_fc * fused + b_fc
/// Visual-only heads have empty w_dr/b_dr and classify `visual` directly.
struct FusionHead {
    HeadConfig cfg;
    Matrix w_dr;                 // d_r x d2
    std::vector<double> b_dr;    // d_r
    Matrix w_fc;                 // Y x fused_dim
    std::vector<double> b_fc;    // Y
    std::optional<TrainMeta> train_meta;

    bool operator==(const FusionHead&) const = default;
};

/// Same layout as the head's trainable parameters.
struct HeadGradients {
    Matrix w_dr;
    std::vector<double> b_dr;
    Matrix w_fc;
    std::vector<double> b_fc;
};

struct ForwardResult {
    std::vector<double> logits;
    std::vector<double> probs;
    std::vector<double> fused;  // cached for backward
};

/// Non-owning view of one sample.
struct FeatureSample {
    std::span<const double> visual;
    std::span<const double> textual;
    std::uint32_t label = 0;
};

FeatureSample sample_at(const FeatureDataset& ds, std::size_t i);

/// Glorot-uniform weights (s = sqrt(6 / (fan_in + fan_out))) drawn from
/// Rng(init_seed), w_dr before w_fc; zero biases.
FusionHead init_head(const HeadConfig& cfg);

ForwardResult forward(const FusionHead& head, std::span<const double> visual, std::span<const double> textual);

struct LossAndGrads {
    double loss = 0.0;
    HeadGradients grads;
};

/// Mean softmax cross-entropy over the batch and its analytic gradient.
LossAndGrads loss_and_grads(const FusionHead& head, std::span<const FeatureSample> batch);

struct LocalTrainResult {
    FusionHead head;
    std::vector<double> history;  // mean loss of each epoch
};

/// Plain mini-batch SGD from init_head(head_cfg). The shard order is reshuffled
/// every epoch from Rng(tc.shuffle_seed); the final batch may be short.
LocalTrainResult train_local(const FeatureDataset& ds, std::span<const std::size_t> shard, const HeadConfig& head_cfg,
                             const TrainConfig& tc);

/// argmax of the logits, lowest index on ties.
std::size_t predict(const FusionHead& head, std::span<const double> visual, std::span<const double> textual);

std::size_t argmax(std::span<const double> values);

/// Fraction of `ds` classified correctly by a single head.
double accuracy(const FusionHead& head, const FeatureDataset& ds);

nlohmann::json to_json(const FusionHead& head);
FusionHead head_from_json(const nlohmann::json& j);
void save_head(const FusionHead& head, const std::filesystem::path& path);
FusionHead load_head(const std::filesystem::path& path);

} // namespace fedmme
