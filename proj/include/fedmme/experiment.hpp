#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fedmme/dataset.hpp"
#include "fedmme/federation.hpp"
#include "fedmme/model.hpp"
#include "fedmme/partition.hpp"

namespace fedmme {

enum class Method { fedmme, fedensemble, fedavg_oneshot };
enum class TrialSeedPolicy { reseed_all, fixed_partition };

std::string to_string(Method m);
Method method_from_string(const std::string& s);
std::string to_string(TrialSeedPolicy p);
TrialSeedPolicy trial_seed_policy_from_string(const std::string& s);

/// One experiment. Dimensions in `head` are taken from the data; the seeds in
/// `partition`, `head` and `train` are replaced by ones derived from `seed`
/// (see trial_seeds).
struct ExperimentConfig {
    std::optional<std::filesystem::path> data_manifest;  // synthesize from `synth` when absent
    std::optional<std::filesystem::path> test_manifest;  // stratified 80/20 split when absent
    SynthSpec synth;
    PartitionConfig partition;
    HeadConfig head;
    TrainConfig train;
    Method method = Method::fedmme;
    std::size_t trials = 3;
    TrialSeedPolicy seed_policy = TrialSeedPolicy::reseed_all;
    std::uint64_t seed = 0;
    std::size_t workers = 0;
};

void validate(const ExperimentConfig& cfg);

struct TrialSeeds {
    std::uint64_t trial = 0;
    std::uint64_t partition = 0;
    std::uint64_t init = 0;
    std::uint64_t shuffle = 0;
};

/// trial = derive_seed(seed, t); init and shuffle derive from the trial seed.
/// The partition seed derives from the trial seed under reseed_all and from
/// the experiment seed under fixed_partition.
TrialSeeds trial_seeds(const ExperimentConfig& cfg, std::size_t trial);

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Per class: shuffle the class's indices with Rng(derive_seed(seed, c)) and
/// send the first round(test_fraction * count) to the test side. Both sides
/// are returned in ascending order.
SplitIndices stratified_split(const FeatureDataset& ds, double test_fraction, std::uint64_t seed);

/// Seed of the train/test split for an experiment.
std::uint64_t split_seed(const ExperimentConfig& cfg);

struct TrialResult {
    std::size_t trial = 0;
    TrialSeeds seeds;
    double accuracy = 0.0;
    std::vector<std::optional<double>> per_class_accuracy;
    std::vector<std::size_t> shard_sizes;
    double skew = 0.0;
};

struct ExperimentReport {
    ExperimentConfig config;
    std::vector<TrialResult> trials;
    double mean_accuracy = 0.0;
    double std_accuracy = 0.0;  // sample standard deviation, 0 for one trial
    double duration_seconds = 0.0;
    std::vector<std::string> warnings;
    std::optional<EnsembleTeam> final_team;  // deployed model of the last trial

    std::vector<double> accuracies() const;
};

ExperimentReport run_experiment(const ExperimentConfig& cfg);

enum class SweepAxis { alpha, clients, dr_dim, epochs };

std::string to_string(SweepAxis a);
SweepAxis sweep_axis_from_string(const std::string& s);

/// Copy of `cfg` with `axis` set to `value`; throws InvalidAxisValue.
ExperimentConfig with_axis_value(const ExperimentConfig& cfg, SweepAxis axis, double value);

std::vector<ExperimentReport> sweep(const ExperimentConfig& cfg, SweepAxis axis, const std::vector<double>& values);

nlohmann::json to_json(const ExperimentConfig& cfg);
nlohmann::json to_json(const ExperimentReport& report);

/// Columns: method,alpha,clients,dr_dim,epochs,trial,accuracy,seed
std::string csv_header();
void write_csv_rows(std::ostream& out, const ExperimentReport& report);

/// Writes report.json and appends to metrics.csv (header only when new).
void write_report(const ExperimentReport& report, const std::filesystem::path& dir);
/// Writes sweep.json (array of reports) and sweep.csv.
void write_sweep(const std::vector<ExperimentReport>& reports, const std::filesystem::path& dir);

} // namespace fedmme
