#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "fedmme/dataset.hpp"
#include "fedmme/model.hpp"
#include "fedmme/partition.hpp"

namespace fedmme {

struct MemberProvenance {
    std::size_t client_id = 0;
    std::size_t shard_size = 0;
    std::optional<TrainMeta> train_meta;

    bool operator==(const MemberProvenance&) const = default;
};

/// The N client heads collected in a single round, in client-id order.
/// Immutable once built; construction enforces exactly one upload per client.
class EnsembleTeam {
public:
    EnsembleTeam(std::vector<FusionHead> members, std::vector<MemberProvenance> provenance,
                 std::vector<std::size_t> upload_log);

    std::span<const FusionHead> members() const { return members_; }
    std::span<const MemberProvenance> provenance() const { return provenance_; }
    std::span<const std::size_t> upload_log() const { return upload_log_; }
    std::size_t size() const { return members_.size(); }
    const HeadConfig& config() const { return members_.front().cfg; }

    bool operator==(const EnsembleTeam&) const = default;

private:
    std::vector<FusionHead> members_;
    std::vector<MemberProvenance> provenance_;
    std::vector<std::size_t> upload_log_;
};

/// Server-side collector. Each client may upload once; a second upload from
/// the same client, or finalizing with a client missing, is a ProtocolViolation.
class TeamAssembler {
public:
    explicit TeamAssembler(std::size_t num_clients);

    void accept_upload(std::size_t client_id, FusionHead head, MemberProvenance provenance);
    EnsembleTeam finalize() &&;

private:
    std::vector<std::optional<FusionHead>> heads_;
    std::vector<MemberProvenance> provenance_;
    std::vector<std::size_t> upload_log_;
};

/// Seeds used by client `client_id`: base seeds XOR mix64(client_id).
HeadConfig client_head_config(const HeadConfig& base, std::size_t client_id);
TrainConfig client_train_config(const TrainConfig& base, std::size_t client_id);

/// Trains one head per shard and collects them in one round. `workers` bounds
/// the number of concurrent client trainers (0: hardware concurrency); the
/// result does not depend on it.
EnsembleTeam run_one_shot(const FeatureDataset& ds, const PartitionPlan& plan, const HeadConfig& head_cfg,
                          const TrainConfig& tc, std::size_t workers = 0);

/// FedEnsemble baseline: run_one_shot with visual-only heads.
EnsembleTeam build_unimodal_baseline(const FeatureDataset& ds, const PartitionPlan& plan, const HeadConfig& head_cfg,
                                     const TrainConfig& tc, std::size_t workers = 0);

struct VoteTally {
    std::vector<std::size_t> counts;

    /// Most votes, lowest class index on ties.
    std::size_t winner() const;
    std::size_t total() const;
};

struct EnsemblePrediction {
    std::size_t label = 0;
    VoteTally tally;
};

/// Equal-weight hard voting.
EnsemblePrediction predict_ensemble(std::span<const FusionHead> members, std::span<const double> visual,
                                    std::span<const double> textual);
EnsemblePrediction predict_ensemble(const EnsembleTeam& team, std::span<const double> visual,
                                    std::span<const double> textual);

struct EnsembleEvaluation {
    double accuracy = 0.0;
    std::vector<std::optional<double>> per_class;  // nullopt for classes absent from the test set
};

EnsembleEvaluation evaluate_ensemble(const EnsembleTeam& team, const FeatureDataset& test);
EnsembleEvaluation evaluate_head(const FusionHead& head, const FeatureDataset& test);

/// One-shot FedAvg: every parameter averaged with weights n_i / sum(n_j).
FusionHead fedavg_one_shot(const EnsembleTeam& team);

/// team.json plus one model file per member.
std::filesystem::path save_team(const EnsembleTeam& team, const std::filesystem::path& dir);
EnsembleTeam load_team(const std::filesystem::path& team_json);

} // namespace fedmme
