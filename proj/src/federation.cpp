#include "fedmme/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "fedmme/errors.hpp"
#include "fedmme/rng.hpp"

namespace fedmme {

using nlohmann::json;

EnsembleTeam::EnsembleTeam(std::vector<FusionHead> members, std::vector<MemberProvenance> provenance,
                           std::vector<std::size_t> upload_log)
    : members_(std::move(members)), provenance_(std::move(provenance)), upload_log_(std::move(upload_log)) {
    if (members_.empty()) throw Error(ErrorCode::InvalidConfig, "an ensemble team needs at least one member");
    if (provenance_.size() != members_.size() || upload_log_.size() != members_.size()) {
        throw Error(ErrorCode::ProtocolViolation, "provenance/upload log length differs from member count");
    }
    for (std::size_t i = 0; i < upload_log_.size(); ++i) {
        if (upload_log_[i] != 1) {
            throw Error(ErrorCode::ProtocolViolation, "client " + std::to_string(i) + " uploaded " +
                                                          std::to_string(upload_log_[i]) + " times");
        }
    }
    const auto& ref = members_.front().cfg;
    for (const auto& m : members_) {
        if (m.cfg.visual_dim != ref.visual_dim || m.cfg.num_classes != ref.num_classes ||
            m.cfg.modality != ref.modality ||
            (ref.modality == Modality::multimodal && m.cfg.textual_dim != ref.textual_dim)) {
            throw Error(ErrorCode::ShapeMismatch, "team members disagree on input or class dimensions");
        }
    }
}

TeamAssembler::TeamAssembler(std::size_t num_clients)
    : heads_(num_clients), provenance_(num_clients), upload_log_(num_clients, 0) {}

void TeamAssembler::accept_upload(std::size_t client_id, FusionHead head, MemberProvenance provenance) {
    if (client_id >= heads_.size()) {
        throw Error(ErrorCode::ProtocolViolation, "upload from unknown client " + std::to_string(client_id));
    }
    if (++upload_log_[client_id] > 1) {
        throw Error(ErrorCode::ProtocolViolation, "client " + std::to_string(client_id) + " uploaded twice");
    }
    heads_[client_id] = std::move(head);
    provenance_[client_id] = std::move(provenance);
}

EnsembleTeam TeamAssembler::finalize() && {
    std::vector<FusionHead> members;
    members.reserve(heads_.size());
    for (std::size_t i = 0; i < heads_.size(); ++i) {
        if (!heads_[i]) throw Error(ErrorCode::ProtocolViolation, "client " + std::to_string(i) + " never uploaded");
        members.push_back(std::move(*heads_[i]));
    }
    return EnsembleTeam(std::move(members), std::move(provenance_), std::move(upload_log_));
}

HeadConfig client_head_config(const HeadConfig& base, std::size_t client_id) {
    HeadConfig cfg = base;
    cfg.init_seed = derive_seed(base.init_seed, client_id);
    return cfg;
}

TrainConfig client_train_config(const TrainConfig& base, std::size_t client_id) {
    TrainConfig tc = base;
    tc.shuffle_seed = derive_seed(base.shuffle_seed, client_id);
    return tc;
}

EnsembleTeam run_one_shot(const FeatureDataset& ds, const PartitionPlan& plan, const HeadConfig& head_cfg,
                          const TrainConfig& tc, std::size_t workers) {
    const std::size_t n_clients = plan.shards.size();
    if (n_clients == 0) throw Error(ErrorCode::InvalidConfig, "partition plan has no shards");
    for (std::size_t i = 0; i < n_clients; ++i) {
        if (plan.shards[i].empty()) throw Error(ErrorCode::EmptyShard, "client " + std::to_string(i) + " has no data");
    }
    validate(head_cfg);
    validate(tc);

    if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
    workers = std::min(workers, n_clients);

    std::vector<std::optional<LocalTrainResult>> results(n_clients);
    std::vector<std::exception_ptr> failures(n_clients);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < n_clients; i = next++) {
            try {
                results[i] = train_local(ds, plan.shards[i], client_head_config(head_cfg, i), client_train_config(tc, i));
            } catch (...) {
                failures[i] = std::current_exception();
            }
        }
    };
    if (workers == 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    }

    for (std::size_t i = 0; i < n_clients; ++i) {
        if (!failures[i]) continue;
        try {
            std::rethrow_exception(failures[i]);
        } catch (const Error& e) {
            throw Error(e.code(), "client " + std::to_string(i) + ": " + e.detail());
        }
    }

    // Aggregation: each client uploads its trained head exactly once.
    TeamAssembler server(n_clients);
    for (std::size_t i = 0; i < n_clients; ++i) {
        auto& head = results[i]->head;
        MemberProvenance prov{i, plan.shards[i].size(), head.train_meta};
        server.accept_upload(i, std::move(head), std::move(prov));
    }
    return std::move(server).finalize();
}

EnsembleTeam build_unimodal_baseline(const FeatureDataset& ds, const PartitionPlan& plan, const HeadConfig& head_cfg,
                                     const TrainConfig& tc, std::size_t workers) {
    HeadConfig cfg = head_cfg;
    cfg.modality = Modality::visual_only;
    return run_one_shot(ds, plan, cfg, tc, workers);
}

std::size_t VoteTally::winner() const { return static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin()); }

std::size_t VoteTally::total() const {
    std::size_t t = 0;
    for (auto c : counts) t += c;
    return t;
}

EnsemblePrediction predict_ensemble(std::span<const FusionHead> members, std::span<const double> visual,
                                    std::span<const double> textual) {
    if (members.empty()) throw Error(ErrorCode::InvalidConfig, "no ensemble members");
    EnsemblePrediction out;
    out.tally.counts.assign(members.front().cfg.num_classes, 0);
    for (const auto& m : members) {
        const std::size_t vote = predict(m, visual, textual);
        if (vote >= out.tally.counts.size()) throw Error(ErrorCode::ShapeMismatch, "member class count differs");
        ++out.tally.counts[vote];
    }
    out.label = out.tally.winner();
    return out;
}

EnsemblePrediction predict_ensemble(const EnsembleTeam& team, std::span<const double> visual,
                                    std::span<const double> textual) {
    return predict_ensemble(team.members(), visual, textual);
}

namespace {

template <typename Classifier>
EnsembleEvaluation evaluate_with(const FeatureDataset& test, std::size_t num_classes, Classifier&& classify) {
    if (test.num_classes != num_classes) throw Error(ErrorCode::ShapeMismatch, "test set class count differs");
    std::vector<std::size_t> hits(num_classes, 0), totals(num_classes, 0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const auto y = test.labels[i];
        const bool ok = classify(test.visual.row(i), test.textual.row(i)) == y;
        correct += ok;
        hits[y] += ok;
        ++totals[y];
    }
    EnsembleEvaluation ev;
    ev.accuracy = test.size() ? static_cast<double>(correct) / static_cast<double>(test.size()) : 0.0;
    ev.per_class.resize(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (totals[c]) ev.per_class[c] = static_cast<double>(hits[c]) / static_cast<double>(totals[c]);
    }
    return ev;
}

} // namespace

EnsembleEvaluation evaluate_ensemble(const EnsembleTeam& team, const FeatureDataset& test) {
    return evaluate_with(test, team.config().num_classes, [&](auto v, auto t) { return predict_ensemble(team, v, t).label; });
}

EnsembleEvaluation evaluate_head(const FusionHead& head, const FeatureDataset& test) {
    return evaluate_with(test, head.cfg.num_classes, [&](auto v, auto t) { return predict(head, v, t); });
}

FusionHead fedavg_one_shot(const EnsembleTeam& team) {
    const auto members = team.members();
    const auto prov = team.provenance();
    const auto& ref = members.front();
    for (const auto& m : members) {
        HeadConfig a = m.cfg, b = ref.cfg;
        a.init_seed = b.init_seed = 0;
        if (!(a == b) || m.w_fc.data.size() != ref.w_fc.data.size() || m.w_dr.data.size() != ref.w_dr.data.size()) {
            throw Error(ErrorCode::HeterogeneousShapes, "members must share architecture to be averaged");
        }
    }

    double total = 0.0;
    for (const auto& p : prov) total += static_cast<double>(p.shard_size);
    if (!(total > 0.0)) throw Error(ErrorCode::HeterogeneousShapes, "members report no training samples");

    // Centered form ref + sum_i w_i (m_i - ref): identical members average to
    // themselves exactly.
    FusionHead avg = ref;
    avg.train_meta.reset();
    auto accumulate = [](std::vector<double>& dst, const std::vector<double>& base, const std::vector<double>& src,
                         double w) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += w * (src[i] - base[i]);
    };
    for (std::size_t i = 1; i < members.size(); ++i) {
        const double w = static_cast<double>(prov[i].shard_size) / total;
        accumulate(avg.w_fc.data, ref.w_fc.data, members[i].w_fc.data, w);
        accumulate(avg.b_fc, ref.b_fc, members[i].b_fc, w);
        accumulate(avg.w_dr.data, ref.w_dr.data, members[i].w_dr.data, w);
        accumulate(avg.b_dr, ref.b_dr, members[i].b_dr, w);
    }
    return avg;
}

std::filesystem::path save_team(const EnsembleTeam& team, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());

    json members = json::array();
    for (std::size_t i = 0; i < team.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "member_%03zu.json", i);
        save_head(team.members()[i], dir / name);
        const auto& p = team.provenance()[i];
        members.push_back({{"file", name},
                           {"client_id", p.client_id},
                           {"shard_size", p.shard_size},
                           {"uploads", team.upload_log()[i]}});
    }
    const json manifest = {{"format_version", 1}, {"members", members}};
    const std::string text = manifest.dump(2) + "\n";
    const auto path = dir / "team.json";
    write_bytes(path, {reinterpret_cast<const unsigned char*>(text.data()), text.size()});
    return path;
}

EnsembleTeam load_team(const std::filesystem::path& team_json) {
    std::ifstream in(team_json);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + team_json.string());
    const json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::InvalidConfig, team_json.string() + " is not valid JSON");

    std::vector<FusionHead> heads;
    std::vector<MemberProvenance> prov;
    std::vector<std::size_t> uploads;
    try {
        for (const auto& m : j.at("members")) {
            heads.push_back(load_head(team_json.parent_path() / m.at("file").get<std::string>()));
            prov.push_back({m.at("client_id").get<std::size_t>(), m.at("shard_size").get<std::size_t>(),
                            heads.back().train_meta});
            uploads.push_back(m.at("uploads").get<std::size_t>());
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("malformed team manifest: ") + e.what());
    }
    return EnsembleTeam(std::move(heads), std::move(prov), std::move(uploads));
}

} // namespace fedmme
