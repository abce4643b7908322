#include "fedmme/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fedmme/errors.hpp"
#include "fedmme/rng.hpp"

namespace fedmme {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum : std::uint64_t { kTagPartition = 101, kTagInit = 102, kTagShuffle = 103, kTagSplit = 104 };

constexpr double kTestFraction = 0.2;

std::string fmt_double(double v) { return json(v).dump(); }

} // namespace

std::string to_string(Method m) {
    switch (m) {
    case Method::fedmme: return "fedmme";
    case Method::fedensemble: return "fedensemble";
    case Method::fedavg_oneshot: return "fedavg_oneshot";
    }
    return "fedmme";
}

Method method_from_string(const std::string& s) {
    if (s == "fedmme") return Method::fedmme;
    if (s == "fedensemble") return Method::fedensemble;
    if (s == "fedavg_oneshot") return Method::fedavg_oneshot;
    throw Error(ErrorCode::InvalidConfig, "unknown method '" + s + "'");
}

std::string to_string(TrialSeedPolicy p) { return p == TrialSeedPolicy::reseed_all ? "reseed_all" : "fixed_partition"; }

TrialSeedPolicy trial_seed_policy_from_string(const std::string& s) {
    if (s == "reseed_all") return TrialSeedPolicy::reseed_all;
    if (s == "fixed_partition") return TrialSeedPolicy::fixed_partition;
    throw Error(ErrorCode::InvalidConfig, "unknown trial seed policy '" + s + "'");
}

std::string to_string(SweepAxis a) {
    switch (a) {
    case SweepAxis::alpha: return "alpha";
    case SweepAxis::clients: return "clients";
    case SweepAxis::dr_dim: return "dr_dim";
    case SweepAxis::epochs: return "epochs";
    }
    return "alpha";
}

SweepAxis sweep_axis_from_string(const std::string& s) {
    if (s == "alpha") return SweepAxis::alpha;
    if (s == "clients") return SweepAxis::clients;
    if (s == "dr_dim") return SweepAxis::dr_dim;
    if (s == "epochs") return SweepAxis::epochs;
    throw Error(ErrorCode::InvalidAxisValue, "unknown sweep axis '" + s + "'");
}

void validate(const ExperimentConfig& cfg) {
    if (cfg.trials < 1) throw Error(ErrorCode::InvalidConfig, "trials must be >= 1");
    if (cfg.partition.num_clients < 1) throw Error(ErrorCode::InvalidConfig, "clients must be >= 1");
    if (!(cfg.partition.alpha > 0.0) || !std::isfinite(cfg.partition.alpha)) {
        throw Error(ErrorCode::InvalidConfig, "alpha must be > 0");
    }
    validate(cfg.train);
    if (cfg.method != Method::fedensemble && cfg.head.dr_dim < 1) {
        throw Error(ErrorCode::InvalidConfig, "dr_dim must be >= 1 for multimodal methods");
    }
}

TrialSeeds trial_seeds(const ExperimentConfig& cfg, std::size_t trial) {
    TrialSeeds s;
    s.trial = derive_seed(cfg.seed, trial);
    s.partition = cfg.seed_policy == TrialSeedPolicy::reseed_all ? derive_seed(s.trial, kTagPartition)
                                                                  : derive_seed(cfg.seed, kTagPartition);
    s.init = derive_seed(s.trial, kTagInit);
    s.shuffle = derive_seed(s.trial, kTagShuffle);
    return s;
}

std::uint64_t split_seed(const ExperimentConfig& cfg) { return derive_seed(cfg.seed, kTagSplit); }

SplitIndices stratified_split(const FeatureDataset& ds, double test_fraction, std::uint64_t seed) {
    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i) by_class.at(ds.labels[i]).push_back(i);
    SplitIndices out;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& members = by_class[c];
        Rng rng(derive_seed(seed, c));
        rng.shuffle(std::span<std::size_t>(members));
        const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(members.size())));
        out.test.insert(out.test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_test));
        out.train.insert(out.train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_test), members.end());
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

std::vector<double> ExperimentReport::accuracies() const {
    std::vector<double> a;
    for (const auto& t : trials) a.push_back(t.accuracy);
    return a;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
    validate(cfg);
    const auto started = std::chrono::steady_clock::now();

    FeatureDataset train, test;
    {
        FeatureDataset source = cfg.data_manifest ? load_dataset(*cfg.data_manifest) : generate_synthetic(cfg.synth).dataset;
        if (cfg.test_manifest) {
            test = load_dataset(*cfg.test_manifest);
            if (test.visual_dim != source.visual_dim || test.textual_dim != source.textual_dim ||
                test.num_classes != source.num_classes) {
                throw Error(ErrorCode::ShapeMismatch, "test set dimensions differ from training data");
            }
            train = std::move(source);
        } else {
            const auto split = stratified_split(source, kTestFraction, split_seed(cfg));
            train = subset(source, split.train, source.name + "_train");
            test = subset(source, split.test, source.name + "_test");
        }
    }

    ExperimentReport report;
    report.config = cfg;
    HeadConfig head = cfg.head;
    head.visual_dim = train.visual_dim;
    head.textual_dim = train.textual_dim;
    head.num_classes = train.num_classes;
    if (cfg.method == Method::fedensemble) head.modality = Modality::visual_only;
    report.warnings = validate(head);

    for (std::size_t t = 0; t < cfg.trials; ++t) {
        try {
            TrialResult tr;
            tr.trial = t;
            tr.seeds = trial_seeds(cfg, t);

            PartitionConfig pc = cfg.partition;
            pc.seed = tr.seeds.partition;
            const auto plan = partition_dirichlet(train, pc);
            tr.shard_sizes = plan.shard_sizes();
            tr.skew = skew_statistic(plan, train);

            HeadConfig hc = head;
            hc.init_seed = tr.seeds.init;
            TrainConfig tc = cfg.train;
            tc.shuffle_seed = tr.seeds.shuffle;

            EnsembleEvaluation ev;
            std::optional<EnsembleTeam> deployed;
            switch (cfg.method) {
            case Method::fedmme: {
                hc.modality = Modality::multimodal;
                auto team = run_one_shot(train, plan, hc, tc, cfg.workers);
                ev = evaluate_ensemble(team, test);
                deployed = std::move(team);
                break;
            }
            case Method::fedensemble: {
                auto team = build_unimodal_baseline(train, plan, hc, tc, cfg.workers);
                ev = evaluate_ensemble(team, test);
                deployed = std::move(team);
                break;
            }
            case Method::fedavg_oneshot: {
                hc.modality = Modality::multimodal;
                const auto team = run_one_shot(train, plan, hc, tc, cfg.workers);
                auto avg = fedavg_one_shot(team);
                ev = evaluate_head(avg, test);
                deployed = EnsembleTeam({std::move(avg)}, {MemberProvenance{0, train.size(), std::nullopt}}, {1});
                break;
            }
            }
            tr.accuracy = ev.accuracy;
            tr.per_class_accuracy = std::move(ev.per_class);
            report.trials.push_back(std::move(tr));
            report.final_team = std::move(deployed);
        } catch (const Error& e) {
            throw Error(e.code(), "trial " + std::to_string(t) + ": " + e.detail());
        }
    }

    const auto acc = report.accuracies();
    double sum = 0.0;
    for (double a : acc) sum += a;
    report.mean_accuracy = sum / static_cast<double>(acc.size());
    if (acc.size() > 1) {
        double ss = 0.0;
        for (double a : acc) ss += (a - report.mean_accuracy) * (a - report.mean_accuracy);
        report.std_accuracy = std::sqrt(ss / static_cast<double>(acc.size() - 1));
    }
    report.duration_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

ExperimentConfig with_axis_value(const ExperimentConfig& cfg, SweepAxis axis, double value) {
    auto as_count = [&](const char* what) {
        if (!std::isfinite(value) || value < 1.0 || value != std::floor(value)) {
            throw Error(ErrorCode::InvalidAxisValue, std::string(what) + " must be a positive integer, got " + fmt_double(value));
        }
        return static_cast<std::size_t>(value);
    };
    ExperimentConfig out = cfg;
    switch (axis) {
    case SweepAxis::alpha:
        if (!std::isfinite(value) || !(value > 0.0)) {
            throw Error(ErrorCode::InvalidAxisValue, "alpha must be > 0, got " + fmt_double(value));
        }
        out.partition.alpha = value;
        break;
    case SweepAxis::clients: out.partition.num_clients = as_count("clients"); break;
    case SweepAxis::dr_dim: out.head.dr_dim = as_count("dr_dim"); break;
    case SweepAxis::epochs: out.train.epochs = as_count("epochs"); break;
    }
    return out;
}

std::vector<ExperimentReport> sweep(const ExperimentConfig& cfg, SweepAxis axis, const std::vector<double>& values) {
    if (values.empty()) throw Error(ErrorCode::InvalidAxisValue, "sweep needs at least one value");
    std::vector<ExperimentConfig> configs;
    for (double v : values) configs.push_back(with_axis_value(cfg, axis, v));
    std::vector<ExperimentReport> reports;
    for (const auto& c : configs) reports.push_back(run_experiment(c));
    return reports;
}

json to_json(const ExperimentConfig& cfg) {
    json data;
    if (cfg.data_manifest) {
        data = {{"manifest", cfg.data_manifest->string()}};
    } else {
        data = {{"synthetic",
                 {{"n", cfg.synth.n},
                  {"d1", cfg.synth.visual_dim},
                  {"d2", cfg.synth.textual_dim},
                  {"num_classes", cfg.synth.num_classes},
                  {"seed", cfg.synth.seed},
                  {"noise_sigma", cfg.synth.noise_sigma},
                  {"mode", to_string(cfg.synth.mode)}}}};
    }
    data["test_manifest"] = cfg.test_manifest ? json(cfg.test_manifest->string()) : json(nullptr);
    return {
        {"data", data},
        {"method", to_string(cfg.method)},
        {"clients", cfg.partition.num_clients},
        {"alpha", cfg.partition.alpha},
        {"dr_dim", cfg.head.dr_dim},
        {"lr", cfg.train.lr},
        {"epochs", cfg.train.epochs},
        {"batch_size", cfg.train.batch_size},
        {"trials", cfg.trials},
        {"trial_seed_policy", to_string(cfg.seed_policy)},
        {"seed", cfg.seed},
    };
}

json to_json(const ExperimentReport& report) {
    json trials = json::array();
    for (const auto& t : report.trials) {
        json per_class = json::array();
        for (const auto& pc : t.per_class_accuracy) per_class.push_back(pc ? json(*pc) : json(nullptr));
        trials.push_back({{"trial", t.trial},
                          {"trial_seed", t.seeds.trial},
                          {"partition_seed", t.seeds.partition},
                          {"accuracy", t.accuracy},
                          {"per_class_accuracy", per_class},
                          {"shard_sizes", t.shard_sizes},
                          {"skew", t.skew}});
    }
    return {
        {"config", to_json(report.config)},
        {"trials", trials},
        {"mean_accuracy", report.mean_accuracy},
        {"std_accuracy", report.std_accuracy},
        {"duration_seconds", report.duration_seconds},
        {"warnings", report.warnings},
    };
}

std::string csv_header() { return "method,alpha,clients,dr_dim,epochs,trial,accuracy,seed"; }

void write_csv_rows(std::ostream& out, const ExperimentReport& report) {
    const auto& c = report.config;
    for (const auto& t : report.trials) {
        out << to_string(c.method) << ',' << fmt_double(c.partition.alpha) << ',' << c.partition.num_clients << ','
            << c.head.dr_dim << ',' << c.train.epochs << ',' << t.trial << ',' << fmt_double(t.accuracy) << ','
            << c.seed << '\n';
    }
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
    write_bytes(path, {reinterpret_cast<const unsigned char*>(text.data()), text.size()});
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
}

} // namespace

void write_report(const ExperimentReport& report, const fs::path& dir) {
    ensure_dir(dir);
    write_text(dir / "report.json", to_json(report).dump(2) + "\n");
    const auto csv = dir / "metrics.csv";
    const bool fresh = !fs::exists(csv);
    std::ofstream out(csv, std::ios::app);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + csv.string());
    if (fresh) out << csv_header() << '\n';
    write_csv_rows(out, report);
    if (!out) throw Error(ErrorCode::IoFailure, "write failed on " + csv.string());
}

void write_sweep(const std::vector<ExperimentReport>& reports, const fs::path& dir) {
    ensure_dir(dir);
    json all = json::array();
    std::ostringstream csv;
    csv << csv_header() << '\n';
    for (const auto& r : reports) {
        all.push_back(to_json(r));
        write_csv_rows(csv, r);
    }
    write_text(dir / "sweep.json", all.dump(2) + "\n");
    write_text(dir / "sweep.csv", csv.str());
}

} // namespace fedmme
