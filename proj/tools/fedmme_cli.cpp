// fedmme: command-line harness for one-shot multi-modal federated ensembles.
//
//   fedmme synth     --out DIR [--n --d1 --d2 --classes --seed --synth-mode --noise]
//   fedmme partition [--data MANIFEST | synth flags] --clients --alpha --seed [--out FILE]
//   fedmme run       [data flags] [training flags] [--out DIR] [--save-team DIR]
//   fedmme sweep     [run flags] --axis {alpha,clients,dr_dim,epochs} --values a,b,c [--out DIR]
//   fedmme eval      --team TEAM_JSON --data MANIFEST
//   fedmme embed     --records JSONL --out FILE [--url URL] [--d2 N]
//
// Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fedmme/dataset.hpp"
#include "fedmme/errors.hpp"
#include "fedmme/experiment.hpp"
#include "fedmme/federation.hpp"
#include "fedmme/ingest.hpp"
#include "fedmme/partition.hpp"

namespace {

using namespace fedmme;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct Options {
    std::string data;
    std::string test_data;
    std::string synth_mode = "joint_linear";
    std::size_t n = 5000;
    std::size_t d1 = 16;
    std::size_t d2 = 16;
    std::size_t classes = 4;
    double noise = 0.0;
    std::size_t clients = 5;
    double alpha = 0.3;
    std::uint64_t seed = 0;
    double lr = 1e-3;
    std::size_t epochs = 100;
    std::size_t batch_size = 128;
    std::size_t dr_dim = 128;
    std::string method = "fedmme";
    std::size_t trials = 3;
    std::string trial_seed_policy = "reseed_all";
    std::size_t workers = 0;
    std::string out;
    std::string save_team;
    // sweep
    std::string axis;
    std::vector<double> values;
    // eval
    std::string team;
    // embed
    std::string records;
    std::string url;
    std::size_t retries = 3;
    long timeout_ms = 10'000;
    std::size_t parallel = 1;
};

void add_data_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--data", o.data, "Dataset manifest.json (synthetic data when omitted)");
    cmd->add_option("--synth-mode", o.synth_mode, "joint_linear | visual_only | label_uniform")->capture_default_str();
    cmd->add_option("--n", o.n, "Synthetic sample count")->capture_default_str();
    cmd->add_option("--d1", o.d1, "Synthetic visual dimension")->capture_default_str();
    cmd->add_option("--d2", o.d2, "Synthetic textual dimension")->capture_default_str();
    cmd->add_option("--classes", o.classes, "Synthetic class count")->capture_default_str();
    cmd->add_option("--noise", o.noise, "Synthetic label-score noise sigma")->capture_default_str();
    cmd->add_option("--seed", o.seed, "Base seed")->capture_default_str();
}

void add_partition_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--clients", o.clients, "Number of clients N")->capture_default_str();
    cmd->add_option("--alpha", o.alpha, "Dirichlet concentration")->capture_default_str();
}

void add_run_flags(CLI::App* cmd, Options& o) {
    add_data_flags(cmd, o);
    add_partition_flags(cmd, o);
    cmd->add_option("--test-data", o.test_data, "Explicit test manifest (default: stratified 80/20 split)");
    cmd->add_option("--lr", o.lr, "SGD learning rate")->capture_default_str();
    cmd->add_option("--epochs", o.epochs, "Local epochs")->capture_default_str();
    cmd->add_option("--batch-size", o.batch_size, "Mini-batch size")->capture_default_str();
    cmd->add_option("--dr-dim", o.dr_dim, "Reduced textual dimension")->capture_default_str();
    cmd->add_option("--method", o.method, "fedmme | fedensemble | fedavg_oneshot")->capture_default_str();
    cmd->add_option("--trials", o.trials, "Trials to average")->capture_default_str();
    cmd->add_option("--trial-seed-policy", o.trial_seed_policy, "reseed_all | fixed_partition")->capture_default_str();
    cmd->add_option("--workers", o.workers, "Parallel client trainers (0 = hardware)")->capture_default_str();
    cmd->add_option("--out", o.out, "Output directory for report.json / metrics.csv");
}

SynthSpec synth_spec(const Options& o) {
    SynthSpec s;
    s.n = o.n;
    s.visual_dim = o.d1;
    s.textual_dim = o.d2;
    s.num_classes = o.classes;
    s.seed = o.seed;
    s.noise_sigma = o.noise;
    s.mode = synth_mode_from_string(o.synth_mode);
    return s;
}

FeatureDataset source_dataset(const Options& o) {
    return o.data.empty() ? generate_synthetic(synth_spec(o)).dataset : load_dataset(o.data);
}

ExperimentConfig experiment_config(const Options& o) {
    ExperimentConfig cfg;
    if (!o.data.empty()) cfg.data_manifest = o.data;
    if (!o.test_data.empty()) cfg.test_manifest = o.test_data;
    cfg.synth = synth_spec(o);
    cfg.partition.num_clients = o.clients;
    cfg.partition.alpha = o.alpha;
    cfg.head.dr_dim = o.dr_dim;
    cfg.train.lr = o.lr;
    cfg.train.epochs = o.epochs;
    cfg.train.batch_size = o.batch_size;
    cfg.method = method_from_string(o.method);
    cfg.trials = o.trials;
    cfg.seed_policy = trial_seed_policy_from_string(o.trial_seed_policy);
    cfg.seed = o.seed;
    cfg.workers = o.workers;
    return cfg;
}

void print_summary(const ExperimentReport& r) {
    for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
    std::cout << to_string(r.config.method) << " alpha=" << r.config.partition.alpha
              << " clients=" << r.config.partition.num_clients << " dr_dim=" << r.config.head.dr_dim
              << " epochs=" << r.config.train.epochs << " trials=[";
    for (std::size_t i = 0; i < r.trials.size(); ++i) std::cout << (i ? ", " : "") << r.trials[i].accuracy;
    std::cout << "] mean=" << r.mean_accuracy << " std=" << r.std_accuracy << '\n';
}

int cmd_synth(const Options& o) {
    if (o.out.empty()) throw Error(ErrorCode::InvalidConfig, "--out is required");
    const auto result = generate_synthetic(synth_spec(o));
    std::cout << save_dataset(result.dataset, o.out).string() << '\n';
    return kExitOk;
}

int cmd_partition(const Options& o) {
    const auto ds = source_dataset(o);
    const auto plan = partition_dirichlet(ds, PartitionConfig{o.clients, o.alpha, o.seed});
    json j = to_json(plan);
    j["skew"] = skew_statistic(plan, ds);
    const std::string text = j.dump(2) + "\n";
    if (o.out.empty()) {
        std::cout << text;
    } else {
        write_bytes(o.out, {reinterpret_cast<const unsigned char*>(text.data()), text.size()});
    }
    return kExitOk;
}

int cmd_run(const Options& o) {
    const auto report = run_experiment(experiment_config(o));
    print_summary(report);
    if (!o.out.empty()) write_report(report, o.out);
    if (!o.save_team.empty() && report.final_team) save_team(*report.final_team, o.save_team);
    return kExitOk;
}

int cmd_sweep(const Options& o) {
    const auto reports = sweep(experiment_config(o), sweep_axis_from_string(o.axis), o.values);
    for (const auto& r : reports) print_summary(r);
    if (!o.out.empty()) write_sweep(reports, o.out);
    return kExitOk;
}

int cmd_eval(const Options& o) {
    const auto team = load_team(o.team);
    const auto ds = load_dataset(o.data);
    const auto ev = evaluate_ensemble(team, ds);
    json per_class = json::array();
    for (const auto& pc : ev.per_class) per_class.push_back(pc ? json(*pc) : json(nullptr));
    std::cout << json{{"accuracy", ev.accuracy}, {"per_class_accuracy", per_class}, {"members", team.size()}}.dump(2)
              << '\n';
    return kExitOk;
}

int cmd_embed(const Options& o) {
    EmbedServiceConfig cfg;
    cfg.base_url = resolve_embed_url(o.url);
    cfg.expected_dim = o.d2;
    cfg.retries = o.retries;
    cfg.timeout = std::chrono::milliseconds(o.timeout_ms);
    cfg.parallelism = o.parallel;
    const auto records = load_report_records(o.records);
    HttpTransport transport;
    const auto rows = build_textual_matrix(cfg, records, o.out, transport);
    std::cout << rows << " rows written to " << o.out << '\n';
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"One-shot multi-modal federated ensemble simulator"};
    app.require_subcommand(1);
    Options o;

    auto* synth = app.add_subcommand("synth", "Write a synthetic dataset");
    add_data_flags(synth, o);
    synth->add_option("--out", o.out, "Output directory")->required();

    auto* partition = app.add_subcommand("partition", "Emit a Dirichlet partition plan as JSON");
    add_data_flags(partition, o);
    add_partition_flags(partition, o);
    partition->add_option("--out", o.out, "Output file (stdout when omitted)");

    auto* run = app.add_subcommand("run", "Run one experiment");
    add_run_flags(run, o);
    run->add_option("--save-team", o.save_team, "Save the last trial's deployed model as a team directory");

    auto* sweep_cmd = app.add_subcommand("sweep", "Run one experiment per axis value");
    add_run_flags(sweep_cmd, o);
    sweep_cmd->add_option("--axis", o.axis, "alpha | clients | dr_dim | epochs")->required();
    sweep_cmd->add_option("--values", o.values, "Comma-separated axis values")->required()->delimiter(',');

    auto* eval = app.add_subcommand("eval", "Evaluate a saved team on a dataset");
    eval->add_option("--team", o.team, "team.json")->required();
    eval->add_option("--data", o.data, "Dataset manifest.json")->required();

    auto* embed = app.add_subcommand("embed", "Fetch textual embeddings for report records into textual.bin");
    embed->add_option("--records", o.records, "JSONL of {sample_id, report}")->required();
    embed->add_option("--out", o.out, "Output textual.bin")->required();
    embed->add_option("--url", o.url, "Service base URL (default: $FEDMME_EMBED_URL)");
    embed->add_option("--d2", o.d2, "Expected embedding dimension")->capture_default_str();
    embed->add_option("--retries", o.retries, "Retries per record (<= 5)")->capture_default_str();
    embed->add_option("--timeout-ms", o.timeout_ms, "Per-request timeout")->capture_default_str();
    embed->add_option("--parallel", o.parallel, "Concurrent requests")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (*synth) return cmd_synth(o);
        if (*partition) return cmd_partition(o);
        if (*run) return cmd_run(o);
        if (*sweep_cmd) return cmd_sweep(o);
        if (*eval) return cmd_eval(o);
        if (*embed) return cmd_embed(o);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return is_validation_error(e.code()) ? kExitValidation : kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitValidation;
}
