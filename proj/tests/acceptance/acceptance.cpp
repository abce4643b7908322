// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "fedmme/errors.hpp"
#include "fedmme/experiment.hpp"
#include "fedmme/ingest.hpp"
#include "fedmme/rng.hpp"
#include "oracles/finite_difference.hpp"
#include "support/temp_dir.hpp"

using namespace fedmme;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

int g_failures = 0;

void criterion(int id, const std::string& name, const std::function<Outcome()>& body, double budget_s = 0.0) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
        out = body();
    } catch (const std::exception& e) {
        out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (budget_s > 0.0 && secs > budget_s) {
        out.pass = false;
        out.detail += " (over the " + std::to_string(budget_s) + " s budget)";
    }
    g_failures += !out.pass;
    std::printf("[%s] %2d %-28s %7.2fs  %s\n", out.pass ? "PASS" : "FAIL", id, name.c_str(), secs, out.detail.c_str());
    std::fflush(stdout);
}

template <typename T>
std::string fmt(T v) {
    std::ostringstream s;
    s << v;
    return s.str();
}

bool throws_code(ErrorCode code, const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code() == code;
    }
    return false;
}

// The synthetic family used by the relational criteria.
ExperimentConfig family(std::uint64_t seed, Method method) {
    ExperimentConfig cfg;
    cfg.synth = {5000, 16, 16, 4, seed, 0.0, SynthMode::joint_linear};
    cfg.partition = {5, 0.3, 0};
    cfg.head.dr_dim = 4;
    cfg.train = TrainConfig{};
    cfg.method = method;
    cfg.trials = 3;
    cfg.seed = seed;
    return cfg;
}

// ---------------------------------------------------------------------------

Outcome gradient_oracle() {
    Rng rng(20240601);
    int cases = 0;
    double worst = 0.0;
    for (; cases < 24; ++cases) {
        const bool visual_only = cases % 6 == 5;
        HeadConfig cfg{1 + rng.below(8), 1 + rng.below(9), 1 + rng.below(5), 2 + rng.below(5),
                       visual_only ? Modality::visual_only : Modality::multimodal, rng()};
        if (visual_only) cfg.dr_dim = 0;
        auto head = init_head(cfg);
        for (auto& b : head.b_fc) b = 0.3 * rng.normal();
        for (auto& b : head.b_dr) b = 0.3 * rng.normal();

        const std::size_t batch_n = 1 + rng.below(6);
        std::vector<std::vector<double>> store;
        for (std::size_t k = 0; k < batch_n; ++k) {
            std::vector<double> v(cfg.visual_dim), t(cfg.textual_dim);
            for (auto& x : v) x = rng.normal();
            for (auto& x : t) x = rng.normal();
            store.push_back(std::move(v));
            store.push_back(std::move(t));
        }
        std::vector<FeatureSample> batch;
        for (std::size_t k = 0; k < batch_n; ++k) {
            batch.push_back({store[2 * k], store[2 * k + 1], static_cast<std::uint32_t>(rng.below(cfg.num_classes))});
        }
        const auto analytic = oracle::flatten(loss_and_grads(head, batch).grads);
        const auto numeric = oracle::numeric_gradient(head, batch, 1e-6);
        if (analytic.size() != numeric.size()) return {false, "gradient layout differs in case " + fmt(cases)};
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            worst = std::max(worst, oracle::relative_error(analytic[i], numeric[i]));
        }
    }
    return {worst <= 1e-4, fmt(cases) + " cases, worst relative error " + fmt(worst)};
}

Outcome partition_correctness() {
    Rng rng(77);
    const std::array<double, 3> alphas{0.1, 0.3, 0.6};
    const std::array<std::size_t, 3> clients{2, 5, 20};
    int bad = 0;
    for (int k = 0; k < 100; ++k) {
        const std::size_t y = 2 + rng.below(6);
        const std::size_t n = 10 * y + rng.below(400);
        const auto ds = generate_synthetic({n, 2, 2, y, rng(), 0.0, SynthMode::label_uniform}).dataset;
        const PartitionConfig pc{clients[rng.below(3)], alphas[rng.below(3)], rng()};
        const auto plan = partition_dirichlet(ds, pc);
        std::vector<int> seen(ds.size(), 0);
        bool ok = plan.shards.size() == pc.num_clients;
        for (const auto& s : plan.shards) {
            ok = ok && !s.empty();
            for (auto i : s) ++seen[i];
        }
        ok = ok && std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; });
        ok = ok && to_json(plan).dump() == to_json(partition_dirichlet(ds, pc)).dump();
        bad += !ok;
    }
    return {bad == 0, "100 cases, " + fmt(bad) + " violations"};
}

Outcome one_shot_protocol() {
    const auto ds = generate_synthetic({600, 6, 6, 3, 1, 0.0, SynthMode::joint_linear}).dataset;
    int runs = 0, bad_logs = 0;
    for (std::size_t n : {1, 3, 5, 12}) {
        const auto plan = partition_dirichlet(ds, {n, 0.3, n});
        const auto team = run_one_shot(ds, plan, {6, 6, 2, 3, Modality::multimodal, 1}, {1e-3, 2, 32, 1});
        const auto unimodal = build_unimodal_baseline(ds, plan, {6, 6, 2, 3, Modality::multimodal, 1}, {1e-3, 2, 32, 1});
        for (const auto* t : {&team, &unimodal}) {
            ++runs;
            bad_logs += t->upload_log().size() != n ||
                        !std::all_of(t->upload_log().begin(), t->upload_log().end(), [](auto c) { return c == 1; });
        }
    }
    const auto head = init_head({6, 6, 2, 3, Modality::multimodal, 0});
    TeamAssembler server(2);
    server.accept_upload(0, head, {0, 1, std::nullopt});
    const bool double_upload = throws_code(ErrorCode::ProtocolViolation, [&] { server.accept_upload(0, head, {0, 1, std::nullopt}); });
    const bool forged_log = throws_code(ErrorCode::ProtocolViolation, [&] {
        EnsembleTeam({head, head}, {{0, 1, std::nullopt}, {1, 1, std::nullopt}}, {1, 2});
    });
    return {bad_logs == 0 && double_upload && forged_log,
            fmt(runs) + " runs all-ones=" + fmt(bad_logs == 0) + ", double upload rejected=" + fmt(double_upload) +
                ", forged log rejected=" + fmt(forged_log)};
}

Outcome voting_semantics() {
    Rng rng(5150);
    int teams = 0, permutation_breaks = 0, tally_breaks = 0, tie_breaks = 0;
    for (; teams < 600; ++teams) {
        const std::size_t y = 2 + rng.below(5), n = 1 + rng.below(9);
        std::vector<FusionHead> members;
        for (std::size_t i = 0; i < n; ++i) {
            auto h = init_head({3, 3, 2, y, Modality::multimodal, rng()});
            if (teams % 3 == 0) {
                // Constant voters make ties frequent.
                std::fill(h.w_fc.data.begin(), h.w_fc.data.end(), 0.0);
                h.b_fc[rng.below(y)] = 1.0;
            }
            members.push_back(std::move(h));
        }
        for (int probe = 0; probe < 5; ++probe) {
            std::vector<double> v(3), t(3);
            for (auto& x : v) x = rng.normal();
            for (auto& x : t) x = rng.normal();
            const auto base = predict_ensemble(members, v, t);
            tally_breaks += base.tally.total() != n;
            std::vector<std::size_t> votes(y, 0);
            for (const auto& m : members) ++votes[predict(m, v, t)];
            const auto top = *std::max_element(votes.begin(), votes.end());
            const auto lowest = static_cast<std::size_t>(std::find(votes.begin(), votes.end(), top) - votes.begin());
            tie_breaks += base.label != lowest;
            auto shuffled = members;
            rng.shuffle(std::span<FusionHead>(shuffled));
            std::reverse(members.begin(), members.end());
            permutation_breaks += predict_ensemble(shuffled, v, t).label != base.label;
            permutation_breaks += predict_ensemble(members, v, t).label != base.label;
        }
    }
    return {permutation_breaks == 0 && tally_breaks == 0 && tie_breaks == 0,
            fmt(teams) + " teams; permutation=" + fmt(permutation_breaks) + " tally=" + fmt(tally_breaks) +
                " tie-break=" + fmt(tie_breaks) + " violations"};
}

Outcome multimodal_gain() {
    const auto mme = run_experiment(family(0, Method::fedmme));
    const auto ens = run_experiment(family(0, Method::fedensemble));
    const double gap = mme.mean_accuracy - ens.mean_accuracy;
    return {gap >= 0.10 && mme.mean_accuracy >= 0.90,
            "fedmme " + fmt(mme.mean_accuracy) + " vs fedensemble " + fmt(ens.mean_accuracy) + " (gap " + fmt(gap) + ")"};
}

Outcome ensemble_vs_average() {
    int wins = 0;
    std::string detail;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        auto vote = family(seed, Method::fedmme);
        vote.partition.alpha = 0.1;
        auto avg = vote;
        avg.method = Method::fedavg_oneshot;
        const double a = run_experiment(vote).mean_accuracy, b = run_experiment(avg).mean_accuracy;
        wins += a >= b;
        detail += "seed " + fmt(seed) + ": " + fmt(a) + " vs " + fmt(b) + "; ";
    }
    return {wins >= 2, detail + fmt(wins) + "/3"};
}

Outcome scaling_trend() {
    auto five = family(0, Method::fedmme);
    auto twenty = five;
    twenty.partition.num_clients = 20;
    const double a5 = run_experiment(five).mean_accuracy, a20 = run_experiment(twenty).mean_accuracy;
    return {a20 >= a5 - 0.02, "N=5 " + fmt(a5) + ", N=20 " + fmt(a20)};
}

Outcome dr_ablation() {
    int wins = 0;
    std::string detail;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        auto cfg = family(seed, Method::fedmme);
        cfg.synth.mode = SynthMode::visual_only;  // textual block is pure noise
        cfg.partition.alpha = 0.6;
        const auto reports = sweep(cfg, SweepAxis::dr_dim, {4, 16});
        const double small = reports[0].mean_accuracy, full = reports[1].mean_accuracy;
        wins += small >= full;
        detail += "seed " + fmt(seed) + ": " + fmt(small) + " vs " + fmt(full) + "; ";
    }
    return {wins >= 2, detail + fmt(wins) + "/3"};
}

std::string run_cli(const std::string& args, int& status) {
    const std::string cmd = std::string(FEDMME_CLI_PATH) + " " + args + " 2>/dev/null";
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe) throw std::runtime_error("popen failed");
    std::string out;
    std::array<char, 256> buf{};
    while (std::fgets(buf.data(), static_cast<int>(buf.size()), pipe)) out += buf.data();
    status = ::pclose(pipe);
    return out;
}

Outcome determinism() {
    testing::TempDir dir;
    const std::string flags = "run --n 2000 --d1 16 --d2 16 --dr-dim 4 --epochs 20 --trials 3 --seed 9";
    int s1 = 0, s2 = 0;
    run_cli(flags + " --out " + (dir / "a").string(), s1);
    run_cli(flags + " --out " + (dir / "b").string(), s2);
    auto trial_accuracies = [](const fs::path& report) {
        std::vector<double> out;
        const auto j = nlohmann::json::parse(testing::read_all(report));
        for (const auto& t : j.at("trials")) out.push_back(t.at("accuracy"));
        return out;
    };
    const auto a = trial_accuracies(dir / "a" / "report.json"), b = trial_accuracies(dir / "b" / "report.json");
    const bool cli_same = s1 == 0 && s2 == 0 && a == b && a.size() == 3;

    const auto ds = generate_synthetic({3000, 16, 16, 4, 3, 0.0, SynthMode::joint_linear}).dataset;
    const auto plan = partition_dirichlet(ds, {5, 0.3, 3});
    const HeadConfig hc{16, 16, 4, 4, Modality::multimodal, 3};
    const TrainConfig tc{1e-3, 10, 128, 3};
    const bool parallel_same = run_one_shot(ds, plan, hc, tc, 1) == run_one_shot(ds, plan, hc, tc, 5);
    return {cli_same && parallel_same, "CLI exit " + fmt(s1) + "/" + fmt(s2) + ", trials identical=" + fmt(a == b) +
                                           " (" + fmt(a.size()) + " trials), parallel==serial=" + fmt(parallel_same)};
}

Outcome format_fidelity() {
    testing::TempDir dir;
    std::vector<std::string> failed;
    auto expect = [&](bool ok, const char* what) {
        if (!ok) failed.push_back(what);
    };

    const auto ds = generate_synthetic({257, 7, 5, 3, 8, 0.3, SynthMode::joint_linear}).dataset;
    const auto manifest = save_dataset(ds, dir / "ds");
    expect(load_dataset(manifest) == ds, "dataset round-trip");
    save_dataset(load_dataset(manifest), dir / "ds2");
    for (const char* f : {"manifest.json", "visual.bin", "textual.bin", "labels.bin"}) {
        expect(testing::read_all(dir / "ds" / f) == testing::read_all(dir / "ds2" / f), "dataset bytes stable");
    }

    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), 0);
    const auto head = train_local(ds, all, {7, 5, 2, 3, Modality::multimodal, 4}, {1e-3, 3, 64, 4}).head;
    save_head(head, dir / "model.json");
    expect(load_head(dir / "model.json") == head, "model round-trip");

    fs::resize_file(dir / "ds2" / "visual.bin", 257 * 7 * 4 - 4);
    expect(throws_code(ErrorCode::SizeMismatch, [&] { load_dataset(dir / "ds2" / "manifest.json"); }), "short visual.bin");
    fs::resize_file(dir / "ds" / "labels.bin", 257 * 4 + 4);
    expect(throws_code(ErrorCode::SizeMismatch, [&] { load_dataset(dir / "ds" / "manifest.json"); }), "long labels.bin");

    // Ingest stub suite.
    EmbedServiceConfig cfg;
    cfg.base_url = "http://stub";
    cfg.expected_dim = 8;
    const Sleeper no_sleep = [](std::chrono::milliseconds) {};
    const ReportRecord rec{"s", "report", std::nullopt};
    {
        StubTransport stub([](const auto&, std::size_t) { return StubTransport::ok_embedding(std::vector<double>(7, 1.0)); });
        expect(throws_code(ErrorCode::DimMismatch, [&] { fetch_embedding(cfg, rec, stub, no_sleep); }), "dim mismatch");
    }
    {
        StubTransport stub([](const auto&, std::size_t call) {
            return call < 2 ? TransportResult{TransportResult::Kind::response, 503, ""}
                            : StubTransport::ok_embedding(std::vector<double>(8, 1.0));
        });
        fetch_embedding(cfg, rec, stub, no_sleep);
        expect(stub.request_count() == 3, "retry count");
    }
    {
        StubTransport stub([](const auto&, std::size_t) { return TransportResult{TransportResult::Kind::timeout, 0, ""}; });
        expect(throws_code(ErrorCode::Timeout, [&] { fetch_embedding(cfg, rec, stub, no_sleep); }) &&
                   stub.request_count() == cfg.retries + 1,
               "retry bound");
    }
    {
        const std::vector<ReportRecord> recs{{"a", "x", std::nullopt}, {"b", "y", std::nullopt}, {"c", "z", std::nullopt}};
        StubTransport stub([](const StubTransport::Request& r, std::size_t) {
            return StubTransport::ok_embedding(std::vector<double>(r.body.find('y') != std::string::npos ? 9 : 8, 0.5));
        });
        const bool failed_fetch = throws_code(ErrorCode::DimMismatch, [&] {
            build_textual_matrix(cfg, recs, dir / "textual.bin", stub, no_sleep);
        });
        expect(failed_fetch && !fs::exists(dir / "textual.bin") && !fs::exists(dir / "textual.bin.partial"),
               "atomic output");
    }

    std::string detail = failed.empty() ? "dataset, model, size checks and ingest stubs ok" : "failed:";
    for (const auto& f : failed) detail += " " + f + ";";
    return {failed.empty(), detail};
}

} // namespace

int main() {
    std::printf("fedmme acceptance suite\n");
    criterion(1, "gradient oracle", gradient_oracle, 10.0);
    criterion(2, "partition correctness", partition_correctness, 5.0);
    criterion(3, "one-shot protocol", one_shot_protocol);
    criterion(4, "voting semantics", voting_semantics);
    criterion(5, "multi-modal gain", multimodal_gain, 180.0);
    criterion(6, "ensemble vs averaging", ensemble_vs_average);
    criterion(7, "scaling trend", scaling_trend);
    criterion(8, "dr-size ablation", dr_ablation);
    criterion(9, "determinism", determinism);
    criterion(10, "format fidelity", format_fidelity);
    std::printf("%d of 10 criteria failed\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
