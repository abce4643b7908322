#include <doctest.h>

#include <algorithm>
#include <functional>
#include <numeric>

#include "fedmme/errors.hpp"
#include "fedmme/federation.hpp"
#include "fedmme/rng.hpp"
#include "support/temp_dir.hpp"

using namespace fedmme;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected fedmme::Error");
    return ErrorCode::IoFailure;
}

// A head whose prediction is `label` for every input.
FusionHead constant_head(std::size_t label, std::size_t y = 4) {
    auto h = init_head({2, 2, 1, y, Modality::multimodal, 0});
    std::fill(h.w_dr.data.begin(), h.w_dr.data.end(), 0.0);
    std::fill(h.w_fc.data.begin(), h.w_fc.data.end(), 0.0);
    h.b_fc[label] = 1.0;
    return h;
}

EnsembleTeam team_of(std::vector<FusionHead> heads, std::vector<std::size_t> sizes = {}) {
    if (sizes.empty()) sizes.assign(heads.size(), 10);
    std::vector<MemberProvenance> prov;
    for (std::size_t i = 0; i < heads.size(); ++i) prov.push_back({i, sizes[i], heads[i].train_meta});
    return EnsembleTeam(std::move(heads), std::move(prov), std::vector<std::size_t>(sizes.size(), 1));
}

struct Fixture {
    FeatureDataset ds = generate_synthetic({600, 6, 6, 3, 42, 0.0, SynthMode::joint_linear}).dataset;
    HeadConfig head{6, 6, 3, 3, Modality::multimodal, 1000};
    TrainConfig train{1e-3, 4, 32, 2000};
};

const std::vector<double> kZero2{0.0, 0.0};

} // namespace

TEST_CASE("hand-counted tally") {
    const std::vector<FusionHead> members{constant_head(1), constant_head(2), constant_head(1)};
    const auto p = predict_ensemble(members, kZero2, kZero2);
    CHECK(p.tally.counts == std::vector<std::size_t>{0, 2, 1, 0});
    CHECK(p.label == 1);
    CHECK(p.tally.total() == 3);
}

TEST_CASE("ties go to the lowest class") {
    const std::vector<FusionHead> pair{constant_head(0), constant_head(1)};
    CHECK(predict_ensemble(pair, kZero2, kZero2).label == 0);
    const std::vector<FusionHead> rev{constant_head(3), constant_head(2)};
    CHECK(predict_ensemble(rev, kZero2, kZero2).label == 2);
    CHECK(VoteTally{{0, 0, 0}}.winner() == 0);
}

TEST_CASE("single member ensemble equals its member") {
    Rng rng(7);
    const auto h = init_head({2, 2, 1, 4, Modality::multimodal, 3});
    const std::vector<FusionHead> one{h};
    for (int k = 0; k < 100; ++k) {
        const std::vector<double> v{rng.normal(), rng.normal()}, t{rng.normal(), rng.normal()};
        CHECK(predict_ensemble(one, v, t).label == predict(h, v, t));
    }
}

TEST_CASE("unanimous members decide") {
    const std::vector<FusionHead> all{constant_head(3), constant_head(3), constant_head(3), constant_head(3)};
    CHECK(predict_ensemble(all, kZero2, kZero2).label == 3);
}

TEST_CASE("ensemble input widths are checked") {
    const std::vector<FusionHead> one{constant_head(0)};
    const std::vector<double> v3{0, 0, 0};
    CHECK(code_of([&] { predict_ensemble(one, v3, kZero2); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("team assembly enforces one upload per client") {
    TeamAssembler a(3);
    a.accept_upload(0, constant_head(0), {0, 5, std::nullopt});
    a.accept_upload(2, constant_head(2), {2, 5, std::nullopt});
    CHECK(code_of([&] { a.accept_upload(2, constant_head(1), {2, 5, std::nullopt}); }) == ErrorCode::ProtocolViolation);
    CHECK(code_of([&] { a.accept_upload(3, constant_head(1), {3, 5, std::nullopt}); }) == ErrorCode::ProtocolViolation);
    CHECK(code_of([&] { std::move(a).finalize(); }) == ErrorCode::ProtocolViolation);

    TeamAssembler b(2);
    b.accept_upload(1, constant_head(1), {1, 3, std::nullopt});
    b.accept_upload(0, constant_head(0), {0, 4, std::nullopt});
    const auto team = std::move(b).finalize();
    CHECK(team.size() == 2);
    CHECK(team.provenance()[0].client_id == 0);
    CHECK(team.provenance()[1].shard_size == 3);
    CHECK(std::vector<std::size_t>(team.upload_log().begin(), team.upload_log().end()) ==
          std::vector<std::size_t>{1, 1});
}

TEST_CASE("a team with a doubled upload log is refused") {
    std::vector<MemberProvenance> prov{{0, 1, std::nullopt}, {1, 1, std::nullopt}};
    CHECK(code_of([&] {
              EnsembleTeam({constant_head(0), constant_head(1)}, prov, {1, 2});
          }) == ErrorCode::ProtocolViolation);
    CHECK(code_of([&] {
              EnsembleTeam({constant_head(0), constant_head(1, 3)}, prov, {1, 1});
          }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("run_one_shot collects every client once, in order") {
    Fixture f;
    const auto plan = partition_dirichlet(f.ds, {5, 0.3, 9});
    const auto team = run_one_shot(f.ds, plan, f.head, f.train, 1);
    CHECK(std::vector<std::size_t>(team.upload_log().begin(), team.upload_log().end()) ==
          std::vector<std::size_t>{1, 1, 1, 1, 1});
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(team.provenance()[i].client_id == i);
        CHECK(team.provenance()[i].shard_size == plan.shards[i].size());
        CHECK(team.members()[i].cfg.init_seed == derive_seed(f.head.init_seed, i));
    }
}

TEST_CASE("one client federation equals a direct train_local call") {
    Fixture f;
    const auto plan = partition_dirichlet(f.ds, {1, 0.3, 9});
    const auto team = run_one_shot(f.ds, plan, f.head, f.train);
    const auto direct =
        train_local(f.ds, plan.shards[0], client_head_config(f.head, 0), client_train_config(f.train, 0));
    CHECK(team.members()[0] == direct.head);

    const auto uni = build_unimodal_baseline(f.ds, plan, f.head, f.train);
    auto vo = client_head_config(f.head, 0);
    vo.modality = Modality::visual_only;
    CHECK(uni.members()[0] == train_local(f.ds, plan.shards[0], vo, client_train_config(f.train, 0)).head);
}

TEST_CASE("parallel and serial training give identical teams") {
    Fixture f;
    const auto plan = partition_dirichlet(f.ds, {5, 0.3, 4});
    const auto serial = run_one_shot(f.ds, plan, f.head, f.train, 1);
    CHECK(run_one_shot(f.ds, plan, f.head, f.train, 3) == serial);
    CHECK(run_one_shot(f.ds, plan, f.head, f.train, 8) == serial);
}

TEST_CASE("client seeds do not depend on the number of clients") {
    CHECK(client_head_config({1, 1, 1, 2, Modality::multimodal, 5}, 3).init_seed == (5 ^ mix64(3)));
    CHECK(client_train_config({1e-3, 1, 1, 8}, 0).shuffle_seed == (8 ^ mix64(0)));
}

TEST_CASE("training errors carry the client id") {
    Fixture f;
    auto plan = partition_dirichlet(f.ds, {3, 0.3, 1});
    plan.shards[1].clear();
    try {
        run_one_shot(f.ds, plan, f.head, f.train, 1);
        FAIL("expected EmptyShard");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyShard);
        CHECK(std::string(e.what()).find("client 1") != std::string::npos);
    }
}

TEST_CASE("unimodal members ignore textual perturbation") {
    Fixture f;
    const auto plan = partition_dirichlet(f.ds, {3, 0.6, 2});
    const auto team = build_unimodal_baseline(f.ds, plan, f.head, f.train);
    Rng rng(5);
    for (std::size_t i = 0; i < 50; ++i) {
        const auto s = sample_at(f.ds, i);
        std::vector<double> t(s.textual.begin(), s.textual.end());
        for (auto& x : t) x += 50.0 * rng.normal();
        CHECK(predict_ensemble(team, s.visual, t).label == predict_ensemble(team, s.visual, s.textual).label);
    }
}

TEST_CASE("evaluation matches a naive recount") {
    Fixture f;
    const auto plan = partition_dirichlet(f.ds, {4, 0.3, 3});
    const auto team = run_one_shot(f.ds, plan, f.head, f.train);
    const auto ev = evaluate_ensemble(team, f.ds);
    std::size_t hits = 0;
    std::vector<std::size_t> cls_hits(3, 0), cls_n(3, 0);
    for (std::size_t i = 0; i < f.ds.size(); ++i) {
        const auto s = sample_at(f.ds, i);
        const bool ok = predict_ensemble(team, s.visual, s.textual).label == s.label;
        hits += ok;
        cls_hits[s.label] += ok;
        ++cls_n[s.label];
    }
    CHECK(ev.accuracy == static_cast<double>(hits) / static_cast<double>(f.ds.size()));
    for (std::size_t c = 0; c < 3; ++c) {
        REQUIRE(ev.per_class[c].has_value());
        CHECK(*ev.per_class[c] == static_cast<double>(cls_hits[c]) / static_cast<double>(cls_n[c]));
    }
}

TEST_CASE("constant team on single-class test set") {
    FeatureDataset test;
    test.name = "zeros";
    test.visual_dim = test.textual_dim = 2;
    test.num_classes = 4;
    test.visual = Matrix(10, 2, 0.5);
    test.textual = Matrix(10, 2, -0.5);
    test.labels.assign(10, 0);
    const auto ev = evaluate_ensemble(team_of({constant_head(0), constant_head(0)}), test);
    CHECK(ev.accuracy == 1.0);
    CHECK(ev.per_class[0] == 1.0);
    CHECK_FALSE(ev.per_class[1].has_value());
}

TEST_CASE("uniform labels hold the ensemble at chance") {
    const auto data = generate_synthetic({5000, 16, 16, 4, 10, 0.0, SynthMode::label_uniform}).dataset;
    const auto test = generate_synthetic({5000, 16, 16, 4, 11, 0.0, SynthMode::label_uniform}).dataset;
    const auto plan = partition_dirichlet(data, {5, 0.3, 1});
    const auto team = run_one_shot(data, plan, {16, 16, 4, 4, Modality::multimodal, 1}, {1e-3, 10, 128, 1});
    CHECK(std::abs(evaluate_ensemble(team, test).accuracy - 0.25) <= 0.05);
}

TEST_CASE("fedavg of identical members is that member") {
    const auto h = init_head({3, 4, 2, 3, Modality::multimodal, 17});
    const auto avg = fedavg_one_shot(team_of({h, h, h}, {1, 5, 9}));
    CHECK(avg.w_dr.data == h.w_dr.data);
    CHECK(avg.w_fc.data == h.w_fc.data);
    CHECK(avg.b_fc == h.b_fc);
    CHECK(fedavg_one_shot(team_of({avg, avg})).w_fc == avg.w_fc);
}

TEST_CASE("fedavg of W and -W is zero") {
    const auto h = init_head({3, 4, 2, 3, Modality::multimodal, 17});
    auto neg = h;
    for (auto* v : {&neg.w_dr.data, &neg.b_dr, &neg.w_fc.data, &neg.b_fc})
        for (auto& x : *v) x = -x;
    const auto avg = fedavg_one_shot(team_of({h, neg}, {7, 7}));
    for (double x : avg.w_dr.data) CHECK(x == 0.0);
    for (double x : avg.w_fc.data) CHECK(x == 0.0);
}

TEST_CASE("fedavg weights members by shard size") {
    const auto a = init_head({3, 4, 2, 3, Modality::multimodal, 1});
    const auto b = init_head({3, 4, 2, 3, Modality::multimodal, 2});
    const auto c = init_head({3, 4, 2, 3, Modality::multimodal, 3});
    const auto avg = fedavg_one_shot(team_of({a, b, c}, {1, 1, 2}));
    for (std::size_t i = 0; i < a.w_fc.data.size(); ++i) {
        const double expect = (a.w_fc.data[i] + b.w_fc.data[i] + 2.0 * c.w_fc.data[i]) / 4.0;
        CHECK(avg.w_fc.data[i] == doctest::Approx(expect).epsilon(1e-13));
    }
    for (std::size_t i = 0; i < a.w_dr.data.size(); ++i) {
        const double expect = (a.w_dr.data[i] + b.w_dr.data[i] + 2.0 * c.w_dr.data[i]) / 4.0;
        CHECK(avg.w_dr.data[i] == doctest::Approx(expect).epsilon(1e-13));
    }
    CHECK_FALSE(avg.train_meta.has_value());
}

TEST_CASE("fedavg rejects mixed shapes") {
    // The team constructor allows a d_r mismatch (voting only needs d1, d2, Y);
    // averaging does not.
    const auto a = init_head({3, 4, 2, 3, Modality::multimodal, 1});
    const auto b = init_head({3, 4, 3, 3, Modality::multimodal, 1});
    CHECK(code_of([&] { fedavg_one_shot(team_of({a, b})); }) == ErrorCode::HeterogeneousShapes);
}

TEST_CASE("team directory round-trips") {
    testing::TempDir dir;
    Fixture f;
    const auto plan = partition_dirichlet(f.ds, {3, 0.3, 3});
    const auto team = run_one_shot(f.ds, plan, f.head, f.train);
    const auto manifest = save_team(team, dir.path());
    CHECK(manifest.filename() == "team.json");
    CHECK(load_team(manifest) == team);
}
