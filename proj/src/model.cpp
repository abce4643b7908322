#include "fedmme/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include <nlohmann/json.hpp>

#include "fedmme/errors.hpp"
#include "fedmme/rng.hpp"

namespace fedmme {

using nlohmann::json;

std::string to_string(Modality m) { return m == Modality::multimodal ? "multimodal" : "visual_only"; }

Modality modality_from_string(const std::string& s) {
    if (s == "multimodal") return Modality::multimodal;
    if (s == "visual_only") return Modality::visual_only;
    throw Error(ErrorCode::InvalidConfig, "unknown modality '" + s + "'");
}

std::vector<std::string> validate(const HeadConfig& cfg) {
    if (cfg.visual_dim < 1) throw Error(ErrorCode::InvalidConfig, "visual_dim must be >= 1");
    if (cfg.num_classes < 2) throw Error(ErrorCode::InvalidConfig, "num_classes must be >= 2");
    std::vector<std::string> warnings;
    if (cfg.modality == Modality::multimodal) {
        if (cfg.textual_dim < 1) throw Error(ErrorCode::InvalidConfig, "textual_dim must be >= 1");
        if (cfg.dr_dim < 1) throw Error(ErrorCode::InvalidConfig, "dr_dim must be >= 1 for multimodal heads");
        if (cfg.dr_dim >= cfg.visual_dim) {
            warnings.push_back("dr_dim " + std::to_string(cfg.dr_dim) + " >= visual_dim " +
                               std::to_string(cfg.visual_dim) + ": textual features are not reduced below the visual width");
        }
    }
    return warnings;
}

std::vector<std::size_t> batch_sizes(std::size_t n, std::size_t batch_size) {
    if (batch_size == 0) throw Error(ErrorCode::InvalidConfig, "batch_size must be >= 1");
    std::vector<std::size_t> sizes(n / batch_size, batch_size);
    if (n % batch_size != 0) sizes.push_back(n % batch_size);
    return sizes;
}

void validate(const TrainConfig& tc) {
    // lr == 0 is accepted: it freezes the head at its initialization.
    if (!(tc.lr >= 0.0) || !std::isfinite(tc.lr)) throw Error(ErrorCode::InvalidConfig, "lr must be >= 0");
    if (tc.batch_size < 1) throw Error(ErrorCode::InvalidConfig, "batch_size must be >= 1");
    if (tc.epochs < 1) throw Error(ErrorCode::InvalidConfig, "epochs must be >= 1");
}

FeatureSample sample_at(const FeatureDataset& ds, std::size_t i) {
    return {ds.visual.row(i), ds.textual.row(i), ds.labels[i]};
}

FusionHead init_head(const HeadConfig& cfg) {
    validate(cfg);
    FusionHead head;
    head.cfg = cfg;
    Rng rng(cfg.init_seed);
    auto fill = [&rng](Matrix& m, std::size_t fan_in, std::size_t fan_out) {
        const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (double& w : m.data) w = rng.uniform(-s, s);
    };
    if (cfg.modality == Modality::multimodal) {
        head.w_dr = Matrix(cfg.dr_dim, cfg.textual_dim);
        head.b_dr.assign(cfg.dr_dim, 0.0);
        fill(head.w_dr, cfg.textual_dim, cfg.dr_dim);
    }
    head.w_fc = Matrix(cfg.num_classes, cfg.fused_dim());
    head.b_fc.assign(cfg.num_classes, 0.0);
    fill(head.w_fc, cfg.fused_dim(), cfg.num_classes);
    return head;
}

namespace {

void check_shapes(const FusionHead& head) {
    const auto& cfg = head.cfg;
    const bool mm = cfg.modality == Modality::multimodal;
    const bool ok = head.w_fc.rows == cfg.num_classes && head.w_fc.cols == cfg.fused_dim() &&
                    head.w_fc.data.size() == cfg.num_classes * cfg.fused_dim() &&
                    head.b_fc.size() == cfg.num_classes &&
                    head.w_dr.rows == (mm ? cfg.dr_dim : 0) && head.w_dr.cols == (mm ? cfg.textual_dim : 0) &&
                    head.w_dr.data.size() == head.w_dr.rows * head.w_dr.cols && head.b_dr.size() == head.w_dr.rows;
    if (!ok) throw Error(ErrorCode::ShapeMismatch, "head weights disagree with their config");
}

void check_inputs(const HeadConfig& cfg, std::span<const double> visual, std::span<const double> textual) {
    if (visual.size() != cfg.visual_dim) {
        throw Error(ErrorCode::ShapeMismatch, "visual length " + std::to_string(visual.size()) + " != " +
                                                  std::to_string(cfg.visual_dim));
    }
    if (cfg.modality == Modality::multimodal && textual.size() != cfg.textual_dim) {
        throw Error(ErrorCode::ShapeMismatch, "textual length " + std::to_string(textual.size()) + " != " +
                                                  std::to_string(cfg.textual_dim));
    }
}

// Forward pass without shape checks; fills fused and logits.
void forward_into(const FusionHead& head, std::span<const double> visual, std::span<const double> textual,
                  std::vector<double>& fused, std::vector<double>& logits) {
    const auto& cfg = head.cfg;
    fused.resize(cfg.fused_dim());
    std::copy(visual.begin(), visual.end(), fused.begin());
    if (cfg.modality == Modality::multimodal) {
        for (std::size_t r = 0; r < cfg.dr_dim; ++r) {
            const auto w = head.w_dr.row(r);
            double acc = head.b_dr[r];
            for (std::size_t k = 0; k < cfg.textual_dim; ++k) acc += w[k] * textual[k];
            fused[cfg.visual_dim + r] = acc;
        }
    }
    logits.resize(cfg.num_classes);
    for (std::size_t c = 0; c < cfg.num_classes; ++c) {
        const auto w = head.w_fc.row(c);
        double acc = head.b_fc[c];
        for (std::size_t k = 0; k < fused.size(); ++k) acc += w[k] * fused[k];
        logits[c] = acc;
    }
}

// Max-subtracted softmax; returns log-sum-exp of the logits.
double softmax_into(std::span<const double> logits, std::vector<double>& probs) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    probs.resize(logits.size());
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.size(); ++c) sum += (probs[c] = std::exp(logits[c] - mx));
    for (double& p : probs) p /= sum;
    return mx + std::log(sum);
}

} // namespace

ForwardResult forward(const FusionHead& head, std::span<const double> visual, std::span<const double> textual) {
    check_shapes(head);
    check_inputs(head.cfg, visual, textual);
    ForwardResult out;
    forward_into(head, visual, textual, out.fused, out.logits);
    softmax_into(out.logits, out.probs);
    return out;
}

LossAndGrads loss_and_grads(const FusionHead& head, std::span<const FeatureSample> batch) {
    if (batch.empty()) throw Error(ErrorCode::EmptyBatch, "loss requested on an empty batch");
    check_shapes(head);
    const auto& cfg = head.cfg;
    const bool mm = cfg.modality == Modality::multimodal;

    LossAndGrads out;
    auto& g = out.grads;
    g.w_fc = Matrix(head.w_fc.rows, head.w_fc.cols);
    g.b_fc.assign(head.b_fc.size(), 0.0);
    g.w_dr = Matrix(head.w_dr.rows, head.w_dr.cols);
    g.b_dr.assign(head.b_dr.size(), 0.0);

    std::vector<double> fused, logits, probs, dreduced(mm ? cfg.dr_dim : 0);
    double loss_sum = 0.0;
    for (const auto& s : batch) {
        check_inputs(cfg, s.visual, s.textual);
        if (s.label >= cfg.num_classes) throw Error(ErrorCode::ShapeMismatch, "label outside the head's classes");
        forward_into(head, s.visual, s.textual, fused, logits);
        const double lse = softmax_into(logits, probs);
        loss_sum += lse - logits[s.label];

        // dlogits = probs - onehot(label), reused in place.
        probs[s.label] -= 1.0;
        std::fill(dreduced.begin(), dreduced.end(), 0.0);
        for (std::size_t c = 0; c < cfg.num_classes; ++c) {
            const double dl = probs[c];
            g.b_fc[c] += dl;
            auto gw = g.w_fc.row(c);
            for (std::size_t k = 0; k < fused.size(); ++k) gw[k] += dl * fused[k];
            if (mm) {
                const auto w = head.w_fc.row(c);
                for (std::size_t r = 0; r < cfg.dr_dim; ++r) dreduced[r] += w[cfg.visual_dim + r] * dl;
            }
        }
        for (std::size_t r = 0; r < dreduced.size(); ++r) {
            g.b_dr[r] += dreduced[r];
            auto gw = g.w_dr.row(r);
            for (std::size_t k = 0; k < cfg.textual_dim; ++k) gw[k] += dreduced[r] * s.textual[k];
        }
    }

    const double inv = 1.0 / static_cast<double>(batch.size());
    out.loss = loss_sum * inv;
    if (!std::isfinite(out.loss)) throw Error(ErrorCode::NonFiniteLoss, "batch loss is not finite");
    for (auto* v : {&g.w_fc.data, &g.b_fc, &g.w_dr.data, &g.b_dr}) {
        for (double& x : *v) x *= inv;
    }
    return out;
}

LocalTrainResult train_local(const FeatureDataset& ds, std::span<const std::size_t> shard, const HeadConfig& head_cfg,
                             const TrainConfig& tc) {
    validate(tc);
    if (shard.empty()) throw Error(ErrorCode::EmptyShard, "cannot train on an empty shard");
    if (head_cfg.visual_dim != ds.visual_dim || head_cfg.num_classes != ds.num_classes ||
        (head_cfg.modality == Modality::multimodal && head_cfg.textual_dim != ds.textual_dim)) {
        throw Error(ErrorCode::ShapeMismatch, "head config does not match dataset dimensions");
    }
    for (auto idx : shard) {
        if (idx >= ds.size()) throw Error(ErrorCode::ShapeMismatch, "shard index out of range");
    }

    LocalTrainResult result{init_head(head_cfg), {}};
    FusionHead& head = result.head;
    std::vector<std::size_t> order(shard.begin(), shard.end());
    std::vector<FeatureSample> batch;
    batch.reserve(std::min(tc.batch_size, order.size()));
    Rng rng(tc.shuffle_seed);
    const auto sizes = batch_sizes(order.size(), tc.batch_size);

    auto step = [lr = tc.lr](std::vector<double>& w, const std::vector<double>& g) {
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
    };

    for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(order));
        double epoch_loss = 0.0;
        std::size_t start = 0;
        for (std::size_t b = 0; b < sizes.size(); ++b) {
            batch.clear();
            for (std::size_t k = start; k < start + sizes[b]; ++k) batch.push_back(sample_at(ds, order[k]));
            start += sizes[b];
            LossAndGrads lg;
            try {
                lg = loss_and_grads(head, batch);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::NonFiniteLoss) throw;
                throw Error(ErrorCode::NonFiniteLoss,
                            "training diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b));
            }
            epoch_loss += lg.loss * static_cast<double>(batch.size());
            step(head.w_fc.data, lg.grads.w_fc.data);
            step(head.b_fc, lg.grads.b_fc);
            step(head.w_dr.data, lg.grads.w_dr.data);
            step(head.b_dr, lg.grads.b_dr);
        }
        result.history.push_back(epoch_loss / static_cast<double>(order.size()));
    }

    head.train_meta = TrainMeta{tc.lr, tc.epochs, tc.batch_size, tc.shuffle_seed, result.history.back()};
    return result;
}

std::size_t argmax(std::span<const double> values) {
    return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

std::size_t predict(const FusionHead& head, std::span<const double> visual, std::span<const double> textual) {
    check_shapes(head);
    check_inputs(head.cfg, visual, textual);
    std::vector<double> fused, logits;
    forward_into(head, visual, textual, fused, logits);
    return argmax(logits);
}

double accuracy(const FusionHead& head, const FeatureDataset& ds) {
    if (ds.size() == 0) return 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        correct += predict(head, ds.visual.row(i), ds.textual.row(i)) == ds.labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

// ---------------------------------------------------------------------------
// JSON model files

namespace {

json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (std::size_t r = 0; r < m.rows; ++r) rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
    return rows;
}

Matrix matrix_from_json(const json& j, std::size_t rows, std::size_t cols, const char* what) {
    if (!j.is_array() || j.size() != rows) throw Error(ErrorCode::ShapeMismatch, std::string(what) + " row count");
    Matrix m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        const auto row = j[r].get<std::vector<double>>();
        if (row.size() != cols) throw Error(ErrorCode::ShapeMismatch, std::string(what) + " column count");
        std::copy(row.begin(), row.end(), m.row(r).begin());
    }
    return m;
}

} // namespace

json to_json(const FusionHead& head) {
    const auto& c = head.cfg;
    json j = {
        {"format_version", 1},
        {"cfg",
         {{"d1", c.visual_dim},
          {"d2", c.textual_dim},
          {"dr_dim", c.dr_dim},
          {"num_classes", c.num_classes},
          {"modality", to_string(c.modality)},
          {"init_seed", c.init_seed}}},
        {"w_dr", matrix_to_json(head.w_dr)},
        {"b_dr", head.b_dr},
        {"w_fc", matrix_to_json(head.w_fc)},
        {"b_fc", head.b_fc},
        {"train_meta", nullptr},
    };
    if (head.train_meta) {
        const auto& m = *head.train_meta;
        j["train_meta"] = {{"lr", m.lr},
                           {"epochs", m.epochs},
                           {"batch_size", m.batch_size},
                           {"shuffle_seed", m.shuffle_seed},
                           {"final_loss", m.final_loss}};
    }
    return j;
}

FusionHead head_from_json(const json& j) {
    FusionHead head;
    try {
        if (j.at("format_version").get<int>() != 1) throw Error(ErrorCode::InvalidConfig, "unsupported model format_version");
        const auto& c = j.at("cfg");
        head.cfg.visual_dim = c.at("d1").get<std::size_t>();
        head.cfg.textual_dim = c.at("d2").get<std::size_t>();
        head.cfg.dr_dim = c.at("dr_dim").get<std::size_t>();
        head.cfg.num_classes = c.at("num_classes").get<std::size_t>();
        head.cfg.modality = modality_from_string(c.at("modality").get<std::string>());
        head.cfg.init_seed = c.at("init_seed").get<std::uint64_t>();
        validate(head.cfg);
        const bool mm = head.cfg.modality == Modality::multimodal;
        head.w_dr = matrix_from_json(j.at("w_dr"), mm ? head.cfg.dr_dim : 0, mm ? head.cfg.textual_dim : 0, "w_dr");
        head.b_dr = j.at("b_dr").get<std::vector<double>>();
        head.w_fc = matrix_from_json(j.at("w_fc"), head.cfg.num_classes, head.cfg.fused_dim(), "w_fc");
        head.b_fc = j.at("b_fc").get<std::vector<double>>();
        const auto& m = j.at("train_meta");
        if (!m.is_null()) {
            head.train_meta = TrainMeta{m.at("lr").get<double>(), m.at("epochs").get<std::size_t>(),
                                        m.at("batch_size").get<std::size_t>(), m.at("shuffle_seed").get<std::uint64_t>(),
                                        m.at("final_loss").get<double>()};
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("malformed model JSON: ") + e.what());
    }
    check_shapes(head);
    return head;
}

void save_head(const FusionHead& head, const std::filesystem::path& path) {
    const std::string text = to_json(head).dump() + "\n";
    write_bytes(path, {reinterpret_cast<const unsigned char*>(text.data()), text.size()});
}

FusionHead load_head(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    const json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::InvalidConfig, path.string() + " is not valid JSON");
    return head_from_json(j);
}

} // namespace fedmme
