#include <pybind11/pybind11.h>
#include <pybind11/numpy.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "fedmme/errors.hpp"
#include "fedmme/experiment.hpp"

namespace py = pybind11;
using namespace fedmme;

namespace {

py::array_t<double> to_numpy(const Matrix& m) {
    py::array_t<double> out({m.rows, m.cols});
    std::copy(m.data.begin(), m.data.end(), out.mutable_data());
    return out;
}

py::array_t<double> to_numpy(const std::vector<double>& v) {
    py::array_t<double> out(v.size());
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

Matrix from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a, const char* what) {
    if (a.ndim() != 2) throw Error(ErrorCode::ShapeMismatch, std::string(what) + " must be a 2-D array");
    Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), m.data.begin());
    return m;
}

py::object per_class_list(const std::vector<std::optional<double>>& v) {
    py::list out;
    for (const auto& x : v) out.append(x ? py::object(py::float_(*x)) : py::object(py::none()));
    return out;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "One-shot multi-modal federated ensemble simulator";

    // Deliberately leaked: the type must outlive every translator call.
    static PyObject* error_type = PyErr_NewException("fedmme._core.FedmmeError", PyExc_RuntimeError, nullptr);
    m.attr("FedmmeError") = py::handle(error_type);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::object exc = py::handle(error_type)(e.what());
            exc.attr("code") = std::string(to_string(e.code()));
            PyErr_SetObject(error_type, exc.ptr());
        }
    });

    py::enum_<SynthMode>(m, "SynthMode")
        .value("joint_linear", SynthMode::joint_linear)
        .value("visual_only", SynthMode::visual_only)
        .value("label_uniform", SynthMode::label_uniform);
    py::enum_<Modality>(m, "Modality").value("multimodal", Modality::multimodal).value("visual_only", Modality::visual_only);
    py::enum_<Method>(m, "Method")
        .value("fedmme", Method::fedmme)
        .value("fedensemble", Method::fedensemble)
        .value("fedavg_oneshot", Method::fedavg_oneshot);
    py::enum_<TrialSeedPolicy>(m, "TrialSeedPolicy")
        .value("reseed_all", TrialSeedPolicy::reseed_all)
        .value("fixed_partition", TrialSeedPolicy::fixed_partition);
    py::enum_<SweepAxis>(m, "SweepAxis")
        .value("alpha", SweepAxis::alpha)
        .value("clients", SweepAxis::clients)
        .value("dr_dim", SweepAxis::dr_dim)
        .value("epochs", SweepAxis::epochs);

    // -- dataset
    py::class_<FeatureDataset>(m, "FeatureDataset")
        .def(py::init([](py::array_t<double, py::array::c_style | py::array::forcecast> visual,
                         py::array_t<double, py::array::c_style | py::array::forcecast> textual,
                         std::vector<std::uint32_t> labels, std::size_t num_classes, std::string name) {
                 FeatureDataset ds;
                 ds.name = std::move(name);
                 ds.visual = from_numpy(visual, "visual");
                 ds.textual = from_numpy(textual, "textual");
                 ds.visual_dim = ds.visual.cols;
                 ds.textual_dim = ds.textual.cols;
                 ds.num_classes = num_classes;
                 ds.labels = std::move(labels);
                 validate(ds);
                 return ds;
             }),
             py::arg("visual"), py::arg("textual"), py::arg("labels"), py::arg("num_classes"), py::arg("name") = "dataset")
        .def_readonly("name", &FeatureDataset::name)
        .def_readonly("visual_dim", &FeatureDataset::visual_dim)
        .def_readonly("textual_dim", &FeatureDataset::textual_dim)
        .def_readonly("num_classes", &FeatureDataset::num_classes)
        .def_property_readonly("visual", [](const FeatureDataset& d) { return to_numpy(d.visual); })
        .def_property_readonly("textual", [](const FeatureDataset& d) { return to_numpy(d.textual); })
        .def_property_readonly("labels", [](const FeatureDataset& d) {
            py::array_t<std::uint32_t> out(d.labels.size());
            std::copy(d.labels.begin(), d.labels.end(), out.mutable_data());
            return out;
        })
        .def("__len__", &FeatureDataset::size)
        .def("__eq__", [](const FeatureDataset& a, const FeatureDataset& b) { return a == b; })
        .def("class_counts", &class_counts)
        .def("subset", [](const FeatureDataset& d, const std::vector<std::size_t>& idx, const std::string& name) {
            return subset(d, idx, name);
        }, py::arg("indices"), py::arg("name") = "");

    py::class_<SynthSpec>(m, "SynthSpec")
        .def(py::init([](std::size_t n, std::size_t d1, std::size_t d2, std::size_t classes, std::uint64_t seed,
                         double noise_sigma, SynthMode mode) {
                 return SynthSpec{n, d1, d2, classes, seed, noise_sigma, mode};
             }),
             py::arg("n") = 1000, py::arg("visual_dim") = 16, py::arg("textual_dim") = 16, py::arg("num_classes") = 4,
             py::arg("seed") = 0, py::arg("noise_sigma") = 0.0, py::arg("mode") = SynthMode::joint_linear)
        .def_readwrite("n", &SynthSpec::n)
        .def_readwrite("visual_dim", &SynthSpec::visual_dim)
        .def_readwrite("textual_dim", &SynthSpec::textual_dim)
        .def_readwrite("num_classes", &SynthSpec::num_classes)
        .def_readwrite("seed", &SynthSpec::seed)
        .def_readwrite("noise_sigma", &SynthSpec::noise_sigma)
        .def_readwrite("mode", &SynthSpec::mode);

    py::class_<SynthTruth>(m, "SynthTruth")
        .def_property_readonly("visual_weights", [](const SynthTruth& t) { return to_numpy(t.visual_weights); })
        .def_property_readonly("textual_weights", [](const SynthTruth& t) { return to_numpy(t.textual_weights); })
        .def_readonly("noise_sigma", &SynthTruth::noise_sigma)
        .def_readonly("mode", &SynthTruth::mode)
        .def_readonly("relabeled", &SynthTruth::relabeled);

    m.def("generate_synthetic", [](const SynthSpec& spec) {
        auto r = generate_synthetic(spec);
        return py::make_tuple(std::move(r.dataset), std::move(r.truth));
    }, py::arg("spec"), "Returns (dataset, ground_truth).");
    m.def("load_dataset", &load_dataset, py::arg("manifest_path"));
    m.def("save_dataset", &save_dataset, py::arg("dataset"), py::arg("directory"));

    // -- partition
    py::class_<PartitionConfig>(m, "PartitionConfig")
        .def(py::init([](std::size_t n, double alpha, std::uint64_t seed) { return PartitionConfig{n, alpha, seed}; }),
             py::arg("num_clients") = 5, py::arg("alpha") = 0.3, py::arg("seed") = 0)
        .def_readwrite("num_clients", &PartitionConfig::num_clients)
        .def_readwrite("alpha", &PartitionConfig::alpha)
        .def_readwrite("seed", &PartitionConfig::seed);

    py::class_<PartitionPlan>(m, "PartitionPlan")
        .def_readonly("config", &PartitionPlan::config)
        .def_readonly("shards", &PartitionPlan::shards)
        .def_readonly("class_histogram", &PartitionPlan::class_histogram)
        .def("shard_sizes", &PartitionPlan::shard_sizes)
        .def("to_json", [](const PartitionPlan& p) { return to_json(p).dump(); })
        .def("__eq__", [](const PartitionPlan& a, const PartitionPlan& b) { return a == b; });

    m.def("partition_dirichlet", &partition_dirichlet, py::arg("dataset"), py::arg("config"));
    m.def("skew_statistic", &skew_statistic, py::arg("plan"), py::arg("dataset"));

    // -- model
    py::class_<HeadConfig>(m, "HeadConfig")
        .def(py::init([](std::size_t d1, std::size_t d2, std::size_t dr, std::size_t y, Modality mod, std::uint64_t seed) {
                 return HeadConfig{d1, d2, dr, y, mod, seed};
             }),
             py::arg("visual_dim") = 512, py::arg("textual_dim") = 768, py::arg("dr_dim") = 128, py::arg("num_classes") = 2,
             py::arg("modality") = Modality::multimodal, py::arg("init_seed") = 0)
        .def_readwrite("visual_dim", &HeadConfig::visual_dim)
        .def_readwrite("textual_dim", &HeadConfig::textual_dim)
        .def_readwrite("dr_dim", &HeadConfig::dr_dim)
        .def_readwrite("num_classes", &HeadConfig::num_classes)
        .def_readwrite("modality", &HeadConfig::modality)
        .def_readwrite("init_seed", &HeadConfig::init_seed)
        .def("fused_dim", &HeadConfig::fused_dim);

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init([](double lr, std::size_t epochs, std::size_t batch, std::uint64_t seed) {
                 return TrainConfig{lr, epochs, batch, seed};
             }),
             py::arg("lr") = 1e-3, py::arg("epochs") = 100, py::arg("batch_size") = 128, py::arg("shuffle_seed") = 0)
        .def_readwrite("lr", &TrainConfig::lr)
        .def_readwrite("epochs", &TrainConfig::epochs)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("shuffle_seed", &TrainConfig::shuffle_seed);

    py::class_<FusionHead>(m, "FusionHead")
        .def_readonly("cfg", &FusionHead::cfg)
        .def_property_readonly("w_dr", [](const FusionHead& h) { return to_numpy(h.w_dr); })
        .def_property_readonly("b_dr", [](const FusionHead& h) { return to_numpy(h.b_dr); })
        .def_property_readonly("w_fc", [](const FusionHead& h) { return to_numpy(h.w_fc); })
        .def_property_readonly("b_fc", [](const FusionHead& h) { return to_numpy(h.b_fc); })
        .def("forward", [](const FusionHead& h, const std::vector<double>& v, const std::vector<double>& t) {
            const auto r = forward(h, v, t);
            return py::make_tuple(to_numpy(r.logits), to_numpy(r.probs));
        }, py::arg("visual"), py::arg("textual"), "Returns (logits, probs).")
        .def("predict", [](const FusionHead& h, const std::vector<double>& v, const std::vector<double>& t) {
            return predict(h, v, t);
        }, py::arg("visual"), py::arg("textual"))
        .def("accuracy", &accuracy, py::arg("dataset"))
        .def("to_json", [](const FusionHead& h) { return to_json(h).dump(); })
        .def("__eq__", [](const FusionHead& a, const FusionHead& b) { return a == b; });

    m.def("init_head", &init_head, py::arg("config"));
    m.def("train_local", [](const FeatureDataset& ds, const std::vector<std::size_t>& shard, const HeadConfig& hc,
                            const TrainConfig& tc) {
        py::gil_scoped_release release;
        auto r = train_local(ds, shard, hc, tc);
        py::gil_scoped_acquire acquire;
        return py::make_tuple(std::move(r.head), std::move(r.history));
    }, py::arg("dataset"), py::arg("shard"), py::arg("head_config"), py::arg("train_config"),
          "Returns (head, per-epoch mean loss).");
    m.def("save_head", &save_head, py::arg("head"), py::arg("path"));
    m.def("load_head", &load_head, py::arg("path"));

    // -- federation
    py::class_<EnsembleTeam>(m, "EnsembleTeam")
        .def("__len__", &EnsembleTeam::size)
        .def_property_readonly("members", [](const EnsembleTeam& t) {
            return std::vector<FusionHead>(t.members().begin(), t.members().end());
        })
        .def_property_readonly("upload_log", [](const EnsembleTeam& t) {
            return std::vector<std::size_t>(t.upload_log().begin(), t.upload_log().end());
        })
        .def_property_readonly("shard_sizes", [](const EnsembleTeam& t) {
            std::vector<std::size_t> out;
            for (const auto& p : t.provenance()) out.push_back(p.shard_size);
            return out;
        })
        .def("predict", [](const EnsembleTeam& t, const std::vector<double>& v, const std::vector<double>& x) {
            const auto p = predict_ensemble(t, v, x);
            return py::make_tuple(p.label, p.tally.counts);
        }, py::arg("visual"), py::arg("textual"), "Returns (label, vote counts).")
        .def("evaluate", [](const EnsembleTeam& t, const FeatureDataset& test) {
            const auto ev = evaluate_ensemble(t, test);
            return py::make_tuple(ev.accuracy, per_class_list(ev.per_class));
        }, py::arg("test"), "Returns (accuracy, per-class accuracy with None for absent classes).")
        .def("__eq__", [](const EnsembleTeam& a, const EnsembleTeam& b) { return a == b; });

    m.def("run_one_shot", [](const FeatureDataset& ds, const PartitionPlan& plan, const HeadConfig& hc,
                             const TrainConfig& tc, std::size_t workers) {
        py::gil_scoped_release release;
        return run_one_shot(ds, plan, hc, tc, workers);
    }, py::arg("dataset"), py::arg("plan"), py::arg("head_config"), py::arg("train_config"), py::arg("workers") = 0);
    m.def("build_unimodal_baseline", [](const FeatureDataset& ds, const PartitionPlan& plan, const HeadConfig& hc,
                                        const TrainConfig& tc, std::size_t workers) {
        py::gil_scoped_release release;
        return build_unimodal_baseline(ds, plan, hc, tc, workers);
    }, py::arg("dataset"), py::arg("plan"), py::arg("head_config"), py::arg("train_config"), py::arg("workers") = 0);
    m.def("fedavg_one_shot", &fedavg_one_shot, py::arg("team"));
    m.def("save_team", &save_team, py::arg("team"), py::arg("directory"));
    m.def("load_team", &load_team, py::arg("team_json"));

    // -- experiments
    py::class_<ExperimentConfig>(m, "ExperimentConfig")
        .def(py::init<>())
        .def_readwrite("data_manifest", &ExperimentConfig::data_manifest)
        .def_readwrite("test_manifest", &ExperimentConfig::test_manifest)
        .def_readwrite("synth", &ExperimentConfig::synth)
        .def_readwrite("partition", &ExperimentConfig::partition)
        .def_readwrite("head", &ExperimentConfig::head)
        .def_readwrite("train", &ExperimentConfig::train)
        .def_readwrite("method", &ExperimentConfig::method)
        .def_readwrite("trials", &ExperimentConfig::trials)
        .def_readwrite("seed_policy", &ExperimentConfig::seed_policy)
        .def_readwrite("seed", &ExperimentConfig::seed)
        .def_readwrite("workers", &ExperimentConfig::workers)
        .def("to_json", [](const ExperimentConfig& c) { return to_json(c).dump(); });

    py::class_<ExperimentReport>(m, "ExperimentReport")
        .def_readonly("mean_accuracy", &ExperimentReport::mean_accuracy)
        .def_readonly("std_accuracy", &ExperimentReport::std_accuracy)
        .def_readonly("duration_seconds", &ExperimentReport::duration_seconds)
        .def_readonly("warnings", &ExperimentReport::warnings)
        .def_readonly("final_team", &ExperimentReport::final_team)
        .def("accuracies", &ExperimentReport::accuracies)
        .def("to_json", [](const ExperimentReport& r) { return to_json(r).dump(); });

    m.def("run_experiment", [](const ExperimentConfig& cfg) {
        py::gil_scoped_release release;
        return run_experiment(cfg);
    }, py::arg("config"));
    m.def("sweep", [](const ExperimentConfig& cfg, SweepAxis axis, const std::vector<double>& values) {
        py::gil_scoped_release release;
        return sweep(cfg, axis, values);
    }, py::arg("config"), py::arg("axis"), py::arg("values"));
    m.def("write_report", &write_report, py::arg("report"), py::arg("directory"));
    m.def("write_sweep", &write_sweep, py::arg("reports"), py::arg("directory"));
}
