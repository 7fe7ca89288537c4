// Python bindings for the translation laboratory: the experiment CLI in
// process, structured access to configs, datasets, training, checkpoint
// evaluation, and raw image translation as numpy arrays.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>
#include <string>
#include <vector>

#include "mpct/cli.hpp"
#include "mpct/report.hpp"

namespace py = pybind11;
using namespace mpct;

namespace {

const char* mode_str(BankMode mode) {
    return mode == BankMode::Pairwise ? "pairwise-cyclegan" : "conditional-stargan";
}

py::array_t<double> array_from_tensor(const Tensor& t) {
    const std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> arr(shape);
    std::copy(t.values().begin(), t.values().end(), arr.mutable_data());
    return arr;
}

Tensor tensor_from_array(const py::array& any) {
    const auto arr = py::array_t<double, py::array::c_style | py::array::forcecast>::ensure(any);
    if (!arr) throw py::type_error("expected an array convertible to float64");
    std::vector<int> shape(static_cast<std::size_t>(arr.ndim()));
    for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape[i] = static_cast<int>(arr.shape(i));
    std::vector<double> values(arr.data(), arr.data() + arr.size());
    return Tensor::from_vector(shape, values);
}

py::dict dict_from_pair_metrics(const PairMetrics& pm) {
    py::dict d;
    d["source"] = pm.source;
    d["target"] = pm.target;
    d["cls_error"] = pm.cls_error;
    d["psnr_db"] = pm.psnr_db ? py::cast(*pm.psnr_db) : py::object(py::none());
    d["frechet"] = pm.frechet;
    d["consistency_gap"] = pm.consistency;
    return d;
}

py::dict dict_from_eval(const MetricsReport& report) {
    py::dict d;
    d["step"] = report.step;
    py::list pairs;
    for (const auto& pm : report.pairs) pairs.append(dict_from_pair_metrics(pm));
    d["pairs"] = pairs;
    return d;
}

py::dict dict_from_bundle(const LossBundle& b) {
    py::dict d;
    d["dual"] = b.dual;
    d["consistency"] = b.consistency;
    d["gan"] = b.gan;
    d["total"] = b.total;
    d["total_G"] = b.total_G;
    d["total_D"] = b.total_D;
    if (b.has_cls) {
        d["cls_real"] = b.cls_real;
        d["cls_fake"] = b.cls_fake;
    }
    return d;
}

py::dict dict_from_report(const RunReport& report) {
    py::dict d;
    d["total_steps"] = report.total_steps;
    d["steps_per_epoch"] = report.steps_per_epoch;
    d["classifier_accuracy"] = report.classifier_accuracy;
    py::list evals;
    for (const auto& ev : report.evals) evals.append(dict_from_eval(ev));
    d["evals"] = evals;
    py::list curves;
    for (const auto& [step, bundle] : report.curves) {
        curves.append(py::make_tuple(step, dict_from_bundle(bundle)));
    }
    d["curves"] = curves;
    d["checkpoints"] = report.checkpoints;
    d["final_checkpoint"] = report.final_checkpoint;
    return d;
}

// A fresh bank seeded like the run's, with the checkpoint's parameters.
TranslatorBank bank_from_checkpoint(const ExperimentConfig& cfg, const std::string& path) {
    const CheckpointData ckpt = checkpoint_read(path);
    const int nd = cfg.training.bank_domains();
    TranslatorBank bank(cfg.training.gen, cfg.training.mode, nd,
                        Rng::derive(cfg.run.seed, "init.gen").next_u64());
    ParamSet target = bank.params();
    checkpoint_apply(ckpt, target, nd, cfg.training.mode);
    return bank;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "multi-domain image-translation laboratory (native core)";
    m.attr("__version__") = "0.1.0";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    m.def(
        "cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            const int code = cli_main(args, out, err);
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"),
        "Run the command-line interface in process; returns (exit_code, stdout, stderr).");

    m.def(
        "load_config",
        [](const std::string& path, const std::vector<std::string>& overrides) {
            const ExperimentConfig cfg = load_experiment_config(path, overrides);
            py::dict run;
            run["name"] = cfg.run.name;
            run["out"] = cfg.run.out;
            run["seed"] = cfg.run.seed;
            run["threads"] = cfg.run.threads;
            const TrainingConfig& t = cfg.training;
            py::dict training;
            training["alpha"] = t.alpha;
            training["beta"] = t.beta;
            training["lr0"] = t.lr0;
            training["decay"] = t.decay;
            training["epochs"] = t.epochs;
            training["batch_size"] = t.batch_size;
            training["mode"] = mode_str(t.mode);
            training["consistency_enabled"] = t.consistency_enabled;
            training["saturating_gan"] = t.saturating_gan;
            training["eval_every"] = t.eval_every;
            training["eval_fraction"] = t.eval_fraction;
            training["max_eval_images"] = t.max_eval_images;
            training["n_domains"] = t.n_domains;
            training["auxiliary_domain"] = t.auxiliary_domain;
            py::dict model;
            model["gen_base_width"] = t.gen.base_width;
            model["gen_downsample"] = t.gen.n_downsample;
            model["gen_res_blocks"] = t.gen.n_res_blocks;
            model["disc_width"] = t.disc.width;
            model["disc_layers"] = t.disc.n_layers;
            py::dict data;
            data["source"] = cfg.data.source == DataConfig::Source::Synthetic ? "synthetic" : "dirs";
            data["base_count"] = cfg.data.base_count;
            data["image_size"] = cfg.data.image_size;
            data["channels"] = cfg.data.channels;
            data["n_domains"] = static_cast<int>(cfg.data.domains.size());
            py::dict d;
            d["run"] = run;
            d["training"] = training;
            d["model"] = model;
            d["data"] = data;
            d["text"] = serialize_config(cfg);
            return d;
        },
        py::arg("path"), py::arg("overrides") = std::vector<std::string>{},
        "Parse and validate an experiment config; returns its fields plus the canonical text.");

    m.def(
        "build_config_datasets",
        [](const std::string& path, const std::vector<std::string>& overrides) {
            const ExperimentConfig cfg = load_experiment_config(path, overrides);
            py::list out;
            for (const DomainDataset& ds : build_datasets(cfg)) {
                py::dict d;
                d["domain"] = ds.domain;
                py::list images;
                for (const Tensor& img : ds.images) images.append(array_from_tensor(img));
                d["images"] = images;
                d["pairing"] = ds.pairing;
                out.append(d);
            }
            return out;
        },
        py::arg("path"), py::arg("overrides") = std::vector<std::string>{},
        "Materialize the config's datasets; one dict per domain with images as arrays.");

    m.def(
        "train_experiment",
        [](const std::string& path, const std::vector<std::string>& overrides,
           const std::string& checkpoint_dir) {
            const ExperimentConfig cfg = load_experiment_config(path, overrides);
            const std::vector<DomainDataset> datasets = build_datasets(cfg);
            return dict_from_report(train(cfg.training, datasets, checkpoint_dir));
        },
        py::arg("path"), py::arg("overrides") = std::vector<std::string>{},
        py::arg("checkpoint_dir") = std::string(),
        "Train per the config, bypassing the run-directory layout; returns the full report. "
        "Checkpoints are written only when checkpoint_dir is given.");

    m.def(
        "evaluate_checkpoint",
        [](const std::string& path, const std::string& checkpoint,
           const std::vector<std::string>& overrides) {
            const ExperimentConfig cfg = load_experiment_config(path, overrides);
            const TranslatorBank bank = bank_from_checkpoint(cfg, checkpoint);
            const DatasetSplit split = prepare_split(cfg.training, build_datasets(cfg));
            const EvalClassifier classifier = train_run_classifier(cfg.training, split);
            EvalPlan plan;
            plan.pairs = eval_pairs_for(cfg.training);
            plan.max_eval_images = cfg.training.max_eval_images;
            py::dict d = dict_from_eval(evaluate_bank(bank, classifier, split.eval, plan));
            d["classifier_accuracy"] = classifier.heldout_accuracy();
            return d;
        },
        py::arg("path"), py::arg("checkpoint"),
        py::arg("overrides") = std::vector<std::string>{},
        "Score a checkpoint with the config's split, classifier, and pair policy.");

    m.def(
        "translate",
        [](const std::string& path, const std::string& checkpoint, int source, int target,
           const py::array& images) {
            const ExperimentConfig cfg = load_experiment_config(path, {});
            const TranslatorBank bank = bank_from_checkpoint(cfg, checkpoint);
            Tensor batch = tensor_from_array(images);
            const bool single = batch.shape().size() == 3;
            if (single) {
                std::vector<int> shape = batch.shape();
                shape.insert(shape.begin(), 1);
                batch = Tensor::from_vector(shape, batch.values());
            }
            Tensor out = bank.translate(source, target, batch);
            if (single) {
                const std::vector<int> chw(out.shape().begin() + 1, out.shape().end());
                out = Tensor::from_vector(chw, out.values());
            }
            return array_from_tensor(out);
        },
        py::arg("path"), py::arg("checkpoint"), py::arg("source"), py::arg("target"),
        py::arg("images"),
        "Translate a (B,C,H,W) batch or a single (C,H,W) image between domains.");

    m.def(
        "read_checkpoint",
        [](const std::string& path) {
            const CheckpointData data = checkpoint_read(path);
            py::dict d;
            d["version"] = data.version;
            d["n_domains"] = data.n_domains;
            d["mode"] = mode_str(data.mode);
            py::dict params;
            for (const auto& [name, tensor] : data.params) {
                params[py::str(name)] = array_from_tensor(tensor);
            }
            d["params"] = params;
            return d;
        },
        py::arg("path"), "Parse a checkpoint into {version, n_domains, mode, params: {name: array}}.");
}
