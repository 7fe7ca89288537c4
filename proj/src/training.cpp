#include "mpct/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <optional>
#include <set>

#include "mpct/ops.hpp"

namespace fs = std::filesystem;

namespace mpct {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}

std::string checkpoint_hint(const TrainState& state) {
    return state.last_checkpoint.empty() ? std::string("(none written yet)")
                                         : state.last_checkpoint;
}

void ensure_finite_loss(double v, const std::string& what) {
    if (!std::isfinite(v)) throw NumericError(what + " became non-finite");
}

Tensor accumulate(const Tensor& acc, const Tensor& term) {
    return acc.defined() ? ops::add(acc, term) : term;
}

void check_selection(const TrainingConfig& cfg, const TripleSelection& sel,
                     const std::vector<Minibatch>& batches) {
    const int nd = cfg.bank_domains();
    for (int d : {sel.i, sel.j, sel.k}) {
        require(d >= 1 && d <= nd, "triple selection domain " + std::to_string(d) +
                                       " is outside 1.." + std::to_string(nd));
    }
    require(sel.i != sel.j && sel.j != sel.k && sel.i != sel.k,
            "triple selection must name three distinct domains");
    std::set<int> have;
    for (const auto& b : batches) {
        require(b.size() > 0, "empty minibatch for domain " + std::to_string(b.domain));
        require(have.insert(b.domain).second,
                "duplicate minibatch for domain " + std::to_string(b.domain));
    }
    for (int d : {sel.i, sel.j, sel.k}) {
        require(have.count(d) == 1, "no minibatch supplied for selected domain " +
                                        std::to_string(d));
    }
}

} // namespace

void TrainingConfig::validate() const {
    require(std::isfinite(alpha) && alpha >= 0.0, "alpha must be finite and >= 0");
    require(std::isfinite(beta) && beta >= 0.0, "beta must be finite and >= 0");
    require(std::isfinite(lr0) && lr0 > 0.0, "lr0 must be finite and positive");
    require(epochs >= 0, "epochs must be >= 0");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(n_domains >= 2, "training needs at least 2 domains");
    if (n_domains == 2) {
        require(auxiliary_domain == 3,
                "two-domain training needs auxiliary_domain = 3: the consistency detour "
                "runs through a borrowed third domain and the models span domains 1..3");
    } else {
        require(auxiliary_domain == 0,
                "auxiliary_domain is only meaningful for two-domain runs; leave it 0");
    }
    require(eval_every >= 0, "eval_every must be >= 0 (0 disables evaluation)");
    require(eval_fraction > 0.0 && eval_fraction < 1.0,
            "eval_fraction must lie strictly between 0 and 1");
    require(max_eval_images >= 1, "max_eval_images must be >= 1");
}

TripleSelection sample_triple(int n_domains, Rng& rng) {
    if (n_domains < 3) {
        throw ConfigError("sampling a translation triple needs at least 3 domains; "
                          "two-domain training uses the fixed auxiliary selection instead");
    }
    std::vector<int> ids(static_cast<std::size_t>(n_domains));
    std::iota(ids.begin(), ids.end(), 1);
    // Partial Fisher-Yates: three draws give a uniform ordered distinct triple.
    for (int pos = 0; pos < 3; ++pos) {
        const int swap_with =
            pos + static_cast<int>(rng.below(static_cast<std::uint64_t>(n_domains - pos)));
        std::swap(ids[static_cast<std::size_t>(pos)], ids[static_cast<std::size_t>(swap_with)]);
    }
    return TripleSelection{ids[0], ids[1], ids[2]};
}

std::vector<std::array<int, 3>> step_rotations(const TrainingConfig& cfg,
                                               const TripleSelection& sel) {
    if (cfg.n_domains >= 3) {
        return {{sel.i, sel.j, sel.k}, {sel.i, sel.k, sel.j}, {sel.j, sel.k, sel.i}};
    }
    return {{sel.i, sel.j, sel.k}};
}

GPhaseLosses build_g_losses(const Translator& bank, const Critics& critics,
                            const TrainingConfig& cfg, const TripleSelection& sel,
                            const std::vector<Minibatch>& batches) {
    cfg.validate();
    check_selection(cfg, sel, batches);
    const bool with_cls = cfg.mode == BankMode::Conditional;
    require(!with_cls || critics.has_cls(),
            "conditional training needs critics with a classification head");

    TranslationCache cache(bank, batches);
    GPhaseLosses out;
    for (const auto& rot : step_rotations(cfg, sel)) {
        out.dual = accumulate(out.dual, dual_loss(cache, rot[0], rot[1]));
        out.consistency = accumulate(out.consistency, consistency_loss(cache, rot[0], rot[1], rot[2]));
        const FakeBatchSet fakes = assemble_fake_batches(cache, rot[0], rot[1], rot[2]);
        const Tensor gan = gan_loss(critics, cache, fakes);
        out.gan = accumulate(out.gan, gan);
        out.gan_grad = accumulate(out.gan_grad,
                                  cfg.saturating_gan ? gan : gen_gan_surrogate(critics, fakes));
        if (with_cls) {
            const auto [cls_real, cls_fake] = cls_losses(critics, cache, fakes);
            out.cls_real = accumulate(out.cls_real, cls_real);
            out.cls_fake = accumulate(out.cls_fake, cls_fake);
        }
    }
    out.objective = out.dual;
    if (cfg.consistency_enabled) out.objective = ops::add(out.objective, out.consistency);
    out.objective = ops::add(out.objective, ops::mul_scalar(out.gan_grad, cfg.alpha));
    if (with_cls) out.objective = ops::add(out.objective, ops::mul_scalar(out.cls_fake, cfg.beta));
    return out;
}

DPhaseLosses build_d_losses(const Translator& bank, const Critics& critics,
                            const TrainingConfig& cfg, const TripleSelection& sel,
                            const std::vector<Minibatch>& batches) {
    cfg.validate();
    check_selection(cfg, sel, batches);
    const bool with_cls = cfg.mode == BankMode::Conditional;
    require(!with_cls || critics.has_cls(),
            "conditional training needs critics with a classification head");

    // Translate everything without recording so the critic update sees the
    // generated images as constants.
    std::optional<TranslationCache> cache;
    std::vector<FakeBatchSet> fake_sets;
    {
        NoGradGuard freeze;
        cache.emplace(bank, batches);
        for (const auto& rot : step_rotations(cfg, sel)) {
            fake_sets.push_back(assemble_fake_batches(*cache, rot[0], rot[1], rot[2]));
        }
    }

    DPhaseLosses out;
    for (const auto& fakes : fake_sets) {
        out.gan = accumulate(out.gan, gan_loss(critics, *cache, fakes));
        if (with_cls) {
            const auto [cls_real, cls_fake] = cls_losses(critics, *cache, fakes);
            (void)cls_fake; // generated-image label loss belongs to the generator phase
            out.cls_real = accumulate(out.cls_real, cls_real);
        }
    }
    out.objective = ops::mul_scalar(out.gan, -cfg.alpha);
    if (with_cls) out.objective = ops::add(out.objective, ops::mul_scalar(out.cls_real, cfg.beta));
    return out;
}

TrainState make_train_state(const TrainingConfig& cfg) {
    cfg.validate();
    const int nd = cfg.bank_domains();
    return TrainState{
        TranslatorBank(cfg.gen, cfg.mode, nd, Rng::derive(cfg.seed, "init.gen").next_u64()),
        CriticSet(cfg.disc, cfg.mode, nd, Rng::derive(cfg.seed, "init.disc").next_u64()),
        OptimizerState{},
        OptimizerState{},
        0,
        std::string{},
    };
}

LossBundle train_step(TrainState& state, const TrainingConfig& cfg, const TripleSelection& sel,
                      const std::vector<Minibatch>& batches, double lr) {
    LossBundle bundle;
    try {
        // Phase 1: one critic update against detached translations.
        {
            Tape d_tape;
            for (const auto& item : state.critics.params().items()) d_tape.watch(item.tensor);
            const DPhaseLosses d = build_d_losses(state.bank, state.critics, cfg, sel, batches);
            ensure_finite_loss(d.objective.scalar(), "the discriminator objective");
            d_tape.backward(d.objective);
            const Gradients d_grads = collect_gradients(state.critics.params());
            adam_step(state.disc_opt, state.critics.params(), d_grads, lr);
        }

        // Phase 2: one generator update against the refreshed critics.
        GPhaseLosses g;
        {
            Tape g_tape;
            for (const auto& item : state.bank.params().items()) g_tape.watch(item.tensor);
            g = build_g_losses(state.bank, state.critics, cfg, sel, batches);
            ensure_finite_loss(g.objective.scalar(), "the generator objective");
            g_tape.backward(g.objective);
            const Gradients g_grads = collect_gradients(state.bank.params());
            adam_step(state.gen_opt, state.bank.params(), g_grads, lr);
        }

        bundle.dual = g.dual.scalar();
        bundle.consistency = g.consistency.scalar();
        bundle.gan = g.gan.scalar();
        bundle.has_cls = cfg.mode == BankMode::Conditional;
        if (bundle.has_cls) {
            bundle.cls_real = g.cls_real.scalar();
            bundle.cls_fake = g.cls_fake.scalar();
        }
        bundle.total = bundle.dual + (cfg.consistency_enabled ? bundle.consistency : 0.0) +
                       cfg.alpha * bundle.gan;
        bundle.total_G = bundle.total + (bundle.has_cls ? cfg.beta * bundle.cls_fake : 0.0);
        bundle.total_D = -cfg.alpha * bundle.gan +
                         (bundle.has_cls ? cfg.beta * bundle.cls_real : 0.0);
        ensure_finite_loss(bundle.total_G, "the reported loss bundle");
    } catch (const NumericError& e) {
        // Numeric failures anywhere in the step (a non-finite activation, loss,
        // or gradient) abort with enough context to resume.
        throw NumericError(std::string(e.what()) + "; training aborted at step " +
                           std::to_string(state.step + 1) +
                           ". Restart from the last good checkpoint: " + checkpoint_hint(state));
    }
    state.step += 1;
    return bundle;
}

DatasetSplit prepare_split(const TrainingConfig& cfg,
                           const std::vector<DomainDataset>& datasets) {
    cfg.validate();
    const int nd = cfg.bank_domains();

    // Collect exactly one dataset per model domain, ordered by domain id.
    std::vector<DomainDataset> used(static_cast<std::size_t>(nd));
    std::vector<bool> found(static_cast<std::size_t>(nd), false);
    for (const auto& ds : datasets) {
        if (ds.domain < 1 || ds.domain > nd) continue;
        require(!found[static_cast<std::size_t>(ds.domain - 1)],
                "two datasets claim domain " + std::to_string(ds.domain));
        used[static_cast<std::size_t>(ds.domain - 1)] = ds;
        found[static_cast<std::size_t>(ds.domain - 1)] = true;
    }
    for (int d = 1; d <= nd; ++d) {
        if (found[static_cast<std::size_t>(d - 1)]) continue;
        std::string msg = "training needs a dataset for domain " + std::to_string(d);
        if (cfg.n_domains == 2 && d == cfg.auxiliary_domain) {
            msg += " (the auxiliary domain also needs images; the consistency detour "
                   "translates through it)";
        }
        throw ConfigError(msg);
    }
    for (const auto& ds : used) {
        require(!ds.images.empty(),
                "dataset for domain " + std::to_string(ds.domain) + " is empty");
        const auto& shape = ds.images.front().shape();
        require(shape.size() == 3, "domain " + std::to_string(ds.domain) +
                                       ": images must be C x H x W");
        require(shape[0] == cfg.gen.image_channels && shape[0] == cfg.disc.image_channels,
                "domain " + std::to_string(ds.domain) +
                    ": channel count does not match the model specs");
        require(shape[1] == shape[2] && shape[1] == cfg.disc.image_size,
                "domain " + std::to_string(ds.domain) + ": expected square " +
                    std::to_string(cfg.disc.image_size) + "-pixel images, got " +
                    format_shape(shape));
    }

    return split_datasets(used, cfg.eval_fraction, Rng::derive(cfg.seed, "split").next_u64());
}

EvalClassifier train_run_classifier(const TrainingConfig& cfg, const DatasetSplit& split) {
    return train_eval_classifier(split.train, cfg.disc,
                                 Rng::derive(cfg.seed, "evalcls").next_u64());
}

std::vector<std::pair<int, int>> eval_pairs_for(const TrainingConfig& cfg) {
    std::vector<std::pair<int, int>> pairs;
    if (cfg.n_domains >= 3) {
        const int nd = cfg.bank_domains();
        for (int i = 1; i <= nd; ++i)
            for (int j = 1; j <= nd; ++j)
                if (i != j) pairs.emplace_back(i, j);
    } else {
        pairs = {{1, 2}, {2, 1}};
    }
    return pairs;
}

RunReport train(const TrainingConfig& cfg, const std::vector<DomainDataset>& datasets,
                const std::string& out_dir) {
    const int nd = cfg.bank_domains();
    const DatasetSplit split = prepare_split(cfg, datasets);

    RunReport report;
    const bool do_eval = cfg.eval_every > 0;
    std::optional<EvalClassifier> classifier;
    if (do_eval) {
        classifier.emplace(train_run_classifier(cfg, split));
        report.classifier_accuracy = classifier->heldout_accuracy();
    }

    TrainState state = make_train_state(cfg);

    std::vector<std::optional<MinibatchIter>> iters(static_cast<std::size_t>(nd));
    int steps_per_epoch = 0;
    for (int d = 0; d < nd; ++d) {
        iters[static_cast<std::size_t>(d)].emplace(
            split.train[static_cast<std::size_t>(d)], cfg.batch_size,
            Rng::derive(cfg.seed, "data.iter", static_cast<std::uint64_t>(d + 1)));
        steps_per_epoch =
            std::max(steps_per_epoch, iters[static_cast<std::size_t>(d)]->batches_per_epoch());
    }
    report.steps_per_epoch = steps_per_epoch;
    const std::int64_t total_steps = static_cast<std::int64_t>(cfg.epochs) * steps_per_epoch;
    report.total_steps = total_steps;

    const std::vector<std::pair<int, int>> eval_pairs = eval_pairs_for(cfg);

    const auto run_eval = [&](std::int64_t at_step) {
        EvalPlan plan;
        plan.pairs = eval_pairs;
        plan.step = static_cast<int>(at_step);
        plan.max_eval_images = cfg.max_eval_images;
        report.evals.push_back(evaluate_bank(state.bank, *classifier, split.eval, plan));
    };
    const auto save_checkpoint = [&](std::int64_t at_step) {
        if (out_dir.empty()) return;
        fs::create_directories(out_dir);
        char leaf[32];
        std::snprintf(leaf, sizeof(leaf), "step-%06lld.mpct",
                      static_cast<long long>(at_step));
        const std::string path = (fs::path(out_dir) / leaf).string();
        checkpoint_save(path, state.bank.params(), nd, cfg.mode);
        state.last_checkpoint = path;
        report.checkpoints.push_back(path);
    };

    if (do_eval) run_eval(0);
    save_checkpoint(0);

    Rng triple_rng = Rng::derive(cfg.seed, "triples");
    for (std::int64_t s = 1; s <= total_steps; ++s) {
        const int epoch = static_cast<int>((s - 1) / steps_per_epoch);
        const double lr =
            cfg.decay ? lr_at(LrSchedule{cfg.lr0, cfg.epochs}, epoch) : cfg.lr0;
        const TripleSelection sel = cfg.n_domains >= 3
                                        ? sample_triple(cfg.n_domains, triple_rng)
                                        : TripleSelection{1, 2, cfg.auxiliary_domain};
        const std::vector<Minibatch> batches = {
            iters[static_cast<std::size_t>(sel.i - 1)]->next(),
            iters[static_cast<std::size_t>(sel.j - 1)]->next(),
            iters[static_cast<std::size_t>(sel.k - 1)]->next(),
        };
        report.curves.emplace_back(s, train_step(state, cfg, sel, batches, lr));
        if (do_eval && s % cfg.eval_every == 0) {
            run_eval(s);
            save_checkpoint(s);
        }
    }

    if (total_steps > 0 && (!do_eval || total_steps % cfg.eval_every != 0)) {
        if (do_eval) run_eval(total_steps);
        save_checkpoint(total_steps);
    }
    report.final_checkpoint = state.last_checkpoint;
    return report;
}

} // namespace mpct
