#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mpct/data.hpp"
#include "mpct/losses.hpp"
#include "mpct/metrics.hpp"
#include "mpct/models.hpp"
#include "mpct/optim.hpp"

namespace mpct {

struct TrainingConfig {
    double alpha = 0.1; // adversarial weight
    double beta = 0.1;  // classification weight (conditional mode only)
    double lr0 = 1e-4;
    bool decay = true; // block-linear decay to zero over `epochs`; off holds lr0
    int epochs = 50;
    int batch_size = 4;
    BankMode mode = BankMode::Pairwise;
    bool consistency_enabled = true; // off = baseline ablation
    bool saturating_gan = false;     // raw log(1-d) generator gradient instead
                                     // of the non-saturating -log d surrogate
    std::uint64_t seed = 1;
    int n_domains = 3;
    // Two-domain runs borrow a third domain purely to anchor the consistency
    // path; it must be domain 3 (the models then span domains 1..3).
    int auxiliary_domain = 0;
    int eval_every = 100;        // steps between metric evaluations; 0 disables
    double eval_fraction = 0.25; // held out per domain for metrics
    int max_eval_images = 64;
    GeneratorSpec gen;
    DiscriminatorSpec disc;

    void validate() const;
    // Domains the models span: n_domains, or 3 in auxiliary (two-domain) mode.
    int bank_domains() const { return n_domains >= 3 ? n_domains : 3; }
};

// One step's domain roles (i, j | k): the pair under translation plus the
// detour domain. The step objective is symmetric across the three for the
// full triple form, so roles matter only for two-domain mode and logging.
struct TripleSelection {
    int i = 0, j = 0, k = 0;
};

// Uniform over ordered distinct triples, i.e. a uniform 3-subset with roles
// assigned by a uniform permutation. Requires n_domains >= 3; two-domain
// setups must use the fixed auxiliary selection instead.
TripleSelection sample_triple(int n_domains, Rng& rng);

// Everything a run mutates: the two model banks, their optimizer states, the
// step counter, and the most recent checkpoint (quoted by abort diagnostics).
struct TrainState {
    TranslatorBank bank;
    CriticSet critics;
    OptimizerState gen_opt;
    OptimizerState disc_opt;
    std::int64_t step = 0;
    std::string last_checkpoint;
};

TrainState make_train_state(const TrainingConfig& cfg);

// The rotations whose objectives one step sums: all three for the full
// triple, only (i,j|k) in auxiliary mode.
std::vector<std::array<int, 3>> step_rotations(const TrainingConfig& cfg,
                                               const TripleSelection& sel);

// Generator-phase objective pieces, built on whatever tape is live when the
// caller invokes this (watch the generator parameters first). `consistency`
// is always computed — it shares its translation nodes with the fake batches
// so measuring it is free — but joins `objective` only when enabled.
struct GPhaseLosses {
    Tensor dual;
    Tensor consistency;
    Tensor gan;       // the true value: sum of log d(real) + log(1-d(fake))
    Tensor gan_grad;  // what the update differentiates (surrogate by default)
    Tensor cls_real;  // conditional mode only
    Tensor cls_fake;  // conditional mode only
    Tensor objective; // dual [+ consistency] + alpha*gan_grad [+ beta*cls_fake]
};

GPhaseLosses build_g_losses(const Translator& bank, const Critics& critics,
                            const TrainingConfig& cfg, const TripleSelection& sel,
                            const std::vector<Minibatch>& batches);

// Discriminator-phase objective on detached translations (the caller's tape
// sees only critic parameters): -alpha*gan [+ beta*cls_real].
struct DPhaseLosses {
    Tensor gan;
    Tensor cls_real; // conditional mode only
    Tensor objective;
};

DPhaseLosses build_d_losses(const Translator& bank, const Critics& critics,
                            const TrainingConfig& cfg, const TripleSelection& sel,
                            const std::vector<Minibatch>& batches);

// One optimization step: discriminators first against detached translations,
// then generators against the updated critics, one Adam update each. The
// returned bundle reports every component evaluated at the post-discriminator
// state, with totals composed verbatim from those numbers. Non-finite losses
// or gradients abort the step (leaving parameters untouched by that phase)
// with a diagnostic quoting the last good checkpoint.
LossBundle train_step(TrainState& state, const TrainingConfig& cfg, const TripleSelection& sel,
                      const std::vector<Minibatch>& batches, double lr);

struct RunReport {
    std::vector<MetricsReport> evals; // step 0, every eval_every, and the end
    std::vector<std::pair<std::int64_t, LossBundle>> curves; // one row per step
    std::int64_t total_steps = 0;
    int steps_per_epoch = 0;
    double classifier_accuracy = 0.0;
    std::vector<std::string> checkpoints; // step-%06d.mpct files, write order
    std::string final_checkpoint;         // empty when no out_dir was given
};

// Selects one dataset per model domain (validating coverage and image
// geometry against the config) and splits each into train/eval with the
// run's seed. Standalone evaluation uses this too, so a run and a later
// re-evaluation see byte-identical splits.
DatasetSplit prepare_split(const TrainingConfig& cfg,
                           const std::vector<DomainDataset>& datasets);

// The quality-gated domain classifier every evaluation in this run scores
// with; deterministic in (cfg, split).
EvalClassifier train_run_classifier(const TrainingConfig& cfg, const DatasetSplit& split);

// Ordered (source, target) pairs evaluations report on: every ordered pair
// for three or more domains, (1,2) and (2,1) in auxiliary mode.
std::vector<std::pair<int, int>> eval_pairs_for(const TrainingConfig& cfg);

// Full training run: splits the data, trains the scoring classifier,
// executes epochs of train_step with sampled (or fixed auxiliary) triples,
// evaluates on the held-out split at the configured cadence, and writes a
// generator-bank checkpoint (step-%06d.mpct) under out_dir (when nonempty)
// at step 0, every evaluation point, and the end.
// Deterministic: (config, datasets) fixes every number in the report.
RunReport train(const TrainingConfig& cfg, const std::vector<DomainDataset>& datasets,
                const std::string& out_dir = "");

} // namespace mpct
