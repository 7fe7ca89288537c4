#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "mpct/data.hpp"
#include "mpct/losses.hpp"
#include "mpct/models.hpp"

namespace mpct {

// Domain classifier trained outside the adversarial game, used for scoring
// generated images and as the feature extractor for distribution distances.
class EvalClassifier {
  public:
    // 1-based predicted domain per row of a B×C×H×W batch.
    std::vector<int> predict(const Tensor& batch) const;
    // Penultimate-layer activations (B, F); feature_stats builds on these.
    Tensor features(const Tensor& batch) const;

    double heldout_accuracy() const { return heldout_accuracy_; }
    int n_domains() const { return disc_.spec().n_domains; }
    const ParamSet& params() const { return disc_.params(); }

  private:
    friend EvalClassifier train_eval_classifier(const std::vector<DomainDataset>&,
                                                const DiscriminatorSpec&, std::uint64_t,
                                                const struct ClassifierTrainOptions&);
    explicit EvalClassifier(Discriminator disc) : disc_(std::move(disc)) {}

    Discriminator disc_;
    double heldout_accuracy_ = 0.0;
};

struct ClassifierTrainOptions {
    int epochs = 30;
    int batch_size = 16;
    double lr = 2e-3;
    double holdout_fraction = 0.25;
    double accuracy_gate = 0.98;
};

// Trains a domain classifier with the discriminator architecture (width and
// depth from `arch`; input geometry, classification head, and domain count
// come from the data) on a per-domain train split, then measures held-out
// accuracy. Throws NumericError quoting the measured accuracy when it misses
// the gate, so any classifier in circulation is trustworthy for scoring.
// Deterministic given (datasets, arch, seed).
EvalClassifier train_eval_classifier(const std::vector<DomainDataset>& datasets,
                                     const DiscriminatorSpec& arch, std::uint64_t seed,
                                     const ClassifierTrainOptions& opts = {});

// Fraction of each set whose predicted domain differs from the intended
// target (the map key). Empty sets and unknown domains are ConfigErrors.
std::map<int, double> classification_error(const EvalClassifier& classifier,
                                           const std::map<int, std::vector<Tensor>>& generated);

// 10*log10(max_value^2 / MSE); equal images return the +infinity sentinel.
double psnr(const Tensor& a, const Tensor& b, double max_value);

// PSNR after mapping [-1,1] images onto [0,1], i.e. max_value 1 on the unit
// range (the reporting convention used everywhere here).
double psnr_unit(const Tensor& a, const Tensor& b);

// Feature-space summary of an image set: mean and unbiased covariance of the
// classifier's penultimate activations. Symmetrized exactly on construction.
struct FeatureStats {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    int sample_count = 0;
};

FeatureStats feature_stats(const EvalClassifier& classifier, const std::vector<Tensor>& images);

// Squared Fréchet distance between Gaussians fit to two feature sets:
// |mu1-mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)). Matrix square roots go
// through symmetric eigendecompositions with eigenvalues below 1e-12 clamped
// to zero; tiny negative results clamp to 0.
double frechet_distance(const FeatureStats& s1, const FeatureStats& s2);

// Mean per-pixel L1 between the direct i->j translation and the detour
// through k, evaluated without gradients over a held-out set from domain i.
// This is the i-side of the path-agreement loss as a plain measurement.
double consistency_gap(const Translator& bank, int i, int j, int k,
                       const std::vector<Tensor>& eval_images);

struct PairMetrics {
    int source = 0, target = 0;
    double cls_error = 0.0;
    // Pooled-MSE PSNR against the hidden ground-truth pairing; absent when
    // the datasets carry no pairing (non-synthetic data).
    std::optional<double> psnr_db;
    double frechet = 0.0;
    double consistency = 0.0; // gap via the smallest domain outside the pair
};

struct MetricsReport {
    int step = 0;
    std::vector<PairMetrics> pairs;
};

struct EvalPlan {
    std::vector<std::pair<int, int>> pairs; // ordered (source, target)
    int step = 0;
    int max_eval_images = 64; // per-domain cap, taken from the front
};

// Scores every requested pair: translate the source eval set, measure
// classification error toward the target, PSNR against the paired target
// rendition (when pairings exist), Fréchet distance to the real target set,
// and the consistency gap. eval_sets are indexed by their `domain` field.
MetricsReport evaluate_bank(const Translator& bank, const EvalClassifier& classifier,
                            const std::vector<DomainDataset>& eval_sets, const EvalPlan& plan);

} // namespace mpct
