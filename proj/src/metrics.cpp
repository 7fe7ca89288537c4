#include "mpct/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mpct/optim.hpp"
#include "mpct/ops.hpp"

namespace O = mpct::ops;

namespace mpct {

namespace {

constexpr int kScoreChunk = 32;

// Runs fn over the image list in stacked chunks, keeping memory bounded.
void for_each_chunk(const std::vector<Tensor>& images,
                    const std::function<void(const Tensor&)>& fn) {
    std::vector<int> idx;
    for (std::size_t i = 0; i < images.size(); i += kScoreChunk) {
        idx.clear();
        for (std::size_t j = i; j < std::min(images.size(), i + kScoreChunk); ++j) {
            idx.push_back(static_cast<int>(j));
        }
        fn(stack_images(images, idx));
    }
}

void append_argmax_rows(const Tensor& logits, std::vector<int>& out) {
    const int B = logits.shape()[0], N = logits.shape()[1];
    for (int b = 0; b < B; ++b) {
        int best = 0;
        for (int c = 1; c < N; ++c) {
            if (logits.values()[b * N + c] > logits.values()[b * N + best]) {
                best = c;
            }
        }
        out.push_back(best + 1);
    }
}

} // namespace

std::vector<int> EvalClassifier::predict(const Tensor& batch) const {
    NoGradGuard ng;
    std::vector<int> out;
    append_argmax_rows(disc_.forward(batch).cls_logits, out);
    return out;
}

Tensor EvalClassifier::features(const Tensor& batch) const {
    NoGradGuard ng;
    return disc_.features(batch);
}

EvalClassifier train_eval_classifier(const std::vector<DomainDataset>& datasets,
                                     const DiscriminatorSpec& arch, std::uint64_t seed,
                                     const ClassifierTrainOptions& opts) {
    const int D = static_cast<int>(datasets.size());
    if (D < 2) {
        throw ConfigError("classifier training needs at least two domains, got " +
                          std::to_string(D));
    }
    std::vector<const DomainDataset*> by_domain(D, nullptr);
    for (const auto& ds : datasets) {
        if (ds.domain < 1 || ds.domain > D || by_domain[ds.domain - 1] != nullptr) {
            throw ConfigError("classifier domains must be contiguous 1.." + std::to_string(D));
        }
        by_domain[ds.domain - 1] = &ds;
        if (ds.images.size() < 20) {
            throw ConfigError("domain " + std::to_string(ds.domain) + " has only " +
                              std::to_string(ds.images.size()) +
                              " images; classifier training needs at least 20");
        }
        if (ds.images[0].shape() != datasets[0].images[0].shape()) {
            throw ConfigError("all domains must share one image shape");
        }
    }
    const std::vector<int>& shape = datasets[0].images[0].shape();
    if (shape.size() != 3 || shape[1] != shape[2]) {
        throw ConfigError("classifier expects square C×H×H images, got " + format_shape(shape));
    }
    if (!(opts.holdout_fraction > 0.0 && opts.holdout_fraction < 1.0)) {
        throw ConfigError("holdout_fraction must lie strictly between 0 and 1");
    }

    DiscriminatorSpec spec = arch;
    spec.image_channels = shape[0];
    spec.image_size = shape[1];
    spec.cls_head = true;
    spec.n_domains = D;

    // Per-domain train/held-out split on derived streams.
    std::vector<DomainDataset> train(D);
    std::vector<DomainDataset> held(D);
    for (int d = 0; d < D; ++d) {
        const DomainDataset& src = *by_domain[d];
        const int n = static_cast<int>(src.images.size());
        std::vector<int> order(n);
        for (int i = 0; i < n; ++i) {
            order[i] = i;
        }
        Rng rng = Rng::derive(seed, "evalcls.split", static_cast<std::uint64_t>(d + 1));
        rng.shuffle(order);
        const int k = std::max(1, static_cast<int>(std::floor(opts.holdout_fraction * n)));
        train[d].domain = held[d].domain = d + 1;
        for (int i = 0; i < n; ++i) {
            (i < k ? held[d] : train[d]).images.push_back(src.images[order[i]]);
        }
    }

    Discriminator disc(spec, Rng::derive(seed, "evalcls.init").next_u64(), "evalcls.");
    // Plain supervised problem, so standard Adam momentum rather than the
    // adversarial beta1 = 0.5.
    OptimizerState st(AdamConfig{0.9, 0.999, 1e-8});

    std::vector<MinibatchIter> iters;
    int steps_per_epoch = 1;
    for (int d = 0; d < D; ++d) {
        iters.emplace_back(train[d], opts.batch_size,
                           Rng::derive(seed, "evalcls.iter", static_cast<std::uint64_t>(d + 1)));
        steps_per_epoch = std::max(steps_per_epoch, iters.back().batches_per_epoch());
    }

    for (int step = 0; step < opts.epochs * steps_per_epoch; ++step) {
        Tape tape;
        for (const auto& it : disc.params().items()) {
            tape.watch(it.tensor);
        }
        Tensor loss;
        for (int d = 0; d < D; ++d) {
            Minibatch mb = iters[d].next();
            Tensor logits = disc.forward(mb.images).cls_logits;
            Tensor nll =
                O::mul_scalar(O::mean_reduce(O::take_column(O::log_softmax(logits), d)), -1.0);
            loss = loss.defined() ? O::add(loss, nll) : nll;
        }
        tape.backward(loss);
        adam_step(st, disc.params(), collect_gradients(disc.params()), opts.lr);
    }

    EvalClassifier cls(std::move(disc));
    std::size_t correct = 0, total = 0;
    for (int d = 0; d < D; ++d) {
        for_each_chunk(held[d].images, [&](const Tensor& batch) {
            for (int pred : cls.predict(batch)) {
                correct += pred == d + 1;
                ++total;
            }
        });
    }
    cls.heldout_accuracy_ = static_cast<double>(correct) / static_cast<double>(total);
    if (cls.heldout_accuracy_ < opts.accuracy_gate) {
        throw NumericError("evaluation classifier held-out accuracy " +
                           std::to_string(cls.heldout_accuracy_) + " is below the " +
                           std::to_string(opts.accuracy_gate) +
                           " gate; its scores would be meaningless");
    }
    return cls;
}

std::map<int, double> classification_error(const EvalClassifier& classifier,
                                           const std::map<int, std::vector<Tensor>>& generated) {
    if (generated.empty()) {
        throw ConfigError("classification_error needs at least one target set");
    }
    std::map<int, double> out;
    for (const auto& [target, images] : generated) {
        if (target < 1 || target > classifier.n_domains()) {
            throw ConfigError("classification target domain " + std::to_string(target) +
                              " is out of range");
        }
        if (images.empty()) {
            throw ConfigError("empty image set for classification target " +
                              std::to_string(target));
        }
        std::size_t wrong = 0;
        for_each_chunk(images, [&](const Tensor& batch) {
            for (int pred : classifier.predict(batch)) {
                wrong += pred != target;
            }
        });
        out[target] = static_cast<double>(wrong) / static_cast<double>(images.size());
    }
    return out;
}

double psnr(const Tensor& a, const Tensor& b, double max_value) {
    if (a.shape() != b.shape()) {
        throw ShapeError("psnr shapes differ: " + format_shape(a.shape()) + " vs " +
                         format_shape(b.shape()));
    }
    if (!(max_value > 0.0)) {
        throw ConfigError("psnr max_value must be positive");
    }
    double se = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = a.values()[i] - b.values()[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.numel());
    if (mse == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return 10.0 * std::log10(max_value * max_value / mse);
}

double psnr_unit(const Tensor& a, const Tensor& b) {
    // (x+1)/2 halves every difference, so the unit-range MSE is a quarter of
    // the [-1,1]-range MSE; fold that in instead of copying the tensors.
    if (a.shape() != b.shape()) {
        throw ShapeError("psnr shapes differ: " + format_shape(a.shape()) + " vs " +
                         format_shape(b.shape()));
    }
    double se = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = a.values()[i] - b.values()[i];
        se += d * d;
    }
    const double mse = se / (4.0 * static_cast<double>(a.numel()));
    if (mse == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return 10.0 * std::log10(1.0 / mse);
}

FeatureStats feature_stats(const EvalClassifier& classifier, const std::vector<Tensor>& images) {
    if (images.size() < 2) {
        throw ConfigError("feature_stats needs at least 2 images, got " +
                          std::to_string(images.size()));
    }
    Eigen::MatrixXd X;
    int row = 0;
    for_each_chunk(images, [&](const Tensor& batch) {
        Tensor f = classifier.features(batch);
        const int B = f.shape()[0], F = f.shape()[1];
        if (X.size() == 0) {
            X.resize(static_cast<Eigen::Index>(images.size()), F);
        }
        for (int b = 0; b < B; ++b) {
            for (int c = 0; c < F; ++c) {
                X(row + b, c) = f.values()[static_cast<std::size_t>(b) * F + c];
            }
        }
        row += B;
    });

    FeatureStats out;
    out.sample_count = static_cast<int>(images.size());
    out.mean = X.colwise().mean();
    Eigen::MatrixXd centered = X.rowwise() - out.mean.transpose();
    out.cov = centered.transpose() * centered / static_cast<double>(out.sample_count - 1);
    out.cov = ((out.cov + out.cov.transpose()) / 2.0).eval();
    return out;
}

namespace {

// V diag(sqrt(clamped lambda)) V^T; eigenvalues below 1e-12 count as zero.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    Eigen::VectorXd lam = es.eigenvalues();
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
        lam[i] = lam[i] < 1e-12 ? 0.0 : std::sqrt(lam[i]);
    }
    return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

void check_stats(const FeatureStats& s, const char* which) {
    if (s.cov.rows() != s.cov.cols() || s.mean.size() != s.cov.rows()) {
        throw ShapeError(std::string("feature stats ") + which +
                         " have inconsistent mean/covariance sizes");
    }
    if ((s.cov - s.cov.transpose()).cwiseAbs().maxCoeff() > 1e-10) {
        throw NumericError(std::string("covariance of stats ") + which + " is not symmetric");
    }
}

} // namespace

double frechet_distance(const FeatureStats& s1, const FeatureStats& s2) {
    check_stats(s1, "s1");
    check_stats(s2, "s2");
    if (s1.mean.size() != s2.mean.size()) {
        throw ShapeError("feature stats dimensions differ: " + std::to_string(s1.mean.size()) +
                         " vs " + std::to_string(s2.mean.size()));
    }
    const double mean_term = (s1.mean - s2.mean).squaredNorm();
    Eigen::MatrixXd r1 = psd_sqrt(s1.cov);
    Eigen::MatrixXd inner = r1 * s2.cov * r1;
    inner = ((inner + inner.transpose()) / 2.0).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner);
    double tr_sqrt = 0.0;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        const double lam = es.eigenvalues()[i];
        tr_sqrt += lam < 1e-12 ? 0.0 : std::sqrt(lam);
    }
    const double d = mean_term + s1.cov.trace() + s2.cov.trace() - 2.0 * tr_sqrt;
    return d > 0.0 ? d : 0.0;
}

double consistency_gap(const Translator& bank, int i, int j, int k,
                       const std::vector<Tensor>& eval_images) {
    const int n = bank.n_domains();
    if (i == j || i == k || j == k || i < 1 || j < 1 || k < 1 || i > n || j > n || k > n) {
        throw ConfigError("consistency_gap needs three distinct domains within 1.." +
                          std::to_string(n));
    }
    if (eval_images.empty()) {
        throw ConfigError("consistency_gap needs a nonempty eval set");
    }
    NoGradGuard ng;
    double abs_sum = 0.0;
    std::size_t count = 0;
    for_each_chunk(eval_images, [&](const Tensor& batch) {
        Tensor direct = bank.translate(i, j, batch);
        Tensor detour = bank.translate(k, j, bank.translate(i, k, batch));
        for (std::size_t p = 0; p < direct.numel(); ++p) {
            abs_sum += std::abs(direct.values()[p] - detour.values()[p]);
        }
        count += direct.numel();
    });
    return abs_sum / static_cast<double>(count);
}

MetricsReport evaluate_bank(const Translator& bank, const EvalClassifier& classifier,
                            const std::vector<DomainDataset>& eval_sets, const EvalPlan& plan) {
    if (plan.pairs.empty()) {
        throw ConfigError("evaluation plan has no pairs");
    }
    std::map<int, const DomainDataset*> by_domain;
    for (const auto& ds : eval_sets) {
        by_domain[ds.domain] = &ds;
    }

    auto slice = [&](int domain) -> std::pair<std::vector<Tensor>, std::vector<int>> {
        auto it = by_domain.find(domain);
        if (it == by_domain.end() || it->second->images.empty()) {
            throw ConfigError("no eval images for domain " + std::to_string(domain));
        }
        const DomainDataset& ds = *it->second;
        const std::size_t n =
            std::min<std::size_t>(ds.images.size(), static_cast<std::size_t>(plan.max_eval_images));
        std::vector<Tensor> imgs(ds.images.begin(), ds.images.begin() + n);
        std::vector<int> pairing;
        if (!ds.pairing.empty()) {
            pairing.assign(ds.pairing.begin(), ds.pairing.begin() + n);
        }
        return {std::move(imgs), std::move(pairing)};
    };

    MetricsReport report;
    report.step = plan.step;
    for (const auto& [i, j] : plan.pairs) {
        if (i == j) {
            throw ConfigError("evaluation pair needs two distinct domains");
        }
        auto [src_images, src_pairing] = slice(i);
        auto [tgt_images, tgt_pairing] = slice(j);

        // Translate the capped source set in chunks.
        std::vector<Tensor> generated;
        {
            NoGradGuard ng;
            for_each_chunk(src_images, [&](const Tensor& batch) {
                for (Tensor& t : unstack_images(bank.translate(i, j, batch))) {
                    generated.push_back(std::move(t));
                }
            });
        }

        PairMetrics pm;
        pm.source = i;
        pm.target = j;
        pm.cls_error = classification_error(classifier, {{j, generated}}).at(j);

        // PSNR against the paired target rendition, pooled over the set.
        if (!src_pairing.empty() && !tgt_pairing.empty()) {
            const DomainDataset& full_tgt = *by_domain.at(j);
            std::map<int, int> tgt_pos;
            for (std::size_t p = 0; p < full_tgt.pairing.size(); ++p) {
                tgt_pos[full_tgt.pairing[p]] = static_cast<int>(p);
            }
            double se = 0.0;
            std::size_t count = 0;
            for (std::size_t p = 0; p < generated.size(); ++p) {
                auto it = tgt_pos.find(src_pairing[p]);
                if (it == tgt_pos.end()) {
                    continue;
                }
                const Tensor& truth = full_tgt.images[it->second];
                for (std::size_t q = 0; q < truth.numel(); ++q) {
                    const double d = generated[p].values()[q] - truth.values()[q];
                    se += d * d;
                }
                count += truth.numel();
            }
            if (count > 0) {
                const double mse = se / (4.0 * static_cast<double>(count)); // [0,1] range
                pm.psnr_db = mse == 0.0 ? std::numeric_limits<double>::infinity()
                                        : 10.0 * std::log10(1.0 / mse);
            }
        }

        pm.frechet = frechet_distance(feature_stats(classifier, generated),
                                      feature_stats(classifier, tgt_images));

        int k = 0;
        for (const auto& [dom, ds] : by_domain) {
            (void)ds;
            if (dom != i && dom != j) {
                k = dom;
                break;
            }
        }
        if (k == 0) {
            throw ConfigError("consistency gap needs a third domain in the eval sets");
        }
        pm.consistency = consistency_gap(bank, i, j, k, src_images);

        report.pairs.push_back(std::move(pm));
    }
    return report;
}

} // namespace mpct
