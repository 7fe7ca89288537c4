#include "mpct/losses.hpp"

namespace mpct {

namespace O = ops;

namespace {

void require_distinct(std::initializer_list<int> ds, const char* where) {
    for (auto a = ds.begin(); a != ds.end(); ++a) {
        for (auto b = a + 1; b != ds.end(); ++b) {
            if (*a == *b) {
                throw ConfigError(std::string(where) + ": domains must be pairwise distinct");
            }
        }
    }
}

void require_scalar(const Tensor& t, const char* what) {
    if (t.numel() != 1) {
        throw ShapeError(std::string(what) + " must be scalar, got shape " +
                         format_shape(t.shape()));
    }
}

} // namespace

TranslationCache::TranslationCache(const Translator& translator, std::vector<Minibatch> batches)
    : translator_(&translator) {
    for (auto& b : batches) {
        if (!b.images.defined() || b.images.shape().size() != 4) {
            throw ShapeError("minibatch images must be rank 4 (B,C,H,W)");
        }
        if (b.size() < 1) {
            throw ConfigError("empty minibatch for domain " + std::to_string(b.domain));
        }
        if (!reals_.emplace(b.domain, b.images).second) {
            throw ConfigError("duplicate minibatch for domain " + std::to_string(b.domain));
        }
    }
}

const Tensor& TranslationCache::real(int p) {
    auto it = reals_.find(p);
    if (it == reals_.end()) {
        throw ConfigError("no minibatch supplied for domain " + std::to_string(p));
    }
    return it->second;
}

const Tensor& TranslationCache::one_hop(int p, int q) {
    const auto key = std::make_pair(p, q);
    auto it = one_.find(key);
    if (it == one_.end()) {
        it = one_.emplace(key, translator_->translate(p, q, real(p))).first;
    }
    return it->second;
}

const Tensor& TranslationCache::two_hop(int p, int q, int r) {
    const auto key = std::make_tuple(p, q, r);
    auto it = two_.find(key);
    if (it == two_.end()) {
        it = two_.emplace(key, translator_->translate(q, r, one_hop(p, q))).first;
    }
    return it->second;
}

const std::vector<FakeEntry>& FakeBatchSet::for_domain(int l) const {
    if (l == i) {
        return fakes_i;
    }
    if (l == j) {
        return fakes_j;
    }
    if (l == k) {
        return fakes_k;
    }
    throw ConfigError("domain " + std::to_string(l) + " is not part of this fake set");
}

std::size_t FakeBatchSet::count_for(int l) const {
    std::size_t n = 0;
    for (const FakeEntry& e : for_domain(l)) {
        n += static_cast<std::size_t>(e.images.shape()[0]);
    }
    return n;
}

Tensor dual_loss(TranslationCache& cache, int i, int j, const LossOptions& opts) {
    require_distinct({i, j}, "dual_loss");
    Tensor fwd = O::l1_distance(cache.two_hop(i, j, i), cache.real(i), opts.l1_mode);
    Tensor bwd = O::l1_distance(cache.two_hop(j, i, j), cache.real(j), opts.l1_mode);
    return O::add(fwd, bwd);
}

Tensor consistency_loss(TranslationCache& cache, int i, int j, int k, const LossOptions& opts) {
    require_distinct({i, j, k}, "consistency_loss");
    Tensor i_side = O::l1_distance(cache.one_hop(i, j), cache.two_hop(i, k, j), opts.l1_mode);
    Tensor j_side = O::l1_distance(cache.one_hop(j, i), cache.two_hop(j, k, i), opts.l1_mode);
    return O::add(i_side, j_side);
}

FakeBatchSet assemble_fake_batches(TranslationCache& cache, int i, int j, int k) {
    require_distinct({i, j, k}, "assemble_fake_batches");
    FakeBatchSet set;
    set.i = i;
    set.j = j;
    set.k = k;
    // auxiliary domain: one-hop arrivals only
    set.fakes_k.push_back({cache.one_hop(i, k), Provenance::OneHop, i});
    set.fakes_k.push_back({cache.one_hop(j, k), Provenance::OneHop, j});
    // task domains: the opposite domain arrives directly and through k
    set.fakes_i.push_back({cache.one_hop(j, i), Provenance::OneHop, j});
    set.fakes_i.push_back({cache.two_hop(j, k, i), Provenance::TwoHop, j});
    set.fakes_j.push_back({cache.one_hop(i, j), Provenance::OneHop, i});
    set.fakes_j.push_back({cache.two_hop(i, k, j), Provenance::TwoHop, i});
    return set;
}

namespace {

Tensor pooled(const std::vector<Tensor>& batches) {
    if (batches.empty()) {
        throw ConfigError("no fake batches to pool");
    }
    if (batches.size() == 1) {
        return batches[0];
    }
    return O::concat_batch(batches);
}

std::vector<Tensor> entry_images(const std::vector<FakeEntry>& entries) {
    std::vector<Tensor> out;
    out.reserve(entries.size());
    for (const FakeEntry& e : entries) {
        out.push_back(e.images);
    }
    return out;
}

} // namespace

Tensor gan_domain_term(const Critics& critics, int l, const Tensor& real_images,
                       const std::vector<Tensor>& fake_batches) {
    Tensor real_term = O::mean_reduce(O::log_stable(critics.real_prob(l, real_images)));
    Tensor fake_prob = critics.real_prob(l, pooled(fake_batches));
    // log(1 - d) via an affine flip of the probability
    Tensor fake_term =
        O::mean_reduce(O::log_stable(O::add_scalar(O::mul_scalar(fake_prob, -1.0), 1.0)));
    return O::add(real_term, fake_term);
}

Tensor gan_loss(const Critics& critics, TranslationCache& cache, const FakeBatchSet& fakes) {
    Tensor sum;
    for (int l : {fakes.i, fakes.j, fakes.k}) {
        Tensor term =
            gan_domain_term(critics, l, cache.real(l), entry_images(fakes.for_domain(l)));
        sum = sum.defined() ? O::add(sum, term) : term;
    }
    return sum;
}

Tensor gen_gan_surrogate(const Critics& critics, const FakeBatchSet& fakes) {
    Tensor sum;
    for (int l : {fakes.i, fakes.j, fakes.k}) {
        Tensor prob = critics.real_prob(l, pooled(entry_images(fakes.for_domain(l))));
        Tensor term = O::mul_scalar(O::mean_reduce(O::log_stable(prob)), -1.0);
        sum = sum.defined() ? O::add(sum, term) : term;
    }
    return sum;
}

std::pair<Tensor, Tensor> cls_losses(const Critics& critics, TranslationCache& cache,
                                     const FakeBatchSet& fakes) {
    if (!critics.has_cls()) {
        throw ConfigError("classification losses need a classification head");
    }
    Tensor real_sum, fake_sum;
    for (int l : {fakes.i, fakes.j, fakes.k}) {
        Tensor real_lp = O::log_softmax(critics.cls_logits(cache.real(l)));
        Tensor real_term =
            O::mul_scalar(O::mean_reduce(O::take_column(real_lp, l - 1)), -1.0);
        real_sum = real_sum.defined() ? O::add(real_sum, real_term) : real_term;

        // generated images are scored against the domain they were made FOR
        Tensor fake_lp =
            O::log_softmax(critics.cls_logits(pooled(entry_images(fakes.for_domain(l)))));
        Tensor fake_term =
            O::mul_scalar(O::mean_reduce(O::take_column(fake_lp, l - 1)), -1.0);
        fake_sum = fake_sum.defined() ? O::add(fake_sum, fake_term) : fake_term;
    }
    return {real_sum, fake_sum};
}

Tensor total_loss(const Tensor& dual, const Tensor& consistency, const Tensor& gan,
                  double alpha) {
    if (alpha < 0.0) {
        throw ConfigError("alpha must be non-negative");
    }
    require_scalar(dual, "dual");
    require_scalar(consistency, "consistency");
    require_scalar(gan, "gan");
    return O::add(O::add(dual, consistency), O::mul_scalar(gan, alpha));
}

std::pair<Tensor, Tensor> stargan_split_losses(const Tensor& dual, const Tensor& consistency,
                                               const Tensor& gan, const Tensor& cls_real,
                                               const Tensor& cls_fake, double alpha,
                                               double beta) {
    if (alpha < 0.0 || beta < 0.0) {
        throw ConfigError("alpha and beta must be non-negative");
    }
    require_scalar(cls_real, "cls_real");
    require_scalar(cls_fake, "cls_fake");
    Tensor total_g = O::add(total_loss(dual, consistency, gan, alpha),
                            O::mul_scalar(cls_fake, beta));
    Tensor total_d =
        O::add(O::mul_scalar(gan, -alpha), O::mul_scalar(cls_real, beta));
    return {total_g, total_d};
}

Tensor single_rotation_total(TranslationCache& cache, const Critics& critics, int i, int j,
                             int k, double alpha, const LossOptions& opts) {
    Tensor dual = dual_loss(cache, i, j, opts);
    Tensor cons = consistency_loss(cache, i, j, k, opts);
    FakeBatchSet fakes = assemble_fake_batches(cache, i, j, k);
    Tensor gan = gan_loss(critics, cache, fakes);
    return total_loss(dual, cons, gan, alpha);
}

Tensor triple_total(TranslationCache& cache, const Critics& critics, int i, int j, int k,
                    double alpha, const LossOptions& opts) {
    Tensor a = single_rotation_total(cache, critics, i, j, k, alpha, opts);
    Tensor b = single_rotation_total(cache, critics, i, k, j, alpha, opts);
    Tensor c = single_rotation_total(cache, critics, j, k, i, alpha, opts);
    return O::add(O::add(a, b), c);
}

} // namespace mpct
