#include <cmath>
#include <deque>
#include <map>
#include <vector>

#include "doctest.h"
#include "mpct/grad_check.hpp"
#include "mpct/losses.hpp"
#include "mpct/models.hpp"
#include "mpct/ops.hpp"

using namespace mpct;
namespace O = mpct::ops;

namespace {

// Adds a fixed per-pair shift to every pixel; paths compose additively, which
// makes every loss value computable by hand.
class ShiftTranslator : public Translator {
  public:
    ShiftTranslator(int n, std::map<std::pair<int, int>, double> shifts)
        : n_(n), shifts_(std::move(shifts)) {}
    Tensor translate(int i, int j, const Tensor& x) const override {
        auto it = shifts_.find({i, j});
        const double s = it == shifts_.end() ? 0.0 : it->second;
        return O::add_scalar(x, s);
    }
    int n_domains() const override { return n_; }

  private:
    int n_;
    std::map<std::pair<int, int>, double> shifts_;
};

// Returns canned outputs in call order; lets a test pin exact probabilities.
class ScriptedCritics : public Critics {
  public:
    explicit ScriptedCritics(int n) : n_(n) {}
    void push_probs(std::vector<double> p) { probs_.push_back(std::move(p)); }
    void push_logits(std::vector<double> l) { logits_.push_back(std::move(l)); }

    Tensor real_prob(int, const Tensor& x) const override {
        REQUIRE(!probs_.empty());
        std::vector<double> p = probs_.front();
        probs_.pop_front();
        REQUIRE(static_cast<int>(p.size()) == x.shape()[0]);
        return Tensor::from_vector({x.shape()[0], 1}, p);
    }
    bool has_cls() const override { return true; }
    Tensor cls_logits(const Tensor& x) const override {
        REQUIRE(!logits_.empty());
        std::vector<double> l = logits_.front();
        logits_.pop_front();
        REQUIRE(static_cast<int>(l.size()) == x.shape()[0] * n_);
        return Tensor::from_vector({x.shape()[0], n_}, l);
    }
    int n_domains() const override { return n_; }

  private:
    int n_;
    mutable std::deque<std::vector<double>> probs_;
    mutable std::deque<std::vector<double>> logits_;
};

Minibatch batch_of(int domain, const std::vector<int>& shape, const std::vector<double>& vals) {
    return Minibatch{domain, Tensor::from_vector(shape, vals)};
}

Minibatch rand_batch(Rng& rng, int domain, int b, int s) {
    Tensor t = Tensor::zeros({b, 3, s, s});
    for (auto& v : t.values()) {
        v = rng.uniform(-1.0, 1.0);
    }
    return Minibatch{domain, t};
}

std::vector<Minibatch> three_rand_batches(Rng& rng, int b, int s) {
    return {rand_batch(rng, 1, b, s), rand_batch(rng, 2, b, s), rand_batch(rng, 3, b, s)};
}

// Moves every parameter to a generic point. Freshly built nets have zero
// biases and zero norm offsets, which leaves some activations exactly at the
// relu kink (e.g. the single-tap upsample border after normalization); finite
// differences straddle such kinks no matter how small the step, so gradient
// comparisons are only meaningful once the exact zeros are perturbed away.
void jitter_params(const ParamSet& ps, Rng& rng, double amp = 0.05) {
    for (const auto& it : ps.items()) {
        Tensor t = it.tensor;
        for (auto& v : t.values()) {
            v += rng.uniform(-amp, amp);
        }
    }
}

constexpr double kSixLogHalf = -4.1588830833596715; // 6*ln(0.5)
constexpr double kThreeLogThree = 3.2958368660043287; // 3*ln(3)

} // namespace

TEST_CASE("translation cache memoizes hops") {
    IdentityTranslator id(3);
    Rng rng(1);
    TranslationCache cache(id, three_rand_batches(rng, 2, 4));
    // repeated requests return the same node, not a recomputation
    CHECK(cache.one_hop(1, 2).node() == cache.one_hop(1, 2).node());
    CHECK(cache.two_hop(1, 3, 2).node() == cache.two_hop(1, 3, 2).node());
    CHECK_THROWS_AS(cache.real(4), ConfigError);
    CHECK_THROWS_AS(TranslationCache(id, {rand_batch(rng, 1, 1, 4), rand_batch(rng, 1, 1, 4)}),
                    ConfigError);
}

TEST_CASE("dual loss vanishes for exact reconstruction") {
    IdentityTranslator id(3);
    Rng rng(2);
    TranslationCache cache(id, three_rand_batches(rng, 3, 4));
    CHECK(dual_loss(cache, 1, 2).scalar() == 0.0);
}

TEST_CASE("dual loss single-pixel value") {
    // round trip adds 0.3 in both directions: 0.2 -> 0.5 and -0.1 -> 0.2
    ShiftTranslator t(2, {{{1, 2}, 0.1}, {{2, 1}, 0.2}});
    TranslationCache cache(t, {batch_of(1, {1, 1, 1, 1}, {0.2}),
                               batch_of(2, {1, 1, 1, 1}, {-0.1})});
    CHECK(dual_loss(cache, 1, 2).scalar() == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("dual loss is invariant to duplicating the batch") {
    ShiftTranslator t(2, {{{1, 2}, 0.07}, {{2, 1}, 0.11}});
    TranslationCache once(t, {batch_of(1, {1, 1, 1, 2}, {0.2, -0.4}),
                              batch_of(2, {1, 1, 1, 2}, {0.1, 0.3})});
    TranslationCache twice(t, {batch_of(1, {2, 1, 1, 2}, {0.2, -0.4, 0.2, -0.4}),
                               batch_of(2, {2, 1, 1, 2}, {0.1, 0.3, 0.1, 0.3})});
    CHECK(dual_loss(once, 1, 2).scalar() ==
          doctest::Approx(dual_loss(twice, 1, 2).scalar()).epsilon(1e-12));
}

TEST_CASE("consistency loss vanishes when paths coincide") {
    IdentityTranslator id(3);
    Rng rng(3);
    TranslationCache cache(id, three_rand_batches(rng, 2, 4));
    CHECK(consistency_loss(cache, 1, 2, 3).scalar() == 0.0);

    // additive shifts with matching path sums also cancel exactly
    ShiftTranslator t(3, {{{1, 2}, 0.3}, {{1, 3}, 0.1}, {{3, 2}, 0.2},
                          {{2, 1}, 0.5}, {{2, 3}, 0.25}, {{3, 1}, 0.25}});
    TranslationCache cache2(t, {batch_of(1, {1, 1, 1, 1}, {0.0}),
                                batch_of(2, {1, 1, 1, 1}, {0.0}),
                                batch_of(3, {1, 1, 1, 1}, {0.0})});
    CHECK(consistency_loss(cache2, 1, 2, 3).scalar() == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("consistency loss single-pixel value") {
    // i-side: one-hop 0.4 vs two-hop 0.1; j-side paths agree
    ShiftTranslator t(3, {{{1, 2}, 0.4}, {{1, 3}, 0.05}, {{3, 2}, 0.05},
                          {{2, 1}, 0.2}, {{2, 3}, 0.1}, {{3, 1}, 0.1}});
    TranslationCache cache(t, {batch_of(1, {1, 1, 1, 1}, {0.0}),
                               batch_of(2, {1, 1, 1, 1}, {0.0}),
                               batch_of(3, {1, 1, 1, 1}, {0.0})});
    CHECK(consistency_loss(cache, 1, 2, 3).scalar() == doctest::Approx(0.3).epsilon(1e-12));
    CHECK_THROWS_AS(consistency_loss(cache, 1, 2, 2), ConfigError);
}

TEST_CASE("fake batch assembly counts and provenance") {
    IdentityTranslator id(3);
    Rng rng(4);
    TranslationCache cache(id, {rand_batch(rng, 1, 4, 4), rand_batch(rng, 2, 4, 4),
                                rand_batch(rng, 3, 4, 4)});
    FakeBatchSet fakes = assemble_fake_batches(cache, 1, 2, 3);
    CHECK(fakes.count_for(3) == 8);
    CHECK(fakes.count_for(1) == 8);
    CHECK(fakes.count_for(2) == 8);
    for (const FakeEntry& e : fakes.for_domain(3)) {
        CHECK(e.provenance == Provenance::OneHop); // auxiliary domain: one-hop only
    }
    bool has_one = false, has_two = false;
    for (const FakeEntry& e : fakes.for_domain(2)) {
        has_one = has_one || e.provenance == Provenance::OneHop;
        has_two = has_two || e.provenance == Provenance::TwoHop;
        CHECK(e.source_domain == 1);
    }
    CHECK(has_one);
    CHECK(has_two);
    CHECK_THROWS_AS(fakes.for_domain(4), ConfigError);
}

TEST_CASE("fake two-hop entries share nodes with the consistency comparison") {
    IdentityTranslator id(3);
    Rng rng(5);
    TranslationCache cache(id, three_rand_batches(rng, 2, 4));
    (void)consistency_loss(cache, 1, 2, 3);
    FakeBatchSet fakes = assemble_fake_batches(cache, 1, 2, 3);
    const Tensor& cons_side = cache.two_hop(1, 3, 2);
    bool found = false;
    for (const FakeEntry& e : fakes.for_domain(2)) {
        if (e.provenance == Provenance::TwoHop) {
            found = e.images.node() == cons_side.node();
        }
    }
    CHECK(found); // same tensor node, not a recomputation
}

TEST_CASE("unequal batch sizes use each batch's own normalizer") {
    ShiftTranslator t(3, {{{1, 2}, 0.1}, {{2, 1}, 0.2}});
    TranslationCache cache(t, {batch_of(1, {2, 1, 1, 1}, {0.0, 0.0}),
                               batch_of(2, {3, 1, 1, 1}, {0.0, 0.0, 0.0}),
                               batch_of(3, {1, 1, 1, 1}, {0.0})});
    // both directions reconstruct with error 0.3 per image regardless of size
    CHECK(dual_loss(cache, 1, 2).scalar() == doctest::Approx(0.6).epsilon(1e-12));
    FakeBatchSet fakes = assemble_fake_batches(cache, 1, 2, 3);
    CHECK(fakes.count_for(3) == 5); // 2 from domain 1, 3 from domain 2
    CHECK(fakes.count_for(1) == 6); // 3 one-hop + 3 two-hop from domain 2
    CHECK(fakes.count_for(2) == 4); // 2 one-hop + 2 two-hop from domain 1
}

TEST_CASE("gan loss with constant-half critics") {
    IdentityTranslator id(3);
    ConstantCritics critics(3, 0.5);
    Rng rng(6);
    TranslationCache cache(id, three_rand_batches(rng, 2, 4));
    FakeBatchSet fakes = assemble_fake_batches(cache, 1, 2, 3);
    CHECK(gan_loss(critics, cache, fakes).scalar() ==
          doctest::Approx(kSixLogHalf).epsilon(1e-12));
}

TEST_CASE("gan single-domain term with scripted probabilities") {
    ScriptedCritics critics(3);
    critics.push_probs({0.8, 0.4}); // real batch
    critics.push_probs({0.3});      // pooled fake batch
    Tensor real = Tensor::zeros({2, 1, 1, 1});
    std::vector<Tensor> fakes{Tensor::zeros({1, 1, 1, 1})};
    const double expected = 0.5 * (std::log(0.8) + std::log(0.4)) + std::log(0.7);
    CHECK(gan_domain_term(critics, 1, real, fakes).scalar() ==
          doctest::Approx(expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx(-0.9263920855329148).epsilon(1e-12));
}

TEST_CASE("gan loss approaches zero from below under perfect discrimination") {
    ScriptedCritics critics(3);
    for (int l = 0; l < 3; ++l) {
        critics.push_probs({1.0, 1.0});             // real batches
        critics.push_probs({1e-6, 1e-6, 1e-6, 1e-6}); // pooled fakes
    }
    IdentityTranslator id(3);
    Rng rng(7);
    TranslationCache cache(id, three_rand_batches(rng, 2, 4));
    FakeBatchSet fakes = assemble_fake_batches(cache, 1, 2, 3);
    const double v = gan_loss(critics, cache, fakes).scalar();
    CHECK(v < 0.0);
    CHECK(v > -1e-5);
}

TEST_CASE("generator surrogate is the negative log of fake probabilities") {
    ScriptedCritics critics(3);
    critics.push_probs({0.25, 0.25, 0.25, 0.25});
    critics.push_probs({0.5, 0.5, 0.5, 0.5});
    critics.push_probs({0.2, 0.2, 0.2, 0.2});
    IdentityTranslator id(3);
    Rng rng(8);
    TranslationCache cache(id, three_rand_batches(rng, 2, 4));
    FakeBatchSet fakes = assemble_fake_batches(cache, 1, 2, 3);
    const double expected = -(std::log(0.25) + std::log(0.5) + std::log(0.2));
    CHECK(gen_gan_surrogate(critics, fakes).scalar() ==
          doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("classification losses under uniform and perfect classifiers") {
    IdentityTranslator id(3);
    Rng rng(9);
    TranslationCache cache(id, three_rand_batches(rng, 2, 4));
    FakeBatchSet fakes = assemble_fake_batches(cache, 1, 2, 3);

    ConstantCritics uniform(3, 0.5, true); // zero logits -> uniform over 3
    auto [cls_real, cls_fake] = cls_losses(uniform, cache, fakes);
    CHECK(cls_real.scalar() == doctest::Approx(kThreeLogThree).epsilon(1e-12));
    CHECK(cls_fake.scalar() == doctest::Approx(kThreeLogThree).epsilon(1e-12));
    CHECK(cls_fake.scalar() >= 0.0);

    // near-delta logits on the true column drive the loss to zero
    ScriptedCritics perfect(3);
    auto delta_rows = [](int rows, int col) {
        std::vector<double> v(static_cast<std::size_t>(rows) * 3, 0.0);
        for (int r = 0; r < rows; ++r) {
            v[static_cast<std::size_t>(r) * 3 + col] = 60.0;
        }
        return v;
    };
    for (int l = 0; l < 3; ++l) {
        perfect.push_logits(delta_rows(2, l)); // real batch of domain l+1
        perfect.push_logits(delta_rows(4, l)); // pooled fakes targeting l+1
    }
    auto [pr, pf] = cls_losses(perfect, cache, fakes);
    CHECK(pr.scalar() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(pf.scalar() == doctest::Approx(0.0).epsilon(1e-12));

    ConstantCritics no_head(3, 0.5, false);
    CHECK_THROWS_AS(cls_losses(no_head, cache, fakes), ConfigError);
}

TEST_CASE("total loss composes exactly") {
    Tensor d = Tensor::scalar_value(0.6);
    Tensor c = Tensor::scalar_value(0.3);
    Tensor g = Tensor::scalar_value(-4.0);
    CHECK(total_loss(d, c, g, 0.1).scalar() == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(total_loss(d, c, g, 0.0).scalar() == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(total_loss(Tensor::scalar_value(0), Tensor::scalar_value(0),
                     Tensor::scalar_value(0), 0.1)
              .scalar() == 0.0);
    CHECK_THROWS_AS(total_loss(d, c, g, -0.1), ConfigError);

    Rng rng(10);
    for (int trial = 0; trial < 100; ++trial) {
        const double dv = rng.uniform(0.0, 2.0), cv = rng.uniform(0.0, 2.0);
        const double gv = rng.uniform(-8.0, 0.0), a = rng.uniform(0.0, 1.0);
        const double got = total_loss(Tensor::scalar_value(dv), Tensor::scalar_value(cv),
                                      Tensor::scalar_value(gv), a)
                               .scalar();
        const double want = dv + cv + a * gv;
        CHECK(std::abs(got - want) <= 1e-12 * std::max(1.0, std::abs(want)));
    }
}

TEST_CASE("split objectives compose exactly") {
    Tensor d = Tensor::scalar_value(0.6);
    Tensor c = Tensor::scalar_value(0.3);
    Tensor g = Tensor::scalar_value(-4.0);
    Tensor cr = Tensor::scalar_value(0.5);
    Tensor cf = Tensor::scalar_value(1.0);
    auto [tg, td] = stargan_split_losses(d, c, g, cr, cf, 0.1, 0.1);
    CHECK(tg.scalar() == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(td.scalar() == doctest::Approx(0.45).epsilon(1e-12));

    // beta = 0 reduces the generator objective to the unsplit composition
    auto [tg0, td0] = stargan_split_losses(d, c, g, cr, cf, 0.1, 0.0);
    CHECK(tg0.scalar() == doctest::Approx(total_loss(d, c, g, 0.1).scalar()).epsilon(1e-12));
    CHECK(td0.scalar() == doctest::Approx(0.4).epsilon(1e-12));

    // generator-only terms never reach the discriminator objective
    auto [tg1, td1] = stargan_split_losses(Tensor::scalar_value(9.9),
                                           Tensor::scalar_value(7.7), g, cr, cf, 0.1, 0.1);
    (void)tg1;
    CHECK(td1.scalar() == doctest::Approx(td.scalar()).epsilon(1e-15));
}

TEST_CASE("triple objective equals three rotated single objectives") {
    GeneratorSpec gspec;
    gspec.base_width = 3;
    gspec.n_res_blocks = 1;
    DiscriminatorSpec dspec;
    dspec.width = 3;
    dspec.image_size = 8;
    TranslatorBank bank(gspec, BankMode::Pairwise, 3, 1234);
    CriticSet critics(dspec, BankMode::Pairwise, 3, 4321);
    Rng rng(11);
    auto batches = three_rand_batches(rng, 2, 8);

    NoGradGuard ng;
    TranslationCache shared(bank, batches);
    const double joint = triple_total(shared, critics, 1, 2, 3, 0.1).scalar();

    double separate = 0.0;
    for (auto [a, b, c] : std::vector<std::tuple<int, int, int>>{{1, 2, 3}, {1, 3, 2}, {2, 3, 1}}) {
        TranslationCache fresh(bank, batches);
        separate += single_rotation_total(fresh, critics, a, b, c, 0.1).scalar();
    }
    CHECK(joint == doctest::Approx(separate).epsilon(1e-12));

    // renaming (i,j) only reorders terms
    TranslationCache swapped(bank, batches);
    const double renamed = triple_total(swapped, critics, 2, 1, 3, 0.1).scalar();
    CHECK(joint == doctest::Approx(renamed).epsilon(1e-12));
}

TEST_CASE("triple objective with identity generators and half critics") {
    IdentityTranslator id(3);
    ConstantCritics critics(3, 0.5);
    Rng rng(12);
    TranslationCache cache(id, three_rand_batches(rng, 2, 4));
    // per rotation: dual 0, consistency 0, gan 6 log(1/2)
    const double expected = 3.0 * 0.1 * kSixLogHalf;
    CHECK(triple_total(cache, critics, 1, 2, 3, 0.1).scalar() ==
          doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("pixel-mean and per-image-sum scoring differ by the pixel count") {
    ShiftTranslator t(2, {{{1, 2}, 0.1}, {{2, 1}, 0.2}});
    TranslationCache c1(t, {batch_of(1, {1, 1, 1, 2}, {0.0, 0.0}),
                            batch_of(2, {1, 1, 1, 2}, {0.0, 0.0})});
    LossOptions mean_opts;
    LossOptions sum_opts;
    sum_opts.l1_mode = ops::L1Mode::ImageSumBatchMean;
    const double as_mean = dual_loss(c1, 1, 2, mean_opts).scalar();
    TranslationCache c2(t, {batch_of(1, {1, 1, 1, 2}, {0.0, 0.0}),
                            batch_of(2, {1, 1, 1, 2}, {0.0, 0.0})});
    const double as_sum = dual_loss(c2, 1, 2, sum_opts).scalar();
    CHECK(as_sum == doctest::Approx(2.0 * as_mean).epsilon(1e-12));
}

TEST_CASE("dual and consistency losses ignore discriminator parameters") {
    GeneratorSpec gspec;
    gspec.base_width = 3;
    gspec.n_res_blocks = 1;
    DiscriminatorSpec dspec;
    dspec.width = 3;
    dspec.image_size = 8;
    TranslatorBank bank(gspec, BankMode::Pairwise, 3, 55);
    CriticSet critics(dspec, BankMode::Pairwise, 3, 56);
    Rng rng(13);
    auto batches = three_rand_batches(rng, 1, 8);

    Tape tape;
    for (const auto& it : bank.params().items()) {
        tape.watch(it.tensor);
    }
    ParamSet disc_params = critics.params();
    for (const auto& it : disc_params.items()) {
        tape.watch(it.tensor);
    }
    TranslationCache cache(bank, batches);
    Tensor loss = O::add(dual_loss(cache, 1, 2), consistency_loss(cache, 1, 2, 3));
    tape.backward(loss);

    Gradients g = collect_gradients(disc_params);
    for (const auto& grad : g.grads) {
        for (double v : grad.values()) {
            CHECK(v == 0.0);
        }
    }
    CHECK(g.unreached.size() == disc_params.size());
}

TEST_CASE("loss gradients match finite differences on small real models") {
    GeneratorSpec gspec;
    gspec.base_width = 3;
    gspec.n_res_blocks = 1;
    DiscriminatorSpec dspec;
    dspec.width = 3;
    dspec.image_size = 8;
    TranslatorBank bank(gspec, BankMode::Pairwise, 3, 77);
    CriticSet critics(dspec, BankMode::Pairwise, 3, 78);
    Rng rng(14);
    auto batches = three_rand_batches(rng, 1, 8);
    Rng jr(99);
    jitter_params(bank.params(), jr);
    jitter_params(critics.params(), jr);

    SUBCASE("reconstruction") {
        auto make_loss = [&](Tape&) {
            TranslationCache cache(bank, batches);
            return dual_loss(cache, 1, 2);
        };
        Rng cr(15);
        GradCheckReport rep = grad_check(make_loss, bank.params(), cr, 1, 1e-4);
        INFO("worst ", rep.worst_param, " err ", rep.max_err);
        CHECK(rep.ok);
    }
    SUBCASE("path agreement") {
        auto make_loss = [&](Tape&) {
            TranslationCache cache(bank, batches);
            return consistency_loss(cache, 1, 2, 3);
        };
        Rng cr(16);
        GradCheckReport rep = grad_check(make_loss, bank.params(), cr, 1, 1e-4);
        INFO("worst ", rep.worst_param, " err ", rep.max_err);
        CHECK(rep.ok);
    }
    SUBCASE("adversarial") {
        ParamSet all;
        all.merge(bank.params());
        all.merge(critics.params());
        auto make_loss = [&](Tape&) {
            TranslationCache cache(bank, batches);
            FakeBatchSet fakes = assemble_fake_batches(cache, 1, 2, 3);
            return gan_loss(critics, cache, fakes);
        };
        Rng cr(17);
        GradCheckReport rep = grad_check(make_loss, all, cr, 1, 1e-4);
        INFO("worst ", rep.worst_param, " err ", rep.max_err);
        CHECK(rep.ok);
    }
    SUBCASE("classification") {
        CriticSet cls_critics(dspec, BankMode::Conditional, 3, 79);
        jitter_params(cls_critics.params(), jr);
        ParamSet all;
        all.merge(bank.params());
        all.merge(cls_critics.params());
        auto make_loss = [&](Tape&) {
            TranslationCache cache(bank, batches);
            FakeBatchSet fakes = assemble_fake_batches(cache, 1, 2, 3);
            auto [cr_loss, cf_loss] = cls_losses(cls_critics, cache, fakes);
            return O::add(cr_loss, cf_loss);
        };
        Rng cr(18);
        GradCheckReport rep = grad_check(make_loss, all, cr, 1, 1e-4);
        INFO("worst ", rep.worst_param, " err ", rep.max_err);
        CHECK(rep.ok);
    }
}
