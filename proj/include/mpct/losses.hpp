#pragma once

#include <map>
#include <tuple>
#include <utility>
#include <vector>

#include "mpct/data.hpp"
#include "mpct/models.hpp"
#include "mpct/ops.hpp"
#include "mpct/tensor.hpp"

namespace mpct {

// Memoizes every translation requested within one step, so the one-hop tensor
// compared against a two-hop path is the same node the fake batches score, and
// a round trip reuses its outbound hop. One full three-domain objective then
// costs exactly 6 one-hop and 12 two-hop generator applications.
class TranslationCache {
  public:
    TranslationCache(const Translator& translator, std::vector<Minibatch> batches);

    const Tensor& real(int p);
    // f_{p,q}(B_p)
    const Tensor& one_hop(int p, int q);
    // f_{q,r}(f_{p,q}(B_p)); r == p gives the round-trip reconstruction
    const Tensor& two_hop(int p, int q, int r);

  private:
    const Translator* translator_;
    std::map<int, Tensor> reals_;
    std::map<std::pair<int, int>, Tensor> one_;
    std::map<std::tuple<int, int, int>, Tensor> two_;
};

struct LossOptions {
    // Default scores L1 as a per-element mean; the alternative sums over each
    // image and averages over the batch only.
    ops::L1Mode l1_mode = ops::L1Mode::ElementMean;
};

enum class Provenance { OneHop, TwoHop };

struct FakeEntry {
    Tensor images;
    Provenance provenance;
    int source_domain;
};

// The per-target-domain collections of generated images scored by the
// adversarial and classification losses.
struct FakeBatchSet {
    int i = 0, j = 0, k = 0;
    std::vector<FakeEntry> fakes_i, fakes_j, fakes_k;

    const std::vector<FakeEntry>& for_domain(int l) const;
    std::size_t count_for(int l) const; // total images destined for domain l
};

// Round-trip reconstruction error for the pair (i,j), both directions, each
// normalized by its own batch.
Tensor dual_loss(TranslationCache& cache, int i, int j, const LossOptions& opts = {});

// L1 gap between the direct i->j path and the i->k->j path, plus the
// symmetric j-side term.
Tensor consistency_loss(TranslationCache& cache, int i, int j, int k,
                        const LossOptions& opts = {});

// Fake sets: domain k receives the one-hop images from i and j; domains i and
// j each receive the opposite domain's one-hop and its two-hop through k.
FakeBatchSet assemble_fake_batches(TranslationCache& cache, int i, int j, int k);

// mean log d_l(real) + mean log(1 - d_l(fake)), fakes pooled into one batch.
Tensor gan_domain_term(const Critics& critics, int l, const Tensor& real_images,
                       const std::vector<Tensor>& fake_batches);

// Sum of gan_domain_term over the three participating domains.
Tensor gan_loss(const Critics& critics, TranslationCache& cache, const FakeBatchSet& fakes);

// Non-saturating generator objective: sum over domains of mean -log d_l(fake).
Tensor gen_gan_surrogate(const Critics& critics, const FakeBatchSet& fakes);

// (cls_real, cls_fake): negative log-probability of the true domain for real
// batches and of the TARGET domain for generated batches.
std::pair<Tensor, Tensor> cls_losses(const Critics& critics, TranslationCache& cache,
                                     const FakeBatchSet& fakes);

// dual + consistency + alpha * gan
Tensor total_loss(const Tensor& dual, const Tensor& consistency, const Tensor& gan, double alpha);

// total_G = dual + consistency + alpha*gan + beta*cls_fake
// total_D = -alpha*gan + beta*cls_real
std::pair<Tensor, Tensor> stargan_split_losses(const Tensor& dual, const Tensor& consistency,
                                               const Tensor& gan, const Tensor& cls_real,
                                               const Tensor& cls_fake, double alpha, double beta);

// One (i,j|k) objective: dual + consistency + alpha * gan.
Tensor single_rotation_total(TranslationCache& cache, const Critics& critics, int i, int j,
                             int k, double alpha, const LossOptions& opts = {});

// Sum over the three rotations (i,j|k), (i,k|j), (j,k|i).
Tensor triple_total(TranslationCache& cache, const Critics& critics, int i, int j, int k,
                    double alpha, const LossOptions& opts = {});

// Scalar snapshot of one step's losses for reporting.
struct LossBundle {
    double dual = 0.0;
    double consistency = 0.0; // measured even when excluded from the objective
    double gan = 0.0;
    double cls_real = 0.0, cls_fake = 0.0;
    bool has_cls = false;
    double total = 0.0;
    double total_G = 0.0, total_D = 0.0;
};

} // namespace mpct
