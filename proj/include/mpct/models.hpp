#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mpct/tensor.hpp"

namespace mpct {

// One-hot domain label broadcast to constant image planes: plane
// (domain_index-1) is all ones, the rest zeros. Domain ids are 1-based.
std::vector<double> one_hot(int domain_index, int n_domains);
Tensor domain_label_channels(int domain_index, int n_domains, int batch, int height, int width);

struct GeneratorSpec {
    int image_channels = 3;
    int base_width = 16;
    int n_downsample = 2; // stride-2 conv stages; upsampling mirrors this count
    int n_res_blocks = 2;
};

struct DiscriminatorSpec {
    int image_channels = 3;
    int width = 16;
    int n_layers = 3; // stride-2 conv stages before the heads
    int image_size = 32;
    bool cls_head = false;
    int n_domains = 0; // classification head width; required when cls_head
};

namespace detail {

struct ConvLayer {
    Tensor w, b;
    int stride = 1, pad = 1;
};

struct TConvLayer {
    Tensor w, b;
    int stride = 2, pad = 1, out_pad = 1;
};

struct NormLayer {
    Tensor gamma, beta;
};

struct ResBlock {
    ConvLayer c1, c2;
    NormLayer n1, n2;
};

} // namespace detail

// Image-to-image network: in-conv, strided downsampling, residual trunk,
// transposed-conv upsampling, out-conv, final tanh. All hidden stages share
// one flat channel width. In conditional mode the input grows by n_domains
// one-hot label planes and a single instance serves every domain pair.
class Generator {
  public:
    Generator(const GeneratorSpec& spec, bool conditional, int n_domains, std::uint64_t seed,
              const std::string& name_prefix = "");

    // Pairwise form; throws if this generator is conditional.
    Tensor forward(const Tensor& x) const;
    // Conditional form with a 1-based target domain; throws if pairwise.
    Tensor forward(const Tensor& x, int target_domain) const;

    const ParamSet& params() const { return params_; }
    bool conditional() const { return conditional_; }
    const GeneratorSpec& spec() const { return spec_; }
    std::size_t param_count() const;

  private:
    Tensor run(const Tensor& input) const;

    GeneratorSpec spec_;
    bool conditional_;
    int n_domains_;
    detail::ConvLayer conv_in_;
    detail::NormLayer norm_in_;
    std::vector<detail::ConvLayer> downs_;
    std::vector<detail::NormLayer> down_norms_;
    std::vector<detail::ResBlock> blocks_;
    std::vector<detail::TConvLayer> ups_;
    std::vector<detail::NormLayer> up_norms_;
    detail::ConvLayer conv_out_;
    ParamSet params_;
};

struct DiscOutput {
    Tensor real_prob;  // (B,1), strictly inside (0,1)
    Tensor cls_logits; // (B,N) when the classification head exists, else unset
};

// Strided conv stack (no normalization), flatten, sigmoid adversarial head,
// optional domain-classification head.
class Discriminator {
  public:
    Discriminator(const DiscriminatorSpec& spec, std::uint64_t seed,
                  const std::string& name_prefix = "");

    DiscOutput forward(const Tensor& x) const;
    // Penultimate representation (B, flat) before the heads; metrics fit
    // feature statistics on this.
    Tensor features(const Tensor& x) const;

    const ParamSet& params() const { return params_; }
    const DiscriminatorSpec& spec() const { return spec_; }

  private:
    DiscriminatorSpec spec_;
    std::vector<detail::ConvLayer> convs_;
    Tensor adv_w_, adv_b_;
    Tensor cls_w_, cls_b_;
    ParamSet params_;
};

// Minimal translation interface the loss layer is written against.
class Translator {
  public:
    virtual ~Translator() = default;
    // Translate a batch from domain i to domain j (1-based, i != j).
    virtual Tensor translate(int i, int j, const Tensor& x) const = 0;
    virtual int n_domains() const = 0;
};

// Minimal discrimination interface the loss layer is written against.
class Critics {
  public:
    virtual ~Critics() = default;
    // Probability that x is a natural image of domain l. (B,1).
    virtual Tensor real_prob(int l, const Tensor& x) const = 0;
    virtual bool has_cls() const = 0;
    // Domain logits (B,N); throws when has_cls() is false.
    virtual Tensor cls_logits(const Tensor& x) const = 0;
    virtual int n_domains() const = 0;
};

enum class BankMode { Pairwise, Conditional };

// Either N(N-1) dedicated generators, one per ordered pair, or one shared
// label-conditioned generator.
class TranslatorBank : public Translator {
  public:
    TranslatorBank(const GeneratorSpec& spec, BankMode mode, int n_domains, std::uint64_t seed);

    Tensor translate(int i, int j, const Tensor& x) const override;
    int n_domains() const override { return n_domains_; }
    BankMode mode() const { return mode_; }

    Generator& pair_generator(int i, int j);
    Generator& shared_generator();

    // Every parameter of every generator, in a fixed canonical order.
    const ParamSet& params() const { return params_; }

  private:
    BankMode mode_;
    int n_domains_;
    std::vector<std::unique_ptr<Generator>> gens_; // flat (i-1)*N+(j-1) in pairwise mode
    ParamSet params_;
};

// Either one discriminator per domain (no classification head) or a single
// shared discriminator whose classification head separates the domains.
class CriticSet : public Critics {
  public:
    CriticSet(const DiscriminatorSpec& spec, BankMode mode, int n_domains, std::uint64_t seed);

    Tensor real_prob(int l, const Tensor& x) const override;
    bool has_cls() const override { return mode_ == BankMode::Conditional; }
    Tensor cls_logits(const Tensor& x) const override;
    int n_domains() const override { return n_domains_; }
    BankMode mode() const { return mode_; }

    Discriminator& domain_discriminator(int l);

    const ParamSet& params() const { return params_; }

  private:
    BankMode mode_;
    int n_domains_;
    std::vector<std::unique_ptr<Discriminator>> discs_;
    ParamSet params_;
};

// Test double: every translation is the input itself, so round trips and
// alternative paths agree exactly.
class IdentityTranslator : public Translator {
  public:
    explicit IdentityTranslator(int n) : n_(n) {}
    Tensor translate(int i, int j, const Tensor& x) const override;
    int n_domains() const override { return n_; }

  private:
    int n_;
};

// Test double: fixed probability on every image, uniform class logits.
class ConstantCritics : public Critics {
  public:
    ConstantCritics(int n, double prob = 0.5, bool with_cls = true)
        : n_(n), prob_(prob), with_cls_(with_cls) {}
    Tensor real_prob(int l, const Tensor& x) const override;
    bool has_cls() const override { return with_cls_; }
    Tensor cls_logits(const Tensor& x) const override;
    int n_domains() const override { return n_; }

  private:
    int n_;
    double prob_;
    bool with_cls_;
};

// Checkpoint container staged fully in memory before any model is touched.
struct CheckpointData {
    std::uint32_t version = 1;
    int n_domains = 0;
    BankMode mode = BankMode::Pairwise;
    std::vector<std::pair<std::string, Tensor>> params;
};

void checkpoint_save(const std::string& path, const ParamSet& params, int n_domains,
                     BankMode mode);
CheckpointData checkpoint_read(const std::string& path);
// Validates domain count, mode, and the full name/shape inventory before
// copying a single value, so a failed load leaves target untouched.
void checkpoint_apply(const CheckpointData& data, ParamSet& target, int expect_n_domains,
                      BankMode expect_mode);

} // namespace mpct
