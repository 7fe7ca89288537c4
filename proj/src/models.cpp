#include "mpct/models.hpp"

#include <cmath>
#include <memory>

#include "mpct/ops.hpp"

namespace mpct {

namespace O = ops;
using detail::ConvLayer;
using detail::NormLayer;
using detail::ResBlock;
using detail::TConvLayer;

std::vector<double> one_hot(int domain_index, int n_domains) {
    if (domain_index < 1 || domain_index > n_domains) {
        throw ConfigError("domain index " + std::to_string(domain_index) + " outside 1.." +
                          std::to_string(n_domains));
    }
    std::vector<double> v(static_cast<std::size_t>(n_domains), 0.0);
    v[domain_index - 1] = 1.0;
    return v;
}

Tensor domain_label_channels(int domain_index, int n_domains, int batch, int height, int width) {
    const std::vector<double> oh = one_hot(domain_index, n_domains);
    Tensor t = Tensor::zeros({batch, n_domains, height, width});
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    for (int n = 0; n < batch; ++n) {
        for (int c = 0; c < n_domains; ++c) {
            if (oh[c] == 0.0) {
                continue;
            }
            double* p = t.values().data() + (static_cast<std::size_t>(n) * n_domains + c) * plane;
            std::fill(p, p + plane, 1.0);
        }
    }
    return t;
}

namespace {

Tensor init_normal(Rng& rng, const std::vector<int>& shape, double stddev) {
    Tensor t = Tensor::zeros(shape);
    for (auto& v : t.values()) {
        v = stddev * rng.normal();
    }
    return t;
}

// Builder tracking the per-layer seed stream and parameter registration.
struct LayerBuilder {
    std::uint64_t seed;
    std::string prefix;
    ParamSet* params;
    int layer = 0;

    Rng next_rng() { return Rng::derive(seed, "layer", static_cast<std::uint64_t>(layer++)); }

    ConvLayer conv(int cin, int cout, int stride, const std::string& name,
                   double stddev_override = -1.0) {
        Rng rng = next_rng();
        // fan-in scaled init for the relu trunk unless a stddev is forced
        const double stddev =
            stddev_override > 0.0 ? stddev_override : std::sqrt(2.0 / (cin * 9.0));
        ConvLayer l;
        l.w = init_normal(rng, {cout, cin, 3, 3}, stddev);
        l.b = Tensor::zeros({cout});
        l.stride = stride;
        l.pad = 1;
        params->add(prefix + name + ".w", l.w);
        params->add(prefix + name + ".b", l.b);
        return l;
    }

    TConvLayer tconv(int cin, int cout, const std::string& name) {
        Rng rng = next_rng();
        TConvLayer l;
        l.w = init_normal(rng, {cin, cout, 3, 3}, std::sqrt(2.0 / (cin * 9.0)));
        l.b = Tensor::zeros({cout});
        params->add(prefix + name + ".w", l.w);
        params->add(prefix + name + ".b", l.b);
        return l;
    }

    NormLayer norm(int ch, const std::string& name) {
        NormLayer l;
        l.gamma = Tensor::full({ch}, 1.0);
        l.beta = Tensor::zeros({ch});
        params->add(prefix + name + ".g", l.gamma);
        params->add(prefix + name + ".b", l.beta);
        return l;
    }

    // Small-stddev head init keeps fresh discriminators near prob 0.5 and
    // fresh classifiers near uniform.
    void head(int fan_in, int width, const std::string& name, Tensor& w, Tensor& b) {
        Rng rng = next_rng();
        w = init_normal(rng, {fan_in, width}, 0.02);
        b = Tensor::zeros({width});
        params->add(prefix + name + ".w", w);
        params->add(prefix + name + ".b", b);
    }
};

} // namespace

Generator::Generator(const GeneratorSpec& spec, bool conditional, int n_domains,
                     std::uint64_t seed, const std::string& name_prefix)
    : spec_(spec), conditional_(conditional), n_domains_(n_domains) {
    if (spec.image_channels < 1 || spec.base_width < 1 || spec.n_downsample < 0 ||
        spec.n_res_blocks < 0) {
        throw ConfigError("generator spec has non-positive extents");
    }
    if (conditional && n_domains < 2) {
        throw ConfigError("conditional generator needs at least 2 domains");
    }
    const int in_ch = spec.image_channels + (conditional ? n_domains : 0);
    const int w = spec.base_width;
    LayerBuilder b{seed, name_prefix, &params_};

    conv_in_ = b.conv(in_ch, w, 1, "conv_in");
    norm_in_ = b.norm(w, "norm_in");
    for (int d = 1; d <= spec.n_downsample; ++d) {
        downs_.push_back(b.conv(w, w, 2, "down" + std::to_string(d)));
        down_norms_.push_back(b.norm(w, "down" + std::to_string(d) + "_norm"));
    }
    for (int r = 1; r <= spec.n_res_blocks; ++r) {
        const std::string base = "res" + std::to_string(r);
        ResBlock blk;
        blk.c1 = b.conv(w, w, 1, base + ".c1");
        blk.n1 = b.norm(w, base + ".n1");
        blk.c2 = b.conv(w, w, 1, base + ".c2");
        blk.n2 = b.norm(w, base + ".n2");
        blocks_.push_back(std::move(blk));
    }
    for (int u = 1; u <= spec.n_downsample; ++u) {
        ups_.push_back(b.tconv(w, w, "up" + std::to_string(u)));
        up_norms_.push_back(b.norm(w, "up" + std::to_string(u) + "_norm"));
    }
    // balanced-variance init for the layer feeding tanh
    conv_out_ = b.conv(w, spec.image_channels, 1, "conv_out",
                       std::sqrt(2.0 / ((w + spec.image_channels) * 9.0)));
}

Tensor Generator::run(const Tensor& input) const {
    Tensor h = O::relu(O::instance_norm(O::conv2d(input, conv_in_.w, conv_in_.b, 1, 1),
                                        norm_in_.gamma, norm_in_.beta));
    for (std::size_t d = 0; d < downs_.size(); ++d) {
        h = O::relu(O::instance_norm(O::conv2d(h, downs_[d].w, downs_[d].b, 2, 1),
                                     down_norms_[d].gamma, down_norms_[d].beta));
    }
    for (const ResBlock& blk : blocks_) {
        Tensor t = O::relu(O::instance_norm(O::conv2d(h, blk.c1.w, blk.c1.b, 1, 1),
                                            blk.n1.gamma, blk.n1.beta));
        t = O::instance_norm(O::conv2d(t, blk.c2.w, blk.c2.b, 1, 1), blk.n2.gamma, blk.n2.beta);
        h = O::add(h, t);
    }
    for (std::size_t u = 0; u < ups_.size(); ++u) {
        h = O::relu(O::instance_norm(O::transposed_conv2d(h, ups_[u].w, ups_[u].b, 2, 1, 1),
                                     up_norms_[u].gamma, up_norms_[u].beta));
    }
    return O::tanh(O::conv2d(h, conv_out_.w, conv_out_.b, 1, 1));
}

Tensor Generator::forward(const Tensor& x) const {
    if (conditional_) {
        throw ConfigError("conditional generator requires a target domain");
    }
    return run(x);
}

Tensor Generator::forward(const Tensor& x, int target_domain) const {
    if (!conditional_) {
        throw ConfigError("pairwise generator takes no target domain");
    }
    if (x.shape().size() != 4) {
        throw ShapeError("generator input must be rank 4, got " + format_shape(x.shape()));
    }
    Tensor labels = domain_label_channels(target_domain, n_domains_, x.shape()[0], x.shape()[2],
                                          x.shape()[3]);
    return run(O::concat_channels({x, labels}));
}

std::size_t Generator::param_count() const {
    std::size_t n = 0;
    for (const auto& it : params_.items()) {
        n += it.tensor.numel();
    }
    return n;
}

Discriminator::Discriminator(const DiscriminatorSpec& spec, std::uint64_t seed,
                             const std::string& name_prefix)
    : spec_(spec) {
    if (spec.image_channels < 1 || spec.width < 1 || spec.n_layers < 1 || spec.image_size < 1) {
        throw ConfigError("discriminator spec has non-positive extents");
    }
    if (spec.cls_head && spec.n_domains < 2) {
        throw ConfigError("classification head needs at least 2 domains");
    }
    LayerBuilder b{seed, name_prefix, &params_};
    int ch = spec.image_channels;
    int size = spec.image_size;
    for (int l = 1; l <= spec.n_layers; ++l) {
        convs_.push_back(b.conv(ch, spec.width, 2, "conv" + std::to_string(l)));
        ch = spec.width;
        size = (size + 2 - 3) / 2 + 1; // stride-2 3x3 same-padded output size
        if (size < 1) {
            throw ConfigError("discriminator stack collapses below 1 pixel");
        }
    }
    const int flat = spec.width * size * size;
    b.head(flat, 1, "adv", adv_w_, adv_b_);
    if (spec.cls_head) {
        b.head(flat, spec.n_domains, "cls", cls_w_, cls_b_);
    }
}

Tensor Discriminator::features(const Tensor& x) const {
    if (x.shape().size() != 4 || x.shape()[1] != spec_.image_channels ||
        x.shape()[2] != spec_.image_size || x.shape()[3] != spec_.image_size) {
        throw ShapeError("discriminator expects (B," + std::to_string(spec_.image_channels) +
                         "," + std::to_string(spec_.image_size) + "," +
                         std::to_string(spec_.image_size) + "), got " + format_shape(x.shape()));
    }
    Tensor h = x;
    for (const ConvLayer& c : convs_) {
        h = O::relu(O::conv2d(h, c.w, c.b, 2, 1));
    }
    return O::flatten_rows(h);
}

DiscOutput Discriminator::forward(const Tensor& x) const {
    Tensor f = features(x);
    DiscOutput out;
    out.real_prob = O::sigmoid(O::add_bias_rows(O::matmul(f, adv_w_), adv_b_));
    if (spec_.cls_head) {
        out.cls_logits = O::add_bias_rows(O::matmul(f, cls_w_), cls_b_);
    }
    return out;
}

namespace {

void require_pair(int i, int j, int n) {
    if (i < 1 || i > n || j < 1 || j > n) {
        throw ConfigError("domain pair (" + std::to_string(i) + "," + std::to_string(j) +
                          ") outside 1.." + std::to_string(n));
    }
    if (i == j) {
        throw ConfigError("translation requires distinct domains, got (" + std::to_string(i) +
                          "," + std::to_string(j) + ")");
    }
}

} // namespace

TranslatorBank::TranslatorBank(const GeneratorSpec& spec, BankMode mode, int n_domains,
                               std::uint64_t seed)
    : mode_(mode), n_domains_(n_domains) {
    if (n_domains < 2) {
        throw ConfigError("translator bank needs at least 2 domains");
    }
    if (mode == BankMode::Pairwise) {
        gens_.resize(static_cast<std::size_t>(n_domains) * n_domains);
        for (int i = 1; i <= n_domains; ++i) {
            for (int j = 1; j <= n_domains; ++j) {
                if (i == j) {
                    continue;
                }
                const std::size_t idx =
                    static_cast<std::size_t>(i - 1) * n_domains + (j - 1);
                const std::string prefix =
                    "gen." + std::to_string(i) + "-" + std::to_string(j) + ".";
                gens_[idx] = std::make_unique<Generator>(
                    spec, false, n_domains, Rng::derive(seed, "generator", idx).next_u64(),
                    prefix);
                params_.merge(gens_[idx]->params());
            }
        }
    } else {
        gens_.resize(1);
        gens_[0] = std::make_unique<Generator>(
            spec, true, n_domains, Rng::derive(seed, "generator", 0).next_u64(), "gen.shared.");
        params_.merge(gens_[0]->params());
    }
}

Tensor TranslatorBank::translate(int i, int j, const Tensor& x) const {
    require_pair(i, j, n_domains_);
    if (mode_ == BankMode::Pairwise) {
        const auto& g = gens_[static_cast<std::size_t>(i - 1) * n_domains_ + (j - 1)];
        if (!g) {
            throw ConfigError("no generator registered for pair (" + std::to_string(i) + "," +
                              std::to_string(j) + ")");
        }
        return g->forward(x);
    }
    return gens_[0]->forward(x, j);
}

Generator& TranslatorBank::pair_generator(int i, int j) {
    require_pair(i, j, n_domains_);
    if (mode_ != BankMode::Pairwise) {
        throw ConfigError("pair_generator() on a conditional bank");
    }
    return *gens_[static_cast<std::size_t>(i - 1) * n_domains_ + (j - 1)];
}

Generator& TranslatorBank::shared_generator() {
    if (mode_ != BankMode::Conditional) {
        throw ConfigError("shared_generator() on a pairwise bank");
    }
    return *gens_[0];
}

CriticSet::CriticSet(const DiscriminatorSpec& spec, BankMode mode, int n_domains,
                     std::uint64_t seed)
    : mode_(mode), n_domains_(n_domains) {
    if (n_domains < 2) {
        throw ConfigError("critic set needs at least 2 domains");
    }
    if (mode == BankMode::Pairwise) {
        for (int l = 1; l <= n_domains; ++l) {
            DiscriminatorSpec s = spec;
            s.cls_head = false;
            discs_.push_back(std::make_unique<Discriminator>(
                s, Rng::derive(seed, "critic", static_cast<std::uint64_t>(l - 1)).next_u64(),
                "disc." + std::to_string(l) + "."));
            params_.merge(discs_.back()->params());
        }
    } else {
        DiscriminatorSpec s = spec;
        s.cls_head = true;
        s.n_domains = n_domains;
        discs_.push_back(std::make_unique<Discriminator>(
            s, Rng::derive(seed, "critic", 0).next_u64(), "disc.shared."));
        params_.merge(discs_[0]->params());
    }
}

Tensor CriticSet::real_prob(int l, const Tensor& x) const {
    if (l < 1 || l > n_domains_) {
        throw ConfigError("domain " + std::to_string(l) + " outside 1.." +
                          std::to_string(n_domains_));
    }
    if (mode_ == BankMode::Pairwise) {
        return discs_[static_cast<std::size_t>(l - 1)]->forward(x).real_prob;
    }
    return discs_[0]->forward(x).real_prob;
}

Tensor CriticSet::cls_logits(const Tensor& x) const {
    if (mode_ != BankMode::Conditional) {
        throw ConfigError("classification head only exists in conditional mode");
    }
    return discs_[0]->forward(x).cls_logits;
}

Discriminator& CriticSet::domain_discriminator(int l) {
    if (mode_ == BankMode::Conditional) {
        return *discs_[0];
    }
    if (l < 1 || l > n_domains_) {
        throw ConfigError("domain " + std::to_string(l) + " outside 1.." +
                          std::to_string(n_domains_));
    }
    return *discs_[static_cast<std::size_t>(l - 1)];
}

Tensor IdentityTranslator::translate(int i, int j, const Tensor& x) const {
    require_pair(i, j, n_);
    return x;
}

Tensor ConstantCritics::real_prob(int l, const Tensor& x) const {
    if (l < 1 || l > n_) {
        throw ConfigError("domain " + std::to_string(l) + " outside 1.." + std::to_string(n_));
    }
    return Tensor::full({x.shape()[0], 1}, prob_);
}

Tensor ConstantCritics::cls_logits(const Tensor& x) const {
    if (!with_cls_) {
        throw ConfigError("constant critics built without a classification head");
    }
    return Tensor::zeros({x.shape()[0], n_});
}

} // namespace mpct
