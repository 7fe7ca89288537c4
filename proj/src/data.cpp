#include "mpct/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <png.h>

namespace mpct {

namespace {

double clamp_unit(double v) { return v < -1.0 ? -1.0 : (v > 1.0 ? 1.0 : v); }

void validate_spec(const SynthTransformSpec& spec, int channels) {
    switch (spec.kind) {
    case SynthTransformSpec::Kind::Identity:
        return;
    case SynthTransformSpec::Kind::ChannelPermutation: {
        if (static_cast<int>(spec.permutation.size()) != channels) {
            throw ConfigError("channel permutation has " +
                              std::to_string(spec.permutation.size()) + " entries for " +
                              std::to_string(channels) + " channels");
        }
        std::vector<bool> seen(channels, false);
        for (int p : spec.permutation) {
            if (p < 0 || p >= channels || seen[p]) {
                throw ConfigError("channel permutation is not a permutation of 0.." +
                                  std::to_string(channels - 1));
            }
            seen[p] = true;
        }
        return;
    }
    case SynthTransformSpec::Kind::UniformNoise:
        if (!(spec.noise_amplitude > 0.0 && spec.noise_amplitude <= 1.0)) {
            throw ConfigError("uniform noise amplitude must be in (0, 1]");
        }
        return;
    case SynthTransformSpec::Kind::StripeOverlay:
        if (spec.stripe_period < 2) {
            throw ConfigError("stripe period must be >= 2");
        }
        if (!(spec.stripe_intensity >= 0.0 && spec.stripe_intensity <= 1.0)) {
            throw ConfigError("stripe intensity must be in [0, 1]");
        }
        return;
    case SynthTransformSpec::Kind::BrightnessShift:
        if (!std::isfinite(spec.shift)) {
            throw ConfigError("brightness shift must be finite");
        }
        return;
    }
    throw ConfigError("unknown synthetic transform kind");
}

// Every color draw offsets channel c by mu_c, evenly spaced over [-0.5, 0.5],
// plus U[-0.25, 0.25] jitter. The offsets make the channels statistically
// distinct, so a channel permutation produces a genuinely different domain (a
// permutation of i.i.d. channels would be the same distribution and no
// classifier could tell the domains apart). Values stay within [-0.75, 0.75]
// so additive transforms have headroom before clamping.
void draw_color(std::vector<double>& color, Rng& rng) {
    const int C = static_cast<int>(color.size());
    for (int c = 0; c < C; ++c) {
        const double mu = C == 1 ? 0.0 : -0.5 + 1.0 * c / (C - 1);
        const double spread = C == 1 ? 0.75 : 0.25;
        color[c] = mu + rng.uniform(-spread, spread);
    }
}

// Random rectangles/circles over a plain background.
Tensor random_base_image(const ImageShape& shape, Rng rng) {
    const int C = shape.channels, H = shape.height, W = shape.width;
    Tensor img = Tensor::zeros({C, H, W});
    std::vector<double>& v = img.values();

    std::vector<double> color(C);
    draw_color(color, rng);
    for (int c = 0; c < C; ++c) {
        std::fill(v.begin() + c * H * W, v.begin() + (c + 1) * H * W, color[c]);
    }

    const int n_shapes = 1 + static_cast<int>(rng.below(3));
    for (int s = 0; s < n_shapes; ++s) {
        draw_color(color, rng);
        const bool circle = rng.below(2) == 1;
        if (circle) {
            const int cx = static_cast<int>(rng.below(W));
            const int cy = static_cast<int>(rng.below(H));
            const int r = 1 + static_cast<int>(rng.below(std::max(1, std::min(H, W) / 3)));
            for (int y = std::max(0, cy - r); y <= std::min(H - 1, cy + r); ++y) {
                for (int x = std::max(0, cx - r); x <= std::min(W - 1, cx + r); ++x) {
                    if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) {
                        for (int c = 0; c < C; ++c) {
                            v[(c * H + y) * W + x] = color[c];
                        }
                    }
                }
            }
        } else {
            const int x0 = static_cast<int>(rng.below(W));
            const int y0 = static_cast<int>(rng.below(H));
            const int x1 = std::min(W - 1, x0 + 1 + static_cast<int>(rng.below(std::max(1, W / 2))));
            const int y1 = std::min(H - 1, y0 + 1 + static_cast<int>(rng.below(std::max(1, H / 2))));
            for (int y = y0; y <= y1; ++y) {
                for (int x = x0; x <= x1; ++x) {
                    for (int c = 0; c < C; ++c) {
                        v[(c * H + y) * W + x] = color[c];
                    }
                }
            }
        }
    }
    return img;
}

} // namespace

void DomainRegistry::validate() {
    if (n_domains < 2) {
        throw ConfigError("at least two domains are required, got " + std::to_string(n_domains));
    }
    if (names.empty()) {
        names.resize(n_domains);
    }
    if (static_cast<int>(names.size()) != n_domains) {
        throw ConfigError("domain name list has " + std::to_string(names.size()) +
                          " entries for " + std::to_string(n_domains) + " domains");
    }
    for (int i = 0; i < n_domains; ++i) {
        if (names[i].empty()) {
            names[i] = "domain" + std::to_string(i + 1);
        }
    }
}

Tensor apply_transform(const Tensor& img, const SynthTransformSpec& spec, Rng& rng) {
    if (img.shape().size() != 3) {
        throw ShapeError("apply_transform expects a C×H×W image, got " +
                         format_shape(img.shape()));
    }
    const int C = img.shape()[0], H = img.shape()[1], W = img.shape()[2];
    validate_spec(spec, C);
    const std::vector<double>& in = img.values();
    Tensor out = Tensor::zeros(img.shape());
    std::vector<double>& o = out.values();

    switch (spec.kind) {
    case SynthTransformSpec::Kind::Identity:
        o = in;
        break;
    case SynthTransformSpec::Kind::ChannelPermutation:
        for (int c = 0; c < C; ++c) {
            const int src = spec.permutation[c];
            std::copy(in.begin() + src * H * W, in.begin() + (src + 1) * H * W,
                      o.begin() + c * H * W);
        }
        break;
    case SynthTransformSpec::Kind::UniformNoise:
        for (std::size_t i = 0; i < in.size(); ++i) {
            o[i] = clamp_unit(in[i] + rng.uniform(-spec.noise_amplitude, spec.noise_amplitude));
        }
        break;
    case SynthTransformSpec::Kind::StripeOverlay:
        for (int c = 0; c < C; ++c) {
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) {
                    const std::size_t i = (static_cast<std::size_t>(c) * H + y) * W + x;
                    o[i] = (y + x) % spec.stripe_period == 0
                               ? (1.0 - spec.stripe_intensity) * in[i] + spec.stripe_intensity
                               : in[i];
                }
            }
        }
        break;
    case SynthTransformSpec::Kind::BrightnessShift:
        for (std::size_t i = 0; i < in.size(); ++i) {
            o[i] = clamp_unit(in[i] + spec.shift);
        }
        break;
    }
    return out;
}

SynthTransformSpec invert_transform(const SynthTransformSpec& spec) {
    SynthTransformSpec inv = spec;
    switch (spec.kind) {
    case SynthTransformSpec::Kind::Identity:
        return inv;
    case SynthTransformSpec::Kind::ChannelPermutation: {
        inv.permutation.assign(spec.permutation.size(), 0);
        for (std::size_t c = 0; c < spec.permutation.size(); ++c) {
            inv.permutation[spec.permutation[c]] = static_cast<int>(c);
        }
        return inv;
    }
    default:
        throw ConfigError("transform kind has no exact inverse");
    }
}

std::vector<DomainDataset> synth_build(int base_count, const ImageShape& shape,
                                       const std::vector<SynthTransformSpec>& specs,
                                       std::uint64_t seed) {
    if (base_count < 1) {
        throw ConfigError("synth_build requires base_count >= 1");
    }
    if (specs.size() < 2) {
        throw ConfigError("synth_build needs a transform spec per domain, at least two");
    }
    if (shape.channels < 1 || shape.height < 4 || shape.width < 4) {
        throw ConfigError("synthetic images must be at least 1×4×4");
    }
    for (const auto& spec : specs) {
        validate_spec(spec, shape.channels);
    }

    std::vector<Tensor> base;
    base.reserve(base_count);
    for (int b = 0; b < base_count; ++b) {
        base.push_back(random_base_image(shape, Rng::derive(seed, "synth.base", b)));
    }

    std::vector<DomainDataset> out;
    for (std::size_t d = 0; d < specs.size(); ++d) {
        DomainDataset ds;
        ds.domain = static_cast<int>(d) + 1;
        Rng trng = Rng::derive(specs[d].seed, "synth.transform", d + 1);
        std::vector<Tensor> derived;
        derived.reserve(base_count);
        for (int b = 0; b < base_count; ++b) {
            derived.push_back(apply_transform(base[b], specs[d], trng));
        }
        std::vector<int> order(base_count);
        for (int b = 0; b < base_count; ++b) {
            order[b] = b;
        }
        Rng srng = Rng::derive(seed, "synth.shuffle", d + 1);
        srng.shuffle(order);
        for (int b = 0; b < base_count; ++b) {
            ds.images.push_back(derived[order[b]]);
            ds.pairing.push_back(order[b]);
        }
        out.push_back(std::move(ds));
    }
    return out;
}

Tensor png_load(const std::string& path, int target_h, int target_w) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        std::string msg = image.message;
        png_image_free(&image);
        throw IoError("cannot read PNG " + path + ": " + msg);
    }
    image.format = PNG_FORMAT_RGB;
    const int src_h = static_cast<int>(image.height);
    const int src_w = static_cast<int>(image.width);
    std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw IoError("cannot decode PNG " + path + ": " + msg);
    }

    const int H = target_h > 0 ? target_h : src_h;
    const int W = target_w > 0 ? target_w : src_w;
    Tensor out = Tensor::zeros({3, H, W});
    std::vector<double>& v = out.values();
    for (int y = 0; y < H; ++y) {
        const int sy = H == src_h ? y : y * src_h / H;
        for (int x = 0; x < W; ++x) {
            const int sx = W == src_w ? x : x * src_w / W;
            for (int c = 0; c < 3; ++c) {
                const unsigned char px = buf[(static_cast<std::size_t>(sy) * src_w + sx) * 3 + c];
                v[(static_cast<std::size_t>(c) * H + y) * W + x] = px / 255.0 * 2.0 - 1.0;
            }
        }
    }
    return out;
}

void png_save(const std::string& path, const Tensor& chw) {
    if (chw.shape().size() != 3 || chw.shape()[0] != 3) {
        throw ShapeError("png_save expects a 3×H×W tensor, got " + format_shape(chw.shape()));
    }
    const int H = chw.shape()[1], W = chw.shape()[2];
    const std::vector<double>& v = chw.values();
    std::vector<unsigned char> buf(static_cast<std::size_t>(H) * W * 3);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double unit = (clamp_unit(v[(static_cast<std::size_t>(c) * H + y) * W + x]) +
                                     1.0) / 2.0;
                buf[(static_cast<std::size_t>(y) * W + x) * 3 + c] =
                    static_cast<unsigned char>(std::lround(unit * 255.0));
            }
        }
    }

    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(W);
    image.height = static_cast<png_uint_32>(H);
    image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw IoError("cannot write PNG " + path + ": " + msg);
    }
}

DomainDataset load_image_dir(const std::string& path, const ImageShape& shape, int domain) {
    if (shape.channels != 3) {
        throw ConfigError("PNG ingestion produces 3-channel images; requested " +
                          std::to_string(shape.channels));
    }
    namespace fs = std::filesystem;
    std::vector<fs::path> files;
    try {
        for (const auto& entry : fs::directory_iterator(path)) {
            if (!entry.is_regular_file()) {
                continue;
            }
            std::string ext = entry.path().extension().string();
            std::transform(ext.begin(), ext.end(), ext.begin(),
                           [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
            if (ext == ".png") {
                files.push_back(entry.path());
            }
        }
    } catch (const fs::filesystem_error& e) {
        throw IoError("cannot list image directory " + path + ": " + e.what());
    }
    if (files.empty()) {
        throw IoError("no PNG files found in " + path);
    }
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });

    DomainDataset ds;
    ds.domain = domain;
    for (const auto& f : files) {
        ds.images.push_back(png_load(f.string(), shape.height, shape.width));
    }
    return ds;
}

Tensor stack_images(const std::vector<Tensor>& images, const std::vector<int>& indices) {
    if (indices.empty()) {
        throw ConfigError("cannot stack an empty batch");
    }
    const std::vector<int>& s0 = images.at(indices[0]).shape();
    if (s0.size() != 3) {
        throw ShapeError("stack_images expects C×H×W images");
    }
    Tensor out = Tensor::zeros({static_cast<int>(indices.size()), s0[0], s0[1], s0[2]});
    const std::size_t per = images[indices[0]].numel();
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const Tensor& img = images.at(indices[b]);
        if (img.shape() != s0) {
            throw ShapeError("images in one batch must share a shape");
        }
        std::copy(img.values().begin(), img.values().end(), out.values().begin() + b * per);
    }
    return out;
}

std::vector<Tensor> unstack_images(const Tensor& batch) {
    if (batch.shape().size() != 4) {
        throw ShapeError("unstack_images expects a B×C×H×W batch, got " +
                         format_shape(batch.shape()));
    }
    const int B = batch.shape()[0];
    const std::vector<int> img_shape{batch.shape()[1], batch.shape()[2], batch.shape()[3]};
    const std::size_t per = batch.numel() / B;
    std::vector<Tensor> out;
    out.reserve(B);
    for (int b = 0; b < B; ++b) {
        Tensor img = Tensor::zeros(img_shape);
        std::copy(batch.values().begin() + b * per, batch.values().begin() + (b + 1) * per,
                  img.values().begin());
        out.push_back(std::move(img));
    }
    return out;
}

DatasetSplit split_datasets(const std::vector<DomainDataset>& full, double eval_fraction,
                            std::uint64_t seed) {
    if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) {
        throw ConfigError("eval_fraction must lie strictly between 0 and 1");
    }
    if (full.empty()) {
        throw ConfigError("no datasets to split");
    }
    bool all_paired = true;
    for (const auto& ds : full) {
        if (ds.images.empty()) {
            throw ConfigError("cannot split an empty dataset (domain " +
                              std::to_string(ds.domain) + ")");
        }
        all_paired = all_paired && ds.pairing.size() == ds.images.size();
    }
    if (all_paired) {
        for (const auto& ds : full) {
            if (ds.images.size() != full[0].images.size()) {
                throw ConfigError("paired datasets must share one base count");
            }
        }
    }

    DatasetSplit out;
    std::vector<char> base_is_eval;
    if (all_paired) {
        const int B = static_cast<int>(full[0].images.size());
        std::vector<int> order(B);
        for (int b = 0; b < B; ++b) {
            order[b] = b;
        }
        Rng rng = Rng::derive(seed, "split.base");
        rng.shuffle(order);
        const int k = std::max(1, static_cast<int>(std::floor(eval_fraction * B)));
        base_is_eval.assign(B, 0);
        for (int i = 0; i < k; ++i) {
            base_is_eval[order[i]] = 1;
        }
    }

    for (const auto& ds : full) {
        DomainDataset tr, ev;
        tr.domain = ev.domain = ds.domain;
        std::vector<char> to_eval(ds.images.size(), 0);
        if (all_paired) {
            for (std::size_t p = 0; p < ds.images.size(); ++p) {
                to_eval[p] = base_is_eval[ds.pairing[p]];
            }
        } else {
            const int n = static_cast<int>(ds.images.size());
            std::vector<int> order(n);
            for (int p = 0; p < n; ++p) {
                order[p] = p;
            }
            Rng rng = Rng::derive(seed, "split.pos", static_cast<std::uint64_t>(ds.domain));
            rng.shuffle(order);
            const int k = std::max(1, static_cast<int>(std::floor(eval_fraction * n)));
            for (int i = 0; i < k; ++i) {
                to_eval[order[i]] = 1;
            }
        }
        for (std::size_t p = 0; p < ds.images.size(); ++p) {
            DomainDataset& dst = to_eval[p] ? ev : tr;
            dst.images.push_back(ds.images[p]);
            if (!ds.pairing.empty()) {
                dst.pairing.push_back(ds.pairing[p]);
            }
        }
        if (tr.images.empty()) {
            throw ConfigError("eval fraction leaves no training images for domain " +
                              std::to_string(ds.domain));
        }
        out.train.push_back(std::move(tr));
        out.eval.push_back(std::move(ev));
    }
    return out;
}

MinibatchIter::MinibatchIter(const DomainDataset& dataset, int batch_size, Rng rng)
    : ds_(&dataset), batch_size_(batch_size), rng_(rng) {
    if (batch_size < 1) {
        throw ConfigError("batch_size must be >= 1");
    }
    if (dataset.images.empty()) {
        throw ConfigError("cannot iterate an empty dataset");
    }
    order_.resize(dataset.images.size());
    for (std::size_t i = 0; i < order_.size(); ++i) {
        order_[i] = static_cast<int>(i);
    }
}

int MinibatchIter::batches_per_epoch() const {
    const int n = static_cast<int>(ds_->images.size());
    return (n + batch_size_ - 1) / batch_size_;
}

Minibatch MinibatchIter::next() {
    if (cursor_ == 0) {
        rng_.shuffle(order_);
    }
    const std::size_t take = std::min<std::size_t>(batch_size_, order_.size() - cursor_);
    std::vector<int> indices(order_.begin() + cursor_, order_.begin() + cursor_ + take);
    cursor_ += take;
    if (cursor_ >= order_.size()) {
        cursor_ = 0;
        epoch_ += 1;
    }
    return Minibatch{ds_->domain, stack_images(ds_->images, indices)};
}

} // namespace mpct
