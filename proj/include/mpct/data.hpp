#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mpct/common.hpp"
#include "mpct/tensor.hpp"

namespace mpct {

// Names for the 1-based contiguous domain ids used everywhere else.
struct DomainRegistry {
    int n_domains = 0;
    std::vector<std::string> names; // names[i-1] labels domain i

    // Fills missing names with "domainK"; throws ConfigError when n_domains
    // < 2 or an explicit name list has the wrong length.
    void validate();
};

struct ImageShape {
    int channels = 3;
    int height = 32;
    int width = 32;
};

// How one synthetic domain is derived from the shared base images. All
// transforms map [-1,1] images to [-1,1] images (clamping where needed).
struct SynthTransformSpec {
    enum class Kind {
        Identity,
        ChannelPermutation, // out channel c reads in channel permutation[c]
        UniformNoise,       // per-pixel i.i.d. U[-amplitude, amplitude], clamped
        StripeOverlay,      // diagonal lines blended toward white
        BrightnessShift     // additive constant, clamped
    };

    Kind kind = Kind::Identity;
    std::vector<int> permutation;  // ChannelPermutation: size = channels
    double noise_amplitude = 0.2;  // UniformNoise: in (0, 1]
    int stripe_period = 4;         // StripeOverlay: >= 2
    double stripe_intensity = 0.6; // StripeOverlay: blend weight in [0, 1]
    double shift = 0.3;            // BrightnessShift: finite
    std::uint64_t seed = 0;        // stream for the transform's own randomness
};

// One domain's images plus, for synthetic domains, the hidden alignment back
// to the shared base set: images[pos] was derived from base image
// pairing[pos]. Training code never reads `pairing`; only metrics do, to
// score against ground truth. Loaded (non-synthetic) datasets leave it empty.
struct DomainDataset {
    int domain = 0;
    std::vector<Tensor> images; // C×H×W, values in [-1,1], one shared shape
    std::vector<int> pairing;
};

// Applies one transform to a single image. rng feeds UniformNoise and is
// advanced exactly numel draws per call; other kinds ignore it. Exposed so
// metrics can realize the ground-truth mapping (e.g. the inverse channel
// permutation) that a perfect translator should match.
Tensor apply_transform(const Tensor& img, const SynthTransformSpec& spec, Rng& rng);

// Inverse spec for transforms that have one (Identity, ChannelPermutation);
// throws ConfigError for the lossy kinds.
SynthTransformSpec invert_transform(const SynthTransformSpec& spec);

// Builds one dataset per spec from a shared base set of `base_count` images:
// random rectangles and circles on plain backgrounds, colors in
// [-0.75, 0.75] with a distinct mean per channel (so channel-permuted domains
// are statistically distinguishable). Each domain applies its transform,
// records the hidden pairing, then shuffles with its own derived stream so
// domains are unaligned. Fully deterministic given (seed, specs).
std::vector<DomainDataset> synth_build(int base_count, const ImageShape& shape,
                                       const std::vector<SynthTransformSpec>& specs,
                                       std::uint64_t seed);

// 8-bit PNG in, C×H×W tensor in [-1,1] out (0 -> -1, 255 -> +1 exactly).
// Grayscale/alpha files are converted to RGB while decoding. When target_h/w
// are nonzero the image is nearest-neighbor resized to that size.
Tensor png_load(const std::string& path, int target_h = 0, int target_w = 0);

// Writes a 3×H×W tensor as an 8-bit RGB PNG, clamping to [-1,1] first.
void png_save(const std::string& path, const Tensor& chw);

// Loads every *.png in a directory (case-insensitive extension, file-name
// order) resized to shape; other files are ignored. Empty result or a file
// that fails to decode raises IoError naming the path.
DomainDataset load_image_dir(const std::string& path, const ImageShape& shape, int domain = 0);

struct Minibatch {
    int domain = 0; // 1-based
    Tensor images;  // B×C×H×W in [-1,1]; B is smaller for an epoch's final batch

    int size() const { return images.shape()[0]; }
};

// Draws shuffled minibatches from one dataset, reshuffling at the start of
// every epoch from its own rng stream. Separate domains get separate streams
// (Rng::derive with the domain index), which keeps their orders unaligned.
class MinibatchIter {
  public:
    MinibatchIter(const DomainDataset& dataset, int batch_size, Rng rng);

    Minibatch next();
    int epoch() const { return epoch_; }
    int batches_per_epoch() const;

  private:
    const DomainDataset* ds_;
    int batch_size_;
    Rng rng_;
    std::vector<int> order_;
    std::size_t cursor_ = 0;
    int epoch_ = 0;
};

// Stacks images[index] for each index into one B×C×H×W batch tensor.
Tensor stack_images(const std::vector<Tensor>& images, const std::vector<int>& indices);

// Splits a B×C×H×W batch back into per-image C×H×W tensors (values copied).
std::vector<Tensor> unstack_images(const Tensor& batch);

struct DatasetSplit {
    std::vector<DomainDataset> train, eval;
};

// Carves an eval set out of every domain. When all datasets carry pairings,
// the same base indices are held out everywhere, so each eval image has its
// rendition present in every other domain's eval set (metrics needs that to
// score against ground truth); otherwise each domain splits independently.
// Pairing rows follow their images into both halves.
DatasetSplit split_datasets(const std::vector<DomainDataset>& full, double eval_fraction,
                            std::uint64_t seed);

} // namespace mpct
