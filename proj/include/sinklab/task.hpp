#pragma once

#include <cstdint>
#include <vector>

#include "sinklab/rng.hpp"
#include "sinklab/tensor.hpp"

namespace sinklab {

// Synthetic multimodal transduction task. Both streams of a sample derive from
// one latent transcript: the audio stream repeats each symbol's codebook vector
// `audio_upsample` times plus Gaussian noise; the video stream does the same at
// `video_upsample` but may re-draw a symbol uniformly within its confusable
// pair first (mimicking lip-reading ambiguity).
struct ToyTaskSpec {
    int64_t symbol_vocab = 24;
    int64_t min_len = 6;
    int64_t max_len = 12;
    int64_t audio_upsample = 16;
    double audio_noise = 0.05;
    int64_t video_upsample = 5;
    double video_corruption = 0.3;
    int64_t audio_embed_dim = 32;
    int64_t video_embed_dim = 24;
    uint64_t seed = 1234;  // codebook seed, independent of the batch stream

    void validate() const;
};

struct ToySample {
    std::vector<int64_t> transcript;  // symbols in [0, symbol_vocab)
    Tensor audio;                     // (len * audio_upsample) × audio_embed_dim
    Tensor video;                     // (len * video_upsample) × video_embed_dim
};

class ToyTask {
public:
    explicit ToyTask(const ToyTaskSpec& spec);

    ToySample sample(Rng& rng) const;
    std::vector<ToySample> batch(Rng& rng, int64_t n) const;

    // Pair partner of a symbol: {0,1}, {2,3}, ...; an unpaired trailing symbol
    // maps to itself.
    int64_t confusable(int64_t symbol) const;

    const ToyTaskSpec& spec() const { return spec_; }
    const Tensor& audio_codebook() const { return audio_code_; }
    const Tensor& video_codebook() const { return video_code_; }

private:
    ToyTaskSpec spec_;
    Tensor audio_code_;  // symbol_vocab × audio_embed_dim
    Tensor video_code_;
};

}  // namespace sinklab
