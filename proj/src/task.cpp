#include "sinklab/task.hpp"

#include "sinklab/check.hpp"

namespace sinklab {

void ToyTaskSpec::validate() const {
    SINKLAB_CHECK(symbol_vocab >= 2, "need at least two symbols");
    SINKLAB_CHECK(min_len >= 1 && max_len >= min_len, "bad transcript length range");
    SINKLAB_CHECK(audio_upsample >= 1 && video_upsample >= 1, "upsample factors must be >= 1");
    SINKLAB_CHECK(audio_noise >= 0.0, "audio noise must be non-negative");
    SINKLAB_CHECK(video_corruption >= 0.0 && video_corruption <= 1.0,
                  "corruption rate must lie in [0, 1]");
    SINKLAB_CHECK(audio_embed_dim >= 1 && video_embed_dim >= 1, "embedding widths must be >= 1");
}

ToyTask::ToyTask(const ToyTaskSpec& spec) : spec_(spec) {
    spec_.validate();
    Rng code_rng(derive_seed(spec_.seed, 0x10DE));
    audio_code_ = code_rng.gaussian_tensor({spec_.symbol_vocab, spec_.audio_embed_dim}, 1.0);
    video_code_ = code_rng.gaussian_tensor({spec_.symbol_vocab, spec_.video_embed_dim}, 1.0);
}

int64_t ToyTask::confusable(int64_t symbol) const {
    const int64_t partner = symbol ^ 1;
    return partner < spec_.symbol_vocab ? partner : symbol;
}

ToySample ToyTask::sample(Rng& rng) const {
    ToySample s;
    const int64_t len = spec_.min_len + rng.uniform_int(spec_.max_len - spec_.min_len + 1);
    for (int64_t i = 0; i < len; ++i) s.transcript.push_back(rng.uniform_int(spec_.symbol_vocab));

    s.audio = Tensor({len * spec_.audio_upsample, spec_.audio_embed_dim});
    for (int64_t i = 0; i < len; ++i) {
        const int64_t sym = s.transcript[static_cast<size_t>(i)];
        for (int64_t r = 0; r < spec_.audio_upsample; ++r) {
            double* row = s.audio.data() + (i * spec_.audio_upsample + r) * spec_.audio_embed_dim;
            for (int64_t j = 0; j < spec_.audio_embed_dim; ++j)
                row[j] = audio_code_.at(sym, j) + spec_.audio_noise * rng.gaussian();
        }
    }

    s.video = Tensor({len * spec_.video_upsample, spec_.video_embed_dim});
    for (int64_t i = 0; i < len; ++i) {
        int64_t sym = s.transcript[static_cast<size_t>(i)];
        if (rng.bernoulli(spec_.video_corruption)) {
            // re-draw uniformly within the confusable pair; at rate 1 the
            // stream carries no information distinguishing pair members
            sym = rng.bernoulli(0.5) ? confusable(sym) : sym;
        }
        for (int64_t r = 0; r < spec_.video_upsample; ++r) {
            double* row = s.video.data() + (i * spec_.video_upsample + r) * spec_.video_embed_dim;
            for (int64_t j = 0; j < spec_.video_embed_dim; ++j) row[j] = video_code_.at(sym, j);
        }
    }
    return s;
}

std::vector<ToySample> ToyTask::batch(Rng& rng, int64_t n) const {
    SINKLAB_CHECK(n >= 1, "batch size must be >= 1");
    std::vector<ToySample> out;
    out.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) out.push_back(sample(rng));
    return out;
}

}  // namespace sinklab
