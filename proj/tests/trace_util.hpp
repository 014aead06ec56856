#pragma once

// Shared fixture builders for the analysis and acceptance suites.

#include <vector>

#include "sinklab/model.hpp"
#include "sinklab/rng.hpp"

namespace sinklab::testutil {

// Synthetic ForwardTrace with valid row-stochastic causal attention maps and
// random hidden states / contributions. Not consistent with any real model;
// the pure diagnostics must not care.
inline ForwardTrace make_random_trace(Rng& rng, int64_t layers, int64_t n, int64_t heads,
                                      int64_t d) {
    ForwardTrace tr;
    tr.layers = layers;
    tr.seq_len = n;
    tr.heads = heads;
    tr.d_model = d;
    tr.roles.assign(static_cast<size_t>(n), Role::Target);
    tr.roles[0] = Role::Bos;
    tr.h0 = rng.gaussian_tensor({n, d}, 1.0);
    for (int64_t l = 0; l < layers; ++l) {
        tr.hidden.push_back(rng.gaussian_tensor({n, d}, 1.0));
        tr.attn_out.push_back(rng.gaussian_tensor({n, d}, 1.0));
        tr.mlp_out.push_back(rng.gaussian_tensor({n, d}, 1.0));
        std::vector<Tensor> maps;
        for (int64_t h = 0; h < heads; ++h) {
            Tensor a({n, n});
            for (int64_t i = 0; i < n; ++i) {
                double z = 0.0;
                for (int64_t j = 0; j <= i; ++j) {
                    a.at(i, j) = rng.uniform() + 0.05;
                    z += a.at(i, j);
                }
                for (int64_t j = 0; j <= i; ++j) a.at(i, j) /= z;
            }
            maps.push_back(std::move(a));
        }
        tr.attn.push_back(std::move(maps));
    }
    return tr;
}

// A model whose blocks are exact identities (all projection weights zero), so
// hidden states at every layer equal the crafted input embeddings. Embedding
// geometry plants: BOS carrying one dominant feature, a BOS-aligned token at
// position 2 (the sink), a small spread token at position 1, and a large
// spread token at position 4 whose per-feature magnitudes sit below the
// massive-activation threshold until it is rotated onto BOS.
struct PlantedFixture {
    ModelConfig cfg;
    ModelParams params;
    SequenceSpec seq;
    int64_t sink_token = 2;
    int64_t neighbor_token = 1;  // non-sink rotation target for the sink
    int64_t spread_token = 4;    // Eq.-9 subject: big norm, flat direction
    int64_t massive_feature = 3;
    std::vector<int64_t> planted_sinks = {0, 2};
};

inline PlantedFixture make_planted_fixture() {
    PlantedFixture fx;
    fx.cfg.layers = 4;
    fx.cfg.d_model = 16;
    fx.cfg.heads = 2;
    fx.cfg.d_ff = 8;
    fx.cfg.vocab = tok::kSymbolBase + 8;
    fx.cfg.max_seq = 32;

    Rng rng(4242);
    fx.params = ModelParams::init(fx.cfg, rng);
    for (auto& l : fx.params.layers) {
        l.wq = Tensor::zeros({16, 16});
        l.wk = Tensor::zeros({16, 16});
        l.wv = Tensor::zeros({16, 16});
        l.wo = Tensor::zeros({16, 16});
        l.w_gate = Tensor::zeros({16, 8});
        l.w_up = Tensor::zeros({16, 8});
        l.w_down = Tensor::zeros({8, 16});
    }
    Tensor& emb = fx.params.tok_embed;
    for (int64_t r = 0; r < fx.cfg.vocab; ++r)
        for (int64_t j = 0; j < 16; ++j) emb.at(r, j) = 0.05 * rng.gaussian();
    auto set_row = [&](int64_t row, const std::function<double(int64_t)>& f) {
        for (int64_t j = 0; j < 16; ++j) emb.at(row, j) = f(j);
    };
    const int64_t mf = fx.massive_feature;
    set_row(tok::kBos, [&](int64_t j) { return j == mf ? 120.0 : 0.0; });
    // position 1 <- symbol 0 (id 7): small spread vector
    set_row(tok::kSymbolBase + 0, [&](int64_t j) { return j % 2 == 0 ? 1.2 : -1.2; });
    // position 2 <- symbol 1 (id 8): BOS-aligned spike plus faint noise
    set_row(tok::kSymbolBase + 1,
            [&](int64_t j) { return j == mf ? 120.0 : (j % 2 == 0 ? 0.01 : -0.01); });
    // position 4 <- symbol 3 (id 10): norm 120 spread evenly over 16 features
    set_row(tok::kSymbolBase + 3, [&](int64_t j) { return j % 2 == 0 ? 30.0 : -30.0; });

    fx.seq = build_lm_sequence({0, 1, 2, 3, 4, 5, 6}, fx.cfg.max_seq);
    return fx;
}

}  // namespace sinklab::testutil
