#include "sinklab/model.hpp"

#include <cmath>

#include "sinklab/kernels.hpp"

namespace sinklab {

const char* role_name(Role r) {
    switch (r) {
        case Role::Bos: return "bos";
        case Role::Marker: return "marker";
        case Role::Audio: return "audio";
        case Role::Video: return "video";
        case Role::Prompt: return "prompt";
        case Role::Target: return "target";
        case Role::Pad: return "pad";
    }
    return "?";
}

Role role_from_name(const std::string& s) {
    if (s == "bos") return Role::Bos;
    if (s == "marker") return Role::Marker;
    if (s == "audio") return Role::Audio;
    if (s == "video") return Role::Video;
    if (s == "prompt") return Role::Prompt;
    if (s == "target") return Role::Target;
    if (s == "pad") return Role::Pad;
    throw std::invalid_argument("unknown role name: " + s);
}

const char* task_name(TaskKind t) {
    switch (t) {
        case TaskKind::Asr: return "asr";
        case TaskKind::Vsr: return "vsr";
        case TaskKind::Avsr: return "avsr";
    }
    return "?";
}

TaskKind task_from_name(const std::string& s) {
    if (s == "asr") return TaskKind::Asr;
    if (s == "vsr") return TaskKind::Vsr;
    if (s == "avsr") return TaskKind::Avsr;
    throw std::invalid_argument("unknown task name: " + s);
}

const char* lora_target_name(LoraTarget t) {
    switch (t) {
        case LoraTarget::Wq: return "wq";
        case LoraTarget::Wk: return "wk";
        case LoraTarget::Wv: return "wv";
        case LoraTarget::Wo: return "wo";
    }
    return "?";
}

void ModelConfig::validate() const {
    SINKLAB_CHECK(d_model > 0 && heads > 0 && d_model % heads == 0,
                  "d_model " << d_model << " must be divisible by heads " << heads);
    SINKLAB_CHECK(d_head() % 2 == 0, "head width must be even for rotary encoding");
    SINKLAB_CHECK(layers >= 4, "layer count must be >= 4 so interior layers [2, L-1] are non-empty");
    SINKLAB_CHECK(d_ff > 0 && vocab > tok::kSymbolBase && max_seq > 1, "degenerate model config");
    SINKLAB_CHECK(rope_base > 1.0, "rope_base must exceed 1");
}

ModelParams ModelParams::init(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    constexpr double kStd = 0.02;
    ModelParams p;
    p.tok_embed = rng.gaussian_tensor({cfg.vocab, cfg.d_model}, kStd);
    p.layers.resize(static_cast<size_t>(cfg.layers));
    for (auto& l : p.layers) {
        l.wq = rng.gaussian_tensor({cfg.d_model, cfg.d_model}, kStd);
        l.wk = rng.gaussian_tensor({cfg.d_model, cfg.d_model}, kStd);
        l.wv = rng.gaussian_tensor({cfg.d_model, cfg.d_model}, kStd);
        l.wo = rng.gaussian_tensor({cfg.d_model, cfg.d_model}, kStd);
        l.w_gate = rng.gaussian_tensor({cfg.d_model, cfg.d_ff}, kStd);
        l.w_up = rng.gaussian_tensor({cfg.d_model, cfg.d_ff}, kStd);
        l.w_down = rng.gaussian_tensor({cfg.d_ff, cfg.d_model}, kStd);
        l.attn_gain = Tensor::full({cfg.d_model}, 1.0);
        l.mlp_gain = Tensor::full({cfg.d_model}, 1.0);
    }
    p.final_gain = Tensor::full({cfg.d_model}, 1.0);
    p.out_head = rng.gaussian_tensor({cfg.d_model, cfg.vocab}, kStd);
    if (cfg.audio_embed_dim > 0)
        p.audio_proj = rng.gaussian_tensor({cfg.audio_embed_dim, cfg.d_model}, kStd);
    if (cfg.video_embed_dim > 0)
        p.video_proj = rng.gaussian_tensor({cfg.video_embed_dim, cfg.d_model}, kStd);
    return p;
}

int64_t ModelParams::count_scalars() const {
    int64_t n = 0;
    const_cast<ModelParams*>(this)->for_each(
        [&](const std::string&, Tensor& t) { n += t.numel(); });
    return n;
}

void ModelParams::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
    fn("tok_embed", tok_embed);
    for (size_t l = 0; l < layers.size(); ++l) {
        const std::string pre = "layer" + std::to_string(l + 1) + ".";
        fn(pre + "wq", layers[l].wq);
        fn(pre + "wk", layers[l].wk);
        fn(pre + "wv", layers[l].wv);
        fn(pre + "wo", layers[l].wo);
        fn(pre + "w_gate", layers[l].w_gate);
        fn(pre + "w_up", layers[l].w_up);
        fn(pre + "w_down", layers[l].w_down);
        fn(pre + "attn_gain", layers[l].attn_gain);
        fn(pre + "mlp_gain", layers[l].mlp_gain);
    }
    fn("final_gain", final_gain);
    fn("out_head", out_head);
    if (audio_proj.numel() > 0) fn("audio_proj", audio_proj);
    if (video_proj.numel() > 0) fn("video_proj", video_proj);
}

void ModelParams::for_each(
    const std::function<void(const std::string&, const Tensor&)>& fn) const {
    const_cast<ModelParams*>(this)->for_each(
        [&](const std::string& n, Tensor& t) { fn(n, t); });
}

std::string LoraAdapter::name() const {
    return "lora.layer" + std::to_string(layer) + "." + lora_target_name(target);
}

std::vector<LoraAdapter> make_qkvo_adapters(const ModelConfig& cfg, int64_t rank, double scale,
                                            Rng& rng) {
    SINKLAB_CHECK(rank >= 1 && rank <= cfg.d_model, "lora rank out of range");
    std::vector<LoraAdapter> out;
    for (int64_t l = 1; l <= cfg.layers; ++l) {
        for (LoraTarget t : {LoraTarget::Wq, LoraTarget::Wk, LoraTarget::Wv, LoraTarget::Wo}) {
            LoraAdapter ad;
            ad.layer = l;
            ad.target = t;
            ad.rank = rank;
            ad.scale = scale;
            ad.a = rng.gaussian_tensor({rank, cfg.d_model}, 0.25);
            ad.b = Tensor::zeros({cfg.d_model, rank});
            out.push_back(std::move(ad));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sequence layout
// ---------------------------------------------------------------------------

int64_t SequenceSpec::prefix_length() const {
    for (size_t i = 0; i < roles.size(); ++i)
        if (roles[i] == Role::Target) return static_cast<int64_t>(i);
    return length();
}

std::vector<int64_t> SequenceSpec::shifted_targets() const {
    const int64_t n = length();
    std::vector<int64_t> out(static_cast<size_t>(n), -1);
    for (int64_t p = 0; p + 1 < n; ++p) {
        if (roles[static_cast<size_t>(p + 1)] == Role::Target)
            out[static_cast<size_t>(p)] = token_ids[static_cast<size_t>(p + 1)];
    }
    return out;
}

std::vector<int64_t> SequenceSpec::target_ids() const {
    std::vector<int64_t> out;
    for (size_t i = 0; i < roles.size(); ++i)
        if (roles[i] == Role::Target) out.push_back(token_ids[i]);
    return out;
}

void SequenceSpec::validate() const {
    SINKLAB_CHECK(!roles.empty() && roles[0] == Role::Bos && token_ids[0] == tok::kBos,
                  "sequence must start with BOS");
    SINKLAB_CHECK(roles.size() == token_ids.size(), "roles and token ids must align");
    int64_t audio_rows = 0, video_rows = 0;
    for (size_t i = 0; i < roles.size(); ++i) {
        const bool modality = roles[i] == Role::Audio || roles[i] == Role::Video;
        SINKLAB_CHECK(modality == (token_ids[i] < 0),
                      "modality positions and placeholder ids must coincide at " << i);
        if (roles[i] == Role::Audio) ++audio_rows;
        if (roles[i] == Role::Video) ++video_rows;
    }
    SINKLAB_CHECK(audio_pooled.numel() == 0 || audio_pooled.dim(0) == audio_rows,
                  "audio span length disagrees with pooled stream");
    SINKLAB_CHECK(video_pooled.numel() == 0 || video_pooled.dim(0) == video_rows,
                  "video span length disagrees with pooled stream");
}

SequenceSpec build_sequence(const std::vector<int64_t>& transcript, const Tensor& audio_stream,
                            const Tensor& video_stream, TaskKind task, int64_t rate_audio,
                            int64_t rate_video, int64_t max_seq) {
    const bool use_audio = task != TaskKind::Vsr;
    const bool use_video = task != TaskKind::Asr;
    SINKLAB_CHECK(!use_audio || rate_audio >= 1, "audio compression rate must be >= 1");
    SINKLAB_CHECK(!use_video || rate_video >= 1, "video compression rate must be >= 1");
    SINKLAB_CHECK(!use_audio || audio_stream.numel() > 0, "task requires an audio stream");
    SINKLAB_CHECK(!use_video || video_stream.numel() > 0, "task requires a video stream");

    SequenceSpec seq;
    auto push = [&](int64_t id, Role r) {
        seq.token_ids.push_back(id);
        seq.roles.push_back(r);
    };
    push(tok::kBos, Role::Bos);
    if (use_audio) {
        seq.audio_pooled = kernels::average_pool_rows(audio_stream, rate_audio);
        push(tok::kAudioOpen, Role::Marker);
        for (int64_t i = 0; i < seq.audio_pooled.dim(0); ++i) push(-1, Role::Audio);
        push(tok::kAudioClose, Role::Marker);
    }
    if (use_video) {
        seq.video_pooled = kernels::average_pool_rows(video_stream, rate_video);
        push(tok::kVideoOpen, Role::Marker);
        for (int64_t i = 0; i < seq.video_pooled.dim(0); ++i) push(-1, Role::Video);
        push(tok::kVideoClose, Role::Marker);
    }
    push(tok::kPrompt, Role::Prompt);
    for (int64_t s : transcript) push(tok::kSymbolBase + s, Role::Target);
    push(tok::kEos, Role::Target);
    SINKLAB_CHECK(seq.length() <= max_seq,
                  "sequence length " << seq.length() << " exceeds max_seq " << max_seq);
    seq.validate();
    return seq;
}

SequenceSpec build_lm_sequence(const std::vector<int64_t>& transcript, int64_t max_seq) {
    SequenceSpec seq;
    seq.token_ids.push_back(tok::kBos);
    seq.roles.push_back(Role::Bos);
    for (int64_t s : transcript) {
        seq.token_ids.push_back(tok::kSymbolBase + s);
        seq.roles.push_back(Role::Target);
    }
    seq.token_ids.push_back(tok::kEos);
    seq.roles.push_back(Role::Target);
    SINKLAB_CHECK(seq.length() <= max_seq,
                  "sequence length " << seq.length() << " exceeds max_seq " << max_seq);
    return seq;
}

const Tensor& ForwardTrace::hidden_at(int64_t l) const {
    SINKLAB_CHECK_INDEX(l >= 0 && l <= layers, "layer " << l << " out of [0, " << layers << "]");
    return l == 0 ? h0 : hidden[static_cast<size_t>(l - 1)];
}

// ---------------------------------------------------------------------------
// Graph construction
// ---------------------------------------------------------------------------

ModelGraph::ModelGraph(Tape& tape, const ModelConfig& cfg, ModelParams& params,
                       std::vector<LoraAdapter>* adapters, TrainMode mode)
    : tape_(tape), cfg_(cfg), params_(params), adapters_(adapters) {
    cfg.validate();
    const bool train_base = mode == TrainMode::Pretrain;
    const bool train_adapters = mode == TrainMode::Finetune;
    // Norm gains stay trainable during fine-tuning: per-feature rescaling lets
    // the frozen blocks track the representation shift the decorrelation term
    // induces. Projection weights, embeddings and the head stay frozen.
    const bool train_gains = train_base || train_adapters;

    tok_embed_ = bind(params_.tok_embed, train_base);
    layer_nodes_.resize(params_.layers.size());
    for (size_t l = 0; l < params_.layers.size(); ++l) {
        LayerParams& lp = params_.layers[l];
        layer_nodes_[l] = {bind(lp.wq, train_base),     bind(lp.wk, train_base),
                           bind(lp.wv, train_base),     bind(lp.wo, train_base),
                           bind(lp.w_gate, train_base), bind(lp.w_up, train_base),
                           bind(lp.w_down, train_base), bind(lp.attn_gain, train_gains),
                           bind(lp.mlp_gain, train_gains)};
    }
    final_gain_ = bind(params_.final_gain, train_gains);
    out_head_ = bind(params_.out_head, train_base);
    if (params_.audio_proj.numel() > 0) audio_proj_ = bind(params_.audio_proj, train_adapters);
    if (params_.video_proj.numel() > 0) video_proj_ = bind(params_.video_proj, train_adapters);
    if (adapters_) {
        for (LoraAdapter& ad : *adapters_) {
            SINKLAB_CHECK(ad.layer >= 1 && ad.layer <= cfg_.layers, "adapter layer out of range");
            SINKLAB_CHECK(ad.a.dim(0) == ad.rank && ad.b.dim(1) == ad.rank,
                          "adapter rank disagrees with its arrays");
            SINKLAB_CHECK(ad.a.dim(1) == cfg_.d_model && ad.b.dim(0) == cfg_.d_model,
                          "adapter shape mismatch for " << ad.name());
            adapter_nodes_.push_back(
                {bind(ad.a, train_adapters), bind(ad.b, train_adapters)});
        }
    }
}

NodeId ModelGraph::bind(Tensor& t, bool trainable) {
    NodeId id = tape_.leaf(t, trainable);
    if (trainable) trainables_.push_back({&t, id});
    return id;
}

NodeId ModelGraph::norm(NodeId h, NodeId gain) {
    return cfg_.norm == NormKind::Rms ? tape_.rms_norm(h, gain) : tape_.layer_norm(h, gain);
}

NodeId ModelGraph::projected(NodeId x, int64_t layer_index, LoraTarget which, NodeId w) {
    NodeId y = tape_.matmul(x, w);
    if (!adapters_) return y;
    for (size_t k = 0; k < adapters_->size(); ++k) {
        const LoraAdapter& ad = (*adapters_)[k];
        if (ad.layer != layer_index || ad.target != which) continue;
        NodeId xa = tape_.matmul_nt(x, adapter_nodes_[k].a);   // N×r
        NodeId xab = tape_.matmul_nt(xa, adapter_nodes_[k].b); // N×d
        y = tape_.add(y, tape_.scale(xab, ad.scale));
    }
    return y;
}

NodeId mhsa_block(Tape& tape, NodeId x, NodeId wq, NodeId wk, NodeId wv, NodeId wo,
                  int64_t heads, double rope_base, std::vector<NodeId>* attn_nodes) {
    const int64_t d = tape.value(x).dim(1);
    const int64_t d_head = d / heads;
    NodeId q = tape.rope(tape.matmul(x, wq), heads, rope_base);
    NodeId k = tape.rope(tape.matmul(x, wk), heads, rope_base);
    NodeId v = tape.matmul(x, wv);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_head));
    std::vector<NodeId> head_outs;
    if (attn_nodes) attn_nodes->clear();
    for (int64_t h = 0; h < heads; ++h) {
        NodeId qh = tape.col_slice(q, h * d_head, d_head);
        NodeId kh = tape.col_slice(k, h * d_head, d_head);
        NodeId vh = tape.col_slice(v, h * d_head, d_head);
        NodeId scores = tape.scale(tape.matmul_nt(qh, kh), inv_sqrt);
        NodeId a = tape.causal_softmax(scores);
        if (attn_nodes) attn_nodes->push_back(a);
        head_outs.push_back(tape.matmul(a, vh));
    }
    return tape.matmul(tape.col_concat(head_outs), wo);
}

NodeId glu_mlp_block(Tape& tape, NodeId y, NodeId w_gate, NodeId w_up, NodeId w_down) {
    NodeId gate = tape.silu(tape.matmul(y, w_gate));
    NodeId up = tape.matmul(y, w_up);
    return tape.matmul(tape.mul(up, gate), w_down);
}

ForwardResult ModelGraph::forward(const SequenceSpec& seq,
                                  const std::vector<InterventionSpec>& interventions,
                                  bool capture_trace) {
    seq.validate();
    const int64_t n = seq.length();
    SINKLAB_CHECK(n <= cfg_.max_seq, "sequence exceeds max_seq");
    for (const auto& iv : interventions) {
        SINKLAB_CHECK(iv.layer >= 1 && iv.layer <= cfg_.layers,
                      "intervention layer " << iv.layer << " out of range");
        SINKLAB_CHECK_INDEX(iv.token >= 0 && iv.token < n, "intervention token out of range");
        if (iv.mode == InterventionSpec::Mode::TowardBos)
            SINKLAB_CHECK(iv.token != 0, "rotating BOS toward itself is vacuous");
        else
            SINKLAB_CHECK_INDEX(iv.target >= 0 && iv.target < n,
                                "intervention target token out of range");
    }

    // Assemble H^0 from contiguous segments: token-id runs come from the
    // embedding table, modality spans from their pooled streams + projector.
    std::vector<NodeId> segments;
    size_t i = 0;
    while (i < seq.roles.size()) {
        const Role r = seq.roles[i];
        if (r == Role::Audio || r == Role::Video) {
            size_t j = i;
            while (j < seq.roles.size() && seq.roles[j] == r) ++j;
            const bool is_audio = r == Role::Audio;
            NodeId proj = is_audio ? audio_proj_ : video_proj_;
            SINKLAB_CHECK(proj != kInvalidNode,
                          "model has no projector for " << role_name(r) << " span");
            const Tensor& pooled = is_audio ? seq.audio_pooled : seq.video_pooled;
            segments.push_back(tape_.matmul(tape_.constant(pooled), proj));
            i = j;
        } else {
            std::vector<int64_t> ids;
            size_t j = i;
            while (j < seq.roles.size() && seq.roles[j] != Role::Audio &&
                   seq.roles[j] != Role::Video) {
                ids.push_back(seq.token_ids[j]);
                ++j;
            }
            segments.push_back(tape_.gather_rows(tok_embed_, std::move(ids)));
            i = j;
        }
    }
    NodeId h = segments.size() == 1 ? segments[0] : tape_.row_concat(segments);

    ForwardResult res;
    res.hidden_nodes.push_back(h);
    std::vector<std::vector<NodeId>> attn_nodes(static_cast<size_t>(cfg_.layers));
    std::vector<NodeId> o_nodes, mlp_nodes;

    for (int64_t l = 1; l <= cfg_.layers; ++l) {
        const LayerNodes& ln = layer_nodes_[static_cast<size_t>(l - 1)];
        NodeId x = norm(h, ln.attn_gain);
        NodeId q = tape_.rope(projected(x, l, LoraTarget::Wq, ln.wq), cfg_.heads, cfg_.rope_base);
        NodeId k = tape_.rope(projected(x, l, LoraTarget::Wk, ln.wk), cfg_.heads, cfg_.rope_base);
        NodeId v = projected(x, l, LoraTarget::Wv, ln.wv);
        const int64_t d_head = cfg_.d_head();
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_head));
        std::vector<NodeId> head_outs;
        for (int64_t hh = 0; hh < cfg_.heads; ++hh) {
            NodeId qh = tape_.col_slice(q, hh * d_head, d_head);
            NodeId kh = tape_.col_slice(k, hh * d_head, d_head);
            NodeId vh = tape_.col_slice(v, hh * d_head, d_head);
            NodeId a = tape_.causal_softmax(tape_.scale(tape_.matmul_nt(qh, kh), inv_sqrt));
            attn_nodes[static_cast<size_t>(l - 1)].push_back(a);
            head_outs.push_back(tape_.matmul(a, vh));
        }
        NodeId o = projected(tape_.col_concat(head_outs), l, LoraTarget::Wo, ln.wo);
        o_nodes.push_back(o);
        NodeId mid = tape_.add(h, o);
        NodeId y = norm(mid, ln.mlp_gain);
        NodeId mlp = glu_mlp_block(tape_, y, ln.w_gate, ln.w_up, ln.w_down);
        mlp_nodes.push_back(mlp);
        h = tape_.add(mid, mlp);
        for (const auto& iv : interventions) {
            if (iv.layer != l) continue;
            const int64_t tgt = iv.mode == InterventionSpec::Mode::TowardBos ? 0 : iv.target;
            h = tape_.rotate_row_to(h, iv.token, tgt);
        }
        res.hidden_nodes.push_back(h);
    }
    NodeId xf = norm(h, final_gain_);
    res.logits = tape_.matmul(xf, out_head_);

    if (capture_trace) {
        ForwardTrace& tr = res.trace;
        tr.layers = cfg_.layers;
        tr.seq_len = n;
        tr.heads = cfg_.heads;
        tr.d_model = cfg_.d_model;
        tr.roles = seq.roles;
        tr.h0 = tape_.value(res.hidden_nodes[0]);
        for (int64_t l = 1; l <= cfg_.layers; ++l) {
            tr.hidden.push_back(tape_.value(res.hidden_nodes[static_cast<size_t>(l)]));
            tr.attn_out.push_back(tape_.value(o_nodes[static_cast<size_t>(l - 1)]));
            tr.mlp_out.push_back(tape_.value(mlp_nodes[static_cast<size_t>(l - 1)]));
            std::vector<Tensor> maps;
            for (NodeId a : attn_nodes[static_cast<size_t>(l - 1)])
                maps.push_back(tape_.value(a));
            tr.attn.push_back(std::move(maps));
        }
    }
    return res;
}

std::vector<int64_t> generate_greedy(const ModelConfig& cfg, ModelParams& params,
                                     std::vector<LoraAdapter>* adapters,
                                     const SequenceSpec& sample, int64_t max_new) {
    SINKLAB_CHECK(sample.length() >= 1, "generation needs a non-empty prefix");
    const int64_t prefix = sample.prefix_length();
    SINKLAB_CHECK(prefix >= 1, "generation prefix must be non-empty");

    SequenceSpec work = sample;
    work.token_ids.resize(static_cast<size_t>(prefix));
    work.roles.resize(static_cast<size_t>(prefix));

    std::vector<int64_t> out;
    for (int64_t step = 0; step < max_new; ++step) {
        if (work.length() >= cfg.max_seq) break;
        Tape tape;
        ModelGraph graph(tape, cfg, params, adapters, TrainMode::Inference);
        ForwardResult res = graph.forward(work, {}, false);
        const Tensor& logits = tape.value(res.logits);
        const int64_t last = work.length() - 1;
        int64_t best = 0;
        for (int64_t v = 1; v < cfg.vocab; ++v)
            if (logits.at(last, v) > logits.at(last, best)) best = v;
        out.push_back(best);
        if (best == tok::kEos) break;
        work.token_ids.push_back(best);
        work.roles.push_back(Role::Target);
    }
    return out;
}

}  // namespace sinklab
