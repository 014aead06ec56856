#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sinklab/rng.hpp"
#include "sinklab/tape.hpp"
#include "sinklab/tensor.hpp"

namespace sinklab {

enum class Role : uint8_t { Bos, Marker, Audio, Video, Prompt, Target, Pad };
enum class TaskKind { Asr, Vsr, Avsr };
enum class NormKind { Rms, LayerNorm };

const char* role_name(Role r);
Role role_from_name(const std::string& s);
const char* task_name(TaskKind t);
TaskKind task_from_name(const std::string& s);

// Fixed special-token layout of the toy vocabulary. Symbol s of the latent
// transcript maps to id kSymbolBase + s.
namespace tok {
constexpr int64_t kBos = 0;
constexpr int64_t kAudioOpen = 1;
constexpr int64_t kAudioClose = 2;
constexpr int64_t kVideoOpen = 3;
constexpr int64_t kVideoClose = 4;
constexpr int64_t kPrompt = 5;
constexpr int64_t kEos = 6;
constexpr int64_t kSymbolBase = 7;
}  // namespace tok

struct ModelConfig {
    int64_t layers = 4;
    int64_t d_model = 64;
    int64_t heads = 4;
    int64_t d_ff = 192;
    int64_t vocab = 31;
    int64_t max_seq = 256;
    double rope_base = 10000.0;
    NormKind norm = NormKind::Rms;
    int64_t audio_embed_dim = 0;  // 0 disables the audio projector
    int64_t video_embed_dim = 0;

    int64_t d_head() const { return d_model / heads; }
    void validate() const;
};

struct LayerParams {
    Tensor wq, wk, wv, wo;      // d×d
    Tensor w_gate, w_up;        // d×d_ff
    Tensor w_down;              // d_ff×d
    Tensor attn_gain, mlp_gain; // d
};

struct ModelParams {
    Tensor tok_embed;  // V×d
    std::vector<LayerParams> layers;
    Tensor final_gain;  // d
    Tensor out_head;    // d×V
    Tensor audio_proj;  // e_a×d, empty when disabled
    Tensor video_proj;  // e_v×d

    static ModelParams init(const ModelConfig& cfg, Rng& rng);
    int64_t count_scalars() const;
    // Visits every present tensor in a fixed order with a stable name.
    void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
    void for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const;
};

enum class LoraTarget : uint8_t { Wq, Wk, Wv, Wo };
const char* lora_target_name(LoraTarget t);

// Low-rank additive adapter on one frozen projection. With b all-zero the
// adapted forward equals the base forward.
struct LoraAdapter {
    int64_t layer = 1;  // 1-based
    LoraTarget target = LoraTarget::Wq;
    int64_t rank = 4;
    double scale = 1.0;
    Tensor a;  // rank×in
    Tensor b;  // out×rank, zero-initialized

    std::string name() const;
};

std::vector<LoraAdapter> make_qkvo_adapters(const ModelConfig& cfg, int64_t rank, double scale,
                                            Rng& rng);

// Token layout of one sequence: BOS, optional audio/video spans wrapped in
// marker tokens, prompt, then target tokens ending in EOS. Modality positions
// carry token id -1 and their pooled embedding streams instead.
struct SequenceSpec {
    std::vector<int64_t> token_ids;
    std::vector<Role> roles;
    Tensor audio_pooled;  // rows match the audio span
    Tensor video_pooled;

    int64_t length() const { return static_cast<int64_t>(token_ids.size()); }
    int64_t prefix_length() const;  // positions before the first target
    // Next-token targets for teacher forcing; -1 marks uncounted positions.
    // Only predictions of target-role tokens are counted.
    std::vector<int64_t> shifted_targets() const;
    std::vector<int64_t> target_ids() const;
    void validate() const;
};

SequenceSpec build_sequence(const std::vector<int64_t>& transcript, const Tensor& audio_stream,
                            const Tensor& video_stream, TaskKind task, int64_t rate_audio,
                            int64_t rate_video, int64_t max_seq);

// Plain-LM layout used by the pretrain phase: BOS, transcript, EOS.
SequenceSpec build_lm_sequence(const std::vector<int64_t>& transcript, int64_t max_seq);

struct InterventionSpec {
    enum class Mode : uint8_t { TowardBos, TowardToken };
    int64_t layer = 2;  // 1-based l*; the edit rewrites H^{l*} before layer l*+1
    int64_t token = 0;
    Mode mode = Mode::TowardBos;
    int64_t target = 0;  // only for TowardToken
};

// Complete per-layer record of one forward pass. hidden_at(l) is H^l with
// H^0 the input embeddings; when an intervention edited layer l*, hidden_at(l*)
// is the post-edit state the following layers consumed.
struct ForwardTrace {
    int64_t layers = 0;
    int64_t seq_len = 0;
    int64_t heads = 0;
    int64_t d_model = 0;
    Tensor h0;
    std::vector<Tensor> hidden;              // [l-1] = H^l
    std::vector<std::vector<Tensor>> attn;   // [l-1][h], N×N row-stochastic causal
    std::vector<Tensor> attn_out;            // O^l
    std::vector<Tensor> mlp_out;             // MLP residual contribution
    std::vector<Role> roles;

    const Tensor& hidden_at(int64_t l) const;
};

struct ForwardResult {
    NodeId logits = kInvalidNode;
    std::vector<NodeId> hidden_nodes;  // H^0..H^L on the tape
    ForwardTrace trace;                // filled when capture_trace was set
};

enum class TrainMode { Inference, Pretrain, Finetune };

// Binds model parameters (and adapters) onto a tape and builds forward graphs.
// Which leaves get gradients depends on the mode: Pretrain trains all base
// weights except projectors; Finetune trains adapters plus the projectors the
// task uses; Inference trains nothing.
class ModelGraph {
public:
    ModelGraph(Tape& tape, const ModelConfig& cfg, ModelParams& params,
               std::vector<LoraAdapter>* adapters, TrainMode mode);

    ForwardResult forward(const SequenceSpec& seq,
                          const std::vector<InterventionSpec>& interventions,
                          bool capture_trace);

    // (persistent tensor, tape leaf) pairs for every trainable in this graph.
    const std::vector<std::pair<Tensor*, NodeId>>& trainables() const { return trainables_; }

    Tape& tape() { return tape_; }

private:
    NodeId projected(NodeId x, int64_t layer_index, LoraTarget which, NodeId w);
    NodeId norm(NodeId h, NodeId gain);
    NodeId bind(Tensor& t, bool trainable);

    Tape& tape_;
    const ModelConfig& cfg_;
    ModelParams& params_;
    std::vector<LoraAdapter>* adapters_;

    NodeId tok_embed_, final_gain_, out_head_, audio_proj_ = kInvalidNode,
                                                video_proj_ = kInvalidNode;
    struct LayerNodes {
        NodeId wq, wk, wv, wo, w_gate, w_up, w_down, attn_gain, mlp_gain;
    };
    std::vector<LayerNodes> layer_nodes_;
    struct AdapterNodes {
        NodeId a, b;
    };
    std::vector<AdapterNodes> adapter_nodes_;
    std::vector<std::pair<Tensor*, NodeId>> trainables_;
};

// Attention sub-block: pre-normed input in, per-head rotary attention, merged
// projection out. Exposed separately so tests can pit it against the serial
// reference implementation.
NodeId mhsa_block(Tape& tape, NodeId x, NodeId wq, NodeId wk, NodeId wv, NodeId wo,
                  int64_t heads, double rope_base, std::vector<NodeId>* attn_nodes);

NodeId glu_mlp_block(Tape& tape, NodeId y, NodeId w_gate, NodeId w_up, NodeId w_down);

// Greedy decoding: repeatedly appends the argmax token until EOS or max_new.
std::vector<int64_t> generate_greedy(const ModelConfig& cfg, ModelParams& params,
                                     std::vector<LoraAdapter>* adapters,
                                     const SequenceSpec& sample, int64_t max_new);

}  // namespace sinklab
