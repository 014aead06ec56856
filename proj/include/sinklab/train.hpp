#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sinklab/analysis.hpp"
#include "sinklab/model.hpp"
#include "sinklab/task.hpp"

namespace sinklab {

enum class Phase { Pretrain, Finetune };

struct TrainConfig {
    Phase phase = Phase::Pretrain;
    double lambda = 0.0;  // decorrelation weight; 0 recovers the pure CE baseline
    double lr = 2e-3;
    double weight_decay = 0.0;
    int64_t steps = 400;
    int64_t batch = 8;
    int64_t rate_audio = 16;
    int64_t rate_video = 5;
    int64_t lora_rank = 4;
    double lora_scale = 1.0;
    double grad_clip = 1.0;  // global L2-norm ceiling; 0 disables
    uint64_t seed = 1;
    int64_t checkpoint_interval = 100;
    int64_t eval_samples = 16;
    std::string init_checkpoint;  // finetune only

    void validate() const;
};

// Differentiable Eq.-style decorrelation term: mean over interior layers and
// non-BOS, non-pad tokens of cos²(H^l[i], H^l[0]). Hidden states are the block
// outputs, the same states the diagnostics analyze.
NodeId decorrelation_loss_node(Tape& tape, const std::vector<NodeId>& hidden_nodes,
                               const std::vector<Role>& roles);

// With lambda == 0, total aliases the CE node so the baseline recovers cross
// entropy bitwise; decor is still evaluated for reporting.
struct LossNodes {
    NodeId total = kInvalidNode;
    NodeId ce = kInvalidNode;
    NodeId decor = kInvalidNode;
};

LossNodes total_loss_node(Tape& tape, const ForwardResult& fwd, const SequenceSpec& seq,
                          double lambda);

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// Decoupled weight decay, bias-corrected moments, deterministic given the
// (fixed) parameter registration order.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    void step(const std::vector<std::pair<Tensor*, const Tensor*>>& param_grads);

    int64_t steps_taken() const { return t_; }

private:
    struct State {
        Tensor* param = nullptr;
        Tensor m, v;
    };
    AdamWConfig cfg_;
    std::vector<State> states_;
    int64_t t_ = 0;
};

struct CheckpointMetrics {
    int64_t step = 0;
    double ce = 0.0;           // held-out teacher-forced cross entropy
    double decor = 0.0;        // decorrelation term of the latest training batch
    double mean_cos_sq = 0.0;  // held-out mean cos²(non-BOS, BOS) over interior layers
    double ter = 0.0;          // held-out token error rate (greedy decodes)
};

struct RunMetrics {
    std::vector<CheckpointMetrics> checkpoints;
    std::vector<SinkReport> sink_reports;  // probe-sample snapshot per checkpoint
};

struct TrainOutcome {
    ModelParams params;
    std::vector<LoraAdapter> adapters;  // empty after pretrain
    RunMetrics metrics;
};

// Invoked at every checkpoint with the freshly measured metrics and the
// current state; the experiment layer uses it to persist files.
struct CheckpointEvent {
    const CheckpointMetrics& metrics;
    const SinkReport& report;
    const ModelParams& params;
    const std::vector<LoraAdapter>& adapters;
    bool final_step;
};
using CheckpointSink = std::function<void(const CheckpointEvent&)>;

// Phase 0: plain language model on transcript-only sequences, λ = 0, all base
// weights trained. Aborts with a diagnostic on non-finite loss.
TrainOutcome run_pretrain(const ModelConfig& cfg, const ToyTaskSpec& task_spec,
                          const TrainConfig& train, const CheckpointSink& on_checkpoint = {});

// Phase 1: freezes the pretrained base, trains LoRA adapters (W_Q/W_K/W_V/W_O)
// plus the modality projectors with CE + λ·decorrelation.
TrainOutcome run_finetune(const ModelConfig& cfg, const ToyTaskSpec& task_spec,
                          const TrainConfig& train, TaskKind task, const ModelParams& pretrained,
                          const CheckpointSink& on_checkpoint = {});

// Mean per-sample token error rate of greedy decodes against references.
double evaluate_ter(const ModelConfig& cfg, ModelParams& params,
                    std::vector<LoraAdapter>* adapters, const std::vector<SequenceSpec>& eval_set);

// Scales the gradient set so its global L2 norm does not exceed max_norm;
// returns the pre-clip norm. max_norm <= 0 leaves gradients untouched.
double clip_gradients(std::vector<Tensor>& grads, double max_norm);

}  // namespace sinklab
