#include "sinklab/train.hpp"

#include <cmath>

#include "sinklab/edit_distance.hpp"

namespace sinklab {

void TrainConfig::validate() const {
    SINKLAB_CHECK(lambda >= 0.0, "lambda must be non-negative");
    SINKLAB_CHECK(lr > 0.0 && weight_decay >= 0.0, "bad optimizer settings");
    SINKLAB_CHECK(grad_clip >= 0.0, "grad_clip must be non-negative");
    SINKLAB_CHECK(steps >= 1 && batch >= 1, "steps and batch must be >= 1");
    SINKLAB_CHECK(lora_rank >= 1, "lora rank must be >= 1");
    SINKLAB_CHECK(checkpoint_interval >= 1, "checkpoint interval must be >= 1");
    SINKLAB_CHECK(eval_samples >= 1, "need at least one held-out sample");
    if (phase == Phase::Finetune)
        SINKLAB_CHECK(rate_audio >= 1 || rate_video >= 1, "finetune needs compression rates");
}

NodeId decorrelation_loss_node(Tape& tape, const std::vector<NodeId>& hidden_nodes,
                               const std::vector<Role>& roles) {
    const int64_t layers = static_cast<int64_t>(hidden_nodes.size()) - 1;
    SINKLAB_CHECK(layers >= 4, "decorrelation needs >= 4 layers");
    std::vector<bool> include(roles.size());
    for (size_t i = 0; i < roles.size(); ++i) include[i] = roles[i] != Role::Pad;
    std::vector<NodeId> per_layer;
    for (int64_t l = 2; l <= layers - 1; ++l)
        per_layer.push_back(
            tape.bos_alignment_sq_mean(hidden_nodes[static_cast<size_t>(l)], include));
    return tape.mean_scalars(per_layer);
}

LossNodes total_loss_node(Tape& tape, const ForwardResult& fwd, const SequenceSpec& seq,
                          double lambda) {
    SINKLAB_CHECK(lambda >= 0.0, "lambda must be non-negative");
    LossNodes out;
    out.ce = tape.cross_entropy(fwd.logits, seq.shifted_targets());
    out.decor = decorrelation_loss_node(tape, fwd.hidden_nodes, seq.roles);
    out.total = lambda == 0.0 ? out.ce : tape.add(out.ce, tape.scale(out.decor, lambda));
    return out;
}

void AdamW::step(const std::vector<std::pair<Tensor*, const Tensor*>>& param_grads) {
    if (states_.empty()) {
        for (const auto& [p, g] : param_grads) {
            State st;
            st.param = p;
            st.m = Tensor::zeros(p->shape());
            st.v = Tensor::zeros(p->shape());
            states_.push_back(std::move(st));
            (void)g;
        }
    }
    SINKLAB_CHECK(param_grads.size() == states_.size(),
                  "optimizer was registered with a different trainable set");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t k = 0; k < states_.size(); ++k) {
        State& st = states_[k];
        Tensor* p = param_grads[k].first;
        const Tensor* g = param_grads[k].second;
        SINKLAB_CHECK(p == st.param, "trainable order changed between optimizer steps");
        SINKLAB_CHECK(g->same_shape(*p), "gradient shape mismatch for a trainable");
        for (int64_t i = 0; i < p->numel(); ++i) {
            const double gi = (*g)[i];
            st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * gi;
            st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * gi * gi;
            const double mhat = st.m[i] / bc1;
            const double vhat = st.v[i] / bc2;
            (*p)[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps)) +
                       cfg_.lr * cfg_.weight_decay * (*p)[i];
        }
    }
}

double clip_gradients(std::vector<Tensor>& grads, double max_norm) {
    double sq = 0.0;
    for (const Tensor& g : grads)
        for (int64_t i = 0; i < g.numel(); ++i) sq += g[i] * g[i];
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double scale = max_norm / norm;
        for (Tensor& g : grads)
            for (int64_t i = 0; i < g.numel(); ++i) g[i] *= scale;
    }
    return norm;
}

double evaluate_ter(const ModelConfig& cfg, ModelParams& params,
                    std::vector<LoraAdapter>* adapters,
                    const std::vector<SequenceSpec>& eval_set) {
    SINKLAB_CHECK(!eval_set.empty(), "empty evaluation set");
    double total = 0.0;
    for (const SequenceSpec& seq : eval_set) {
        std::vector<int64_t> ref = seq.target_ids();
        if (!ref.empty() && ref.back() == tok::kEos) ref.pop_back();
        const int64_t budget = static_cast<int64_t>(ref.size()) + 6;
        std::vector<int64_t> hyp = generate_greedy(cfg, params, adapters, seq, budget);
        if (!hyp.empty() && hyp.back() == tok::kEos) hyp.pop_back();
        total += token_error_rate(hyp, ref);
    }
    return total / static_cast<double>(eval_set.size());
}

namespace {

struct LoopSetup {
    TrainMode mode;
    std::vector<SequenceSpec> eval_set;
    std::function<SequenceSpec(const ToySample&)> to_sequence;
};

TrainOutcome run_loop(const ModelConfig& cfg, const ToyTaskSpec& task_spec,
                      const TrainConfig& train, ModelParams initial,
                      std::vector<LoraAdapter> adapters, const LoopSetup& setup,
                      double lambda, const CheckpointSink& on_checkpoint) {
    cfg.validate();
    train.validate();
    const ToyTask task(task_spec);
    Rng data_rng(derive_seed(train.seed, 1));

    TrainOutcome out;
    out.params = std::move(initial);
    out.adapters = std::move(adapters);
    std::vector<LoraAdapter>* adapter_ptr = out.adapters.empty() ? nullptr : &out.adapters;

    AdamW opt({train.lr, 0.9, 0.999, 1e-8, train.weight_decay});

    double last_batch_decor = -1.0;
    auto take_checkpoint = [&](int64_t step, bool final_step) {
        double ce = 0.0, cos_sq = 0.0;
        SinkReport probe;
        for (size_t k = 0; k < setup.eval_set.size(); ++k) {
            Tape tape;
            ModelGraph graph(tape, cfg, out.params, adapter_ptr, TrainMode::Inference);
            ForwardResult fwd = graph.forward(setup.eval_set[k], {}, k == 0);
            LossNodes ln = total_loss_node(tape, fwd, setup.eval_set[k], 0.0);
            ce += tape.scalar_value(ln.ce);
            cos_sq += tape.scalar_value(ln.decor);
            if (k == 0) {
                probe = compute_sink_report(fwd.trace, AnalysisOptions{});
                probe.step = step;
            }
        }
        const double n = static_cast<double>(setup.eval_set.size());
        CheckpointMetrics m;
        m.step = step;
        m.ce = ce / n;
        m.mean_cos_sq = cos_sq / n;
        m.decor = last_batch_decor >= 0.0 ? last_batch_decor : m.mean_cos_sq;
        m.ter = evaluate_ter(cfg, out.params, adapter_ptr, setup.eval_set);
        out.metrics.checkpoints.push_back(m);
        out.metrics.sink_reports.push_back(probe);
        if (on_checkpoint)
            on_checkpoint({m, out.metrics.sink_reports.back(), out.params, out.adapters,
                           final_step});
    };

    take_checkpoint(0, train.steps == 0);

    for (int64_t step = 1; step <= train.steps; ++step) {
        const std::vector<ToySample> samples = task.batch(data_rng, train.batch);
        Tape tape;
        ModelGraph graph(tape, cfg, out.params, adapter_ptr, setup.mode);
        std::vector<NodeId> totals;
        double batch_ce = 0.0, batch_decor = 0.0;
        for (const ToySample& s : samples) {
            const SequenceSpec seq = setup.to_sequence(s);
            ForwardResult fwd = graph.forward(seq, {}, false);
            LossNodes ln = total_loss_node(tape, fwd, seq, lambda);
            totals.push_back(ln.total);
            batch_ce += tape.scalar_value(ln.ce);
            batch_decor += tape.scalar_value(ln.decor);
        }
        NodeId loss = tape.mean_scalars(totals);
        const double loss_value = tape.scalar_value(loss);
        SINKLAB_CHECK_RUNTIME(std::isfinite(loss_value),
                              "training diverged: non-finite loss at step "
                                  << step << " (ce " << batch_ce / train.batch << ")");
        tape.backward(loss);
        std::vector<Tensor> grads;
        grads.reserve(graph.trainables().size());
        for (const auto& [param, node] : graph.trainables()) grads.push_back(tape.grad(node));
        clip_gradients(grads, train.grad_clip);
        std::vector<std::pair<Tensor*, const Tensor*>> pairs;
        for (size_t k = 0; k < grads.size(); ++k)
            pairs.push_back({graph.trainables()[k].first, &grads[k]});
        opt.step(pairs);
        last_batch_decor = batch_decor / static_cast<double>(train.batch);

        if (step % train.checkpoint_interval == 0 || step == train.steps)
            take_checkpoint(step, step == train.steps);
    }
    return out;
}

}  // namespace

TrainOutcome run_pretrain(const ModelConfig& cfg, const ToyTaskSpec& task_spec,
                          const TrainConfig& train, const CheckpointSink& on_checkpoint) {
    SINKLAB_CHECK(train.phase == Phase::Pretrain, "run_pretrain requires phase = pretrain");
    Rng init_rng(derive_seed(train.seed, 0));
    ModelParams params = ModelParams::init(cfg, init_rng);

    const ToyTask task(task_spec);
    Rng eval_rng(derive_seed(train.seed, 2));
    LoopSetup setup;
    setup.mode = TrainMode::Pretrain;
    for (const ToySample& s : task.batch(eval_rng, train.eval_samples))
        setup.eval_set.push_back(build_lm_sequence(s.transcript, cfg.max_seq));
    setup.to_sequence = [&cfg](const ToySample& s) {
        return build_lm_sequence(s.transcript, cfg.max_seq);
    };
    // Plain LM phase: no modality spans, pure CE.
    return run_loop(cfg, task_spec, train, std::move(params), {}, setup, 0.0, on_checkpoint);
}

TrainOutcome run_finetune(const ModelConfig& cfg, const ToyTaskSpec& task_spec,
                          const TrainConfig& train, TaskKind task_kind,
                          const ModelParams& pretrained, const CheckpointSink& on_checkpoint) {
    SINKLAB_CHECK(train.phase == Phase::Finetune, "run_finetune requires phase = finetune");
    Rng init_rng(derive_seed(train.seed, 0));
    std::vector<LoraAdapter> adapters =
        make_qkvo_adapters(cfg, train.lora_rank, train.lora_scale, init_rng);

    const ToyTask task(task_spec);
    Rng eval_rng(derive_seed(train.seed, 2));
    auto to_sequence = [&cfg, task_kind, &train](const ToySample& s) {
        return build_sequence(s.transcript, s.audio, s.video, task_kind, train.rate_audio,
                              train.rate_video, cfg.max_seq);
    };
    LoopSetup setup;
    setup.mode = TrainMode::Finetune;
    for (const ToySample& s : task.batch(eval_rng, train.eval_samples))
        setup.eval_set.push_back(to_sequence(s));
    setup.to_sequence = to_sequence;

    return run_loop(cfg, task_spec, train, pretrained, std::move(adapters), setup, train.lambda,
                    on_checkpoint);
}

}  // namespace sinklab
