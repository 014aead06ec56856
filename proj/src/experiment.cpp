#include "sinklab/experiment.hpp"

#include <cstdio>
#include <fstream>

#include "sinklab/checkpoint.hpp"
#include "serialize_internal.hpp"

namespace sinklab {

namespace fs = std::filesystem;

namespace {

void write_text_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    SINKLAB_CHECK_RUNTIME(os.good(), "cannot write " << path);
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    SINKLAB_CHECK_RUNTIME(os.good(), "short write to " << path);
}

std::string read_text_file(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    SINKLAB_CHECK_RUNTIME(is.good(), "cannot read " << path);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

std::string step_tag(int64_t step) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "step_%06lld", static_cast<long long>(step));
    return buf;
}

nlohmann::json toy_to_json(const ToyTaskSpec& t) {
    return {{"symbol_vocab", t.symbol_vocab},
            {"min_len", t.min_len},
            {"max_len", t.max_len},
            {"audio_upsample", t.audio_upsample},
            {"audio_noise", t.audio_noise},
            {"video_upsample", t.video_upsample},
            {"video_corruption", t.video_corruption},
            {"audio_embed_dim", t.audio_embed_dim},
            {"video_embed_dim", t.video_embed_dim},
            {"seed", t.seed}};
}

ToyTaskSpec toy_from_json(const nlohmann::json& j) {
    ToyTaskSpec t;
    t.symbol_vocab = j.at("symbol_vocab").get<int64_t>();
    t.min_len = j.at("min_len").get<int64_t>();
    t.max_len = j.at("max_len").get<int64_t>();
    t.audio_upsample = j.at("audio_upsample").get<int64_t>();
    t.audio_noise = j.at("audio_noise").get<double>();
    t.video_upsample = j.at("video_upsample").get<int64_t>();
    t.video_corruption = j.at("video_corruption").get<double>();
    t.audio_embed_dim = j.at("audio_embed_dim").get<int64_t>();
    t.video_embed_dim = j.at("video_embed_dim").get<int64_t>();
    t.seed = j.at("seed").get<uint64_t>();
    return t;
}

nlohmann::json train_to_json(const TrainConfig& t) {
    return {{"phase", t.phase == Phase::Pretrain ? "pretrain" : "finetune"},
            {"lambda", t.lambda},
            {"lr", t.lr},
            {"weight_decay", t.weight_decay},
            {"steps", t.steps},
            {"batch", t.batch},
            {"lora_rank", t.lora_rank},
            {"lora_scale", t.lora_scale},
            {"grad_clip", t.grad_clip},
            {"seed", t.seed},
            {"checkpoint_interval", t.checkpoint_interval},
            {"eval_samples", t.eval_samples},
            {"init_checkpoint", t.init_checkpoint}};
}

TrainConfig train_from_json(const nlohmann::json& j) {
    TrainConfig t;
    const std::string phase = j.at("phase").get<std::string>();
    SINKLAB_CHECK(phase == "pretrain" || phase == "finetune", "unknown phase: " << phase);
    t.phase = phase == "pretrain" ? Phase::Pretrain : Phase::Finetune;
    t.lambda = j.at("lambda").get<double>();
    t.lr = j.at("lr").get<double>();
    t.weight_decay = j.at("weight_decay").get<double>();
    t.steps = j.at("steps").get<int64_t>();
    t.batch = j.at("batch").get<int64_t>();
    t.lora_rank = j.at("lora_rank").get<int64_t>();
    t.lora_scale = j.at("lora_scale").get<double>();
    t.grad_clip = j.at("grad_clip").get<double>();
    t.seed = j.at("seed").get<uint64_t>();
    t.checkpoint_interval = j.at("checkpoint_interval").get<int64_t>();
    t.eval_samples = j.at("eval_samples").get<int64_t>();
    t.init_checkpoint = j.at("init_checkpoint").get<std::string>();
    return t;
}

nlohmann::json metrics_to_json(const CheckpointMetrics& m) {
    return {{"step", m.step},
            {"ce", m.ce},
            {"decor", m.decor},
            {"mean_cos_sq", m.mean_cos_sq},
            {"ter", m.ter}};
}

}  // namespace

void ExperimentConfig::validate() const {
    switch (task) {
        case TaskKind::Asr:
            SINKLAB_CHECK(rate_audio >= 1, "asr requires an audio rate >= 1");
            SINKLAB_CHECK(rate_video < 0, "asr forbids a video rate");
            break;
        case TaskKind::Vsr:
            SINKLAB_CHECK(rate_video >= 1, "vsr requires a video rate >= 1");
            SINKLAB_CHECK(rate_audio < 0, "vsr forbids an audio rate");
            break;
        case TaskKind::Avsr:
            SINKLAB_CHECK(rate_audio >= 1 && rate_video >= 1,
                          "avsr requires both compression rates");
            break;
    }
    derived_model().validate();
    toy.validate();
    derived_train().validate();
    SINKLAB_CHECK(tau > 1.0, "tau must exceed 1");
    SINKLAB_CHECK(sink_rule.ratio > 1.0, "sink ratio must exceed 1");
    SINKLAB_CHECK(!lambda_grid.empty(), "lambda grid must be non-empty");
    for (double l : lambda_grid) SINKLAB_CHECK(l >= 0.0, "lambda grid entries must be >= 0");
    SINKLAB_CHECK(!out_dir.empty(), "out_dir must be set");
}

ModelConfig ExperimentConfig::derived_model() const {
    ModelConfig m = model;
    m.vocab = tok::kSymbolBase + toy.symbol_vocab;
    m.audio_embed_dim = uses_audio() ? toy.audio_embed_dim : 0;
    m.video_embed_dim = uses_video() ? toy.video_embed_dim : 0;
    return m;
}

TrainConfig ExperimentConfig::derived_train() const {
    TrainConfig t = train;
    t.rate_audio = uses_audio() ? rate_audio : 1;
    t.rate_video = uses_video() ? rate_video : 1;
    return t;
}

AnalysisOptions ExperimentConfig::analysis_options() const {
    AnalysisOptions o;
    o.tau = tau;
    o.rule = sink_rule;
    o.pairwise_cosine = report.pairwise_cosine;
    return o;
}

std::string experiment_config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json rates;
    if (cfg.rate_audio >= 0) rates["audio"] = cfg.rate_audio;
    if (cfg.rate_video >= 0) rates["video"] = cfg.rate_video;
    nlohmann::json model = {{"layers", cfg.model.layers},   {"d_model", cfg.model.d_model},
                            {"heads", cfg.model.heads},     {"d_ff", cfg.model.d_ff},
                            {"max_seq", cfg.model.max_seq}, {"rope_base", cfg.model.rope_base},
                            {"norm", cfg.model.norm == NormKind::Rms ? "rms" : "layernorm"}};
    nlohmann::json j = {
        {"task", task_name(cfg.task)},
        {"rates", rates},
        {"model", model},
        {"toy_task", toy_to_json(cfg.toy)},
        {"train", train_to_json(cfg.train)},
        {"out_dir", cfg.out_dir},
        {"report",
         {{"pairwise_cosine", cfg.report.pairwise_cosine},
          {"heatmap_export", cfg.report.heatmap_export}}},
        {"analysis",
         {{"tau", cfg.tau},
          {"sink_ratio", cfg.sink_rule.ratio},
          {"min_layers_frac", cfg.sink_rule.min_layers_frac}}},
        {"lambda_grid", cfg.lambda_grid}};
    return j.dump(2);
}

ExperimentConfig experiment_config_from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    ExperimentConfig cfg;
    cfg.task = task_from_name(j.at("task").get<std::string>());
    const auto& rates = j.at("rates");
    cfg.rate_audio = rates.contains("audio") ? rates.at("audio").get<int64_t>() : -1;
    cfg.rate_video = rates.contains("video") ? rates.at("video").get<int64_t>() : -1;
    const auto& m = j.at("model");
    cfg.model.layers = m.at("layers").get<int64_t>();
    cfg.model.d_model = m.at("d_model").get<int64_t>();
    cfg.model.heads = m.at("heads").get<int64_t>();
    cfg.model.d_ff = m.at("d_ff").get<int64_t>();
    cfg.model.max_seq = m.at("max_seq").get<int64_t>();
    cfg.model.rope_base = m.at("rope_base").get<double>();
    const std::string norm = m.at("norm").get<std::string>();
    SINKLAB_CHECK(norm == "rms" || norm == "layernorm", "unknown norm kind: " << norm);
    cfg.model.norm = norm == "rms" ? NormKind::Rms : NormKind::LayerNorm;
    cfg.toy = toy_from_json(j.at("toy_task"));
    cfg.train = train_from_json(j.at("train"));
    cfg.out_dir = j.at("out_dir").get<std::string>();
    cfg.report.pairwise_cosine = j.at("report").at("pairwise_cosine").get<bool>();
    cfg.report.heatmap_export = j.at("report").at("heatmap_export").get<bool>();
    cfg.tau = j.at("analysis").at("tau").get<double>();
    cfg.sink_rule.ratio = j.at("analysis").at("sink_ratio").get<double>();
    cfg.sink_rule.min_layers_frac = j.at("analysis").at("min_layers_frac").get<double>();
    cfg.lambda_grid = j.at("lambda_grid").get<std::vector<double>>();
    return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
    return experiment_config_from_json(read_text_file(path));
}

// ---------------------------------------------------------------------------

namespace {

struct SampleContext {
    ExperimentConfig cfg;
    ModelConfig model;
    Checkpoint ckpt;
    SequenceSpec seq;
};

// Rebuilds the held-out sample `index` of the checkpoint's experiment stream.
SampleContext make_sample_context(const fs::path& checkpoint_path, int64_t sample_index) {
    SampleContext sc;
    sc.ckpt = load_checkpoint(checkpoint_path);
    SINKLAB_CHECK_RUNTIME(!sc.ckpt.experiment_json.empty(),
                          "checkpoint carries no experiment config: " << checkpoint_path);
    sc.cfg = experiment_config_from_json(sc.ckpt.experiment_json);
    sc.model = sc.ckpt.config;
    SINKLAB_CHECK(sample_index >= 0, "sample index must be >= 0");
    const ToyTask task(sc.cfg.toy);
    Rng eval_rng(derive_seed(sc.cfg.train.seed, 2));
    ToySample sample;
    for (int64_t k = 0; k <= sample_index; ++k) sample = task.sample(eval_rng);
    const TrainConfig tr = sc.cfg.derived_train();
    sc.seq = build_sequence(sample.transcript, sample.audio, sample.video, sc.cfg.task,
                            tr.rate_audio, tr.rate_video, sc.model.max_seq);
    return sc;
}

void write_report_files(const fs::path& dir, const std::string& stem, const SinkReport& report,
                        bool heatmaps) {
    write_text_file(dir / (stem + ".report.json"), sink_report_to_json(report));
    if (heatmaps) {
        write_text_file(dir / (stem + ".alpha.tsv"), alpha_heatmap_tsv(report.alpha));
        write_text_file(dir / (stem + ".cosine.tsv"), cosine_heatmap_tsv(report.cosine));
    }
}

nlohmann::json gate_stats_to_json(const GateStats& g) {
    return {{"layer", g.layer},
            {"sink_min", g.sink_min},
            {"nonsink_max", g.nonsink_max},
            {"separating_features", g.separating_features}};
}

}  // namespace

RunOutput cmd_train(const ExperimentConfig& cfg) {
    cfg.validate();
    const fs::path run_dir(cfg.out_dir);
    fs::create_directories(run_dir);
    write_text_file(run_dir / "config.json", experiment_config_to_json(cfg));

    const ModelConfig model_cfg = cfg.derived_model();
    const TrainConfig train_cfg = cfg.derived_train();
    const std::string snapshot = experiment_config_to_json(cfg);

    RunOutput out;
    out.run_dir = run_dir;
    try {
        CheckpointSink sink = [&](const CheckpointEvent& ev) {
            const std::string tag = step_tag(ev.metrics.step);
            write_text_file(run_dir / "metrics" / (tag + ".json"),
                            metrics_to_json(ev.metrics).dump(2));
            write_report_files(run_dir / "reports", tag, ev.report, cfg.report.heatmap_export);
            Checkpoint ck;
            ck.config = model_cfg;
            ck.params = ev.params;
            ck.adapters = ev.adapters;
            ck.seed = train_cfg.seed;
            ck.experiment_json = snapshot;
            save_checkpoint(run_dir / "checkpoints" / (tag + ".ckpt"), ck);
            if (ev.final_step) save_checkpoint(run_dir / "checkpoints" / "final.ckpt", ck);
        };

        if (train_cfg.phase == Phase::Pretrain) {
            out.outcome = run_pretrain(model_cfg, cfg.toy, train_cfg, sink);
        } else {
            SINKLAB_CHECK(!train_cfg.init_checkpoint.empty(),
                          "finetune requires train.init_checkpoint");
            Checkpoint init = load_checkpoint(train_cfg.init_checkpoint);
            SINKLAB_CHECK_RUNTIME(
                model_config_to_json_string(init.config) ==
                    model_config_to_json_string(model_cfg),
                "init checkpoint model config disagrees with the experiment config");
            out.outcome =
                run_finetune(model_cfg, cfg.toy, train_cfg, cfg.task, init.params, sink);
        }

        const EmergenceSummary em = checkpoint_timeline(out.outcome.metrics.sink_reports);
        nlohmann::json summary;
        summary["status"] = "ok";
        summary["phase"] = train_cfg.phase == Phase::Pretrain ? "pretrain" : "finetune";
        summary["final"] = metrics_to_json(out.outcome.metrics.checkpoints.back());
        nlohmann::json first_step = nlohmann::json::object();
        for (const auto& [token, step] : em.first_step)
            first_step[std::to_string(token)] = step;
        summary["emergence"] = {{"bos_sink_from_start", em.bos_sink_from_start},
                                {"first_step", first_step}};
        nlohmann::json steps = nlohmann::json::array();
        for (const auto& m : out.outcome.metrics.checkpoints) steps.push_back(m.step);
        summary["checkpoint_steps"] = steps;
        write_text_file(run_dir / "summary.json", summary.dump(2));
    } catch (const std::exception& e) {
        write_text_file(run_dir / "FAILED", std::string(e.what()) + "\n");
        throw;
    }
    return out;
}

fs::path cmd_analyze(const fs::path& checkpoint_path, int64_t sample_index,
                     const fs::path& out_dir, std::optional<bool> pairwise_override) {
    SampleContext sc = make_sample_context(checkpoint_path, sample_index);
    AnalysisOptions opts = sc.cfg.analysis_options();
    if (pairwise_override) opts.pairwise_cosine = *pairwise_override;

    Tape tape;
    std::vector<LoraAdapter>* adapters = sc.ckpt.adapters.empty() ? nullptr : &sc.ckpt.adapters;
    ModelGraph graph(tape, sc.model, sc.ckpt.params, adapters, TrainMode::Inference);
    ForwardResult fwd = graph.forward(sc.seq, {}, true);
    SinkReport report = compute_sink_report(fwd.trace, opts);

    fs::create_directories(out_dir);
    write_report_files(out_dir, "analysis", report, sc.cfg.report.heatmap_export);
    // Gate-projection statistics at the attribution layer (layer 2 unless the
    // report flagged a different origin).
    const int64_t gate_layer =
        report.attribution.earliest_mlp_layer > 0 ? report.attribution.earliest_mlp_layer : 2;
    const GateStats gate =
        gate_projection_stats(fwd.trace, sc.model, sc.ckpt.params, gate_layer, report.sinks);
    write_text_file(out_dir / "gate_stats.json", gate_stats_to_json(gate).dump(2));
    return out_dir;
}

fs::path cmd_intervene(const fs::path& checkpoint_path, const InterventionSpec& spec,
                       int64_t sample_index, const fs::path& out_dir) {
    SampleContext sc = make_sample_context(checkpoint_path, sample_index);
    std::vector<LoraAdapter>* adapters = sc.ckpt.adapters.empty() ? nullptr : &sc.ckpt.adapters;
    const InterventionOutcome outcome = intervention_experiment(
        sc.model, sc.ckpt.params, adapters, sc.seq, spec, sc.cfg.analysis_options());

    fs::create_directories(out_dir);
    write_report_files(out_dir, "baseline", outcome.baseline, sc.cfg.report.heatmap_export);
    write_report_files(out_dir, "intervened", outcome.intervened, sc.cfg.report.heatmap_export);

    nlohmann::json diff;
    diff["identical"] = outcome.baseline == outcome.intervened;
    diff["layer"] = spec.layer;
    diff["token"] = spec.token;
    diff["mode"] = spec.mode == InterventionSpec::Mode::TowardBos
                       ? "toward-bos"
                       : "toward-token:" + std::to_string(spec.target);
    std::vector<std::vector<double>> dalpha = outcome.intervened.alpha.alpha;
    std::vector<std::vector<double>> dcos = outcome.intervened.cosine.to_bos;
    for (size_t l = 0; l < dalpha.size(); ++l)
        for (size_t i = 0; i < dalpha[l].size(); ++i) {
            dalpha[l][i] -= outcome.baseline.alpha.alpha[l][i];
            dcos[l][i] -= outcome.baseline.cosine.to_bos[l][i];
        }
    diff["delta_alpha"] = dalpha;
    diff["delta_cosine_to_bos"] = dcos;
    nlohmann::json theta_changes = nlohmann::json::array();
    for (size_t l = 0; l < outcome.baseline.theta.theta.size(); ++l) {
        for (size_t i = 0; i < outcome.baseline.theta.theta[l].size(); ++i) {
            const auto& before = outcome.baseline.theta.theta[l][i];
            const auto& after = outcome.intervened.theta.theta[l][i];
            if (before == after) continue;
            std::vector<int64_t> added, removed;
            for (int64_t f : after)
                if (!std::binary_search(before.begin(), before.end(), f)) added.push_back(f);
            for (int64_t f : before)
                if (!std::binary_search(after.begin(), after.end(), f)) removed.push_back(f);
            theta_changes.push_back({{"layer", static_cast<int64_t>(l + 1)},
                                     {"token", static_cast<int64_t>(i)},
                                     {"added", added},
                                     {"removed", removed}});
        }
    }
    diff["theta_changes"] = theta_changes;
    write_text_file(out_dir / "diff.json", diff.dump(2));
    return out_dir;
}

std::vector<SweepRow> cmd_sweep(const ExperimentConfig& base, const std::vector<double>& lambdas,
                                const std::vector<std::pair<int64_t, int64_t>>& rates,
                                const fs::path& out_dir) {
    SINKLAB_CHECK(!lambdas.empty() && !rates.empty(), "sweep needs non-empty lambda and rate lists");
    base.validate();
    fs::create_directories(out_dir);

    const int64_t n_rows = static_cast<int64_t>(lambdas.size() * rates.size());
    std::vector<SweepRow> rows(static_cast<size_t>(n_rows));
    for (int64_t r = 0; r < static_cast<int64_t>(rates.size()); ++r) {
        for (int64_t l = 0; l < static_cast<int64_t>(lambdas.size()); ++l) {
            const int64_t idx = r * static_cast<int64_t>(lambdas.size()) + l;
            SweepRow& row = rows[static_cast<size_t>(idx)];
            row.index = idx;
            row.task = base.task;
            row.rate_audio = base.uses_audio() ? rates[static_cast<size_t>(r)].first : -1;
            row.rate_video = base.uses_video() ? rates[static_cast<size_t>(r)].second : -1;
            row.lambda = lambdas[static_cast<size_t>(l)];
            row.seed = derive_seed(base.train.seed, static_cast<uint64_t>(idx));
        }
    }

#pragma omp parallel for schedule(dynamic)
    for (int64_t idx = 0; idx < n_rows; ++idx) {
        SweepRow& row = rows[static_cast<size_t>(idx)];
        try {
            ExperimentConfig cfg = base;
            cfg.rate_audio = row.rate_audio;
            cfg.rate_video = row.rate_video;
            cfg.train.lambda = row.lambda;
            cfg.train.seed = row.seed;
            char tag[32];
            std::snprintf(tag, sizeof(tag), "row_%03lld", static_cast<long long>(idx));
            cfg.out_dir = (out_dir / tag).string();
            const RunOutput run = cmd_train(cfg);
            const CheckpointMetrics& fin = run.outcome.metrics.checkpoints.back();
            row.final_ter = fin.ter;
            row.final_mean_cos_sq = fin.mean_cos_sq;
            row.sink_count = static_cast<int64_t>(
                run.outcome.metrics.sink_reports.back().sinks.global_sinks.size());
            row.ok = true;
        } catch (const std::exception& e) {
            row.ok = false;
            row.error = e.what();
        }
    }
    write_text_file(out_dir / "sweep.tsv", sweep_table_tsv(rows));
    return rows;
}

std::string sweep_table_tsv(const std::vector<SweepRow>& rows) {
    std::string out = "row\ttask\trate_audio\trate_video\tlambda\tter\tmean_cos_sq\tsinks\tstatus\n";
    char buf[256];
    for (const SweepRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%lld\t%s\t%lld\t%lld\t%.17g\t%.17g\t%.17g\t%lld\t%s\n",
                      static_cast<long long>(r.index), task_name(r.task),
                      static_cast<long long>(r.rate_audio), static_cast<long long>(r.rate_video),
                      r.lambda, r.final_ter, r.final_mean_cos_sq,
                      static_cast<long long>(r.sink_count), r.ok ? "ok" : "failed");
        out += buf;
    }
    return out;
}

}  // namespace sinklab
