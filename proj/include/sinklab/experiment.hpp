#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sinklab/analysis.hpp"
#include "sinklab/train.hpp"

namespace sinklab {

struct ReportOptions {
    bool pairwise_cosine = false;
    bool heatmap_export = true;
};

// Field-for-field mirror of the experiment config file. Rates use -1 for
// "absent"; validation rejects every task/rate contradiction before compute.
struct ExperimentConfig {
    TaskKind task = TaskKind::Avsr;
    int64_t rate_audio = 16;
    int64_t rate_video = 5;
    ModelConfig model;  // vocab and projector widths are derived, not configured
    ToyTaskSpec toy;
    TrainConfig train;
    std::string out_dir = "runs/run";
    ReportOptions report;
    double tau = 1000.0;
    SinkRule sink_rule;
    std::vector<double> lambda_grid = {10.0, 100.0, 10000.0};

    void validate() const;
    bool uses_audio() const { return task != TaskKind::Vsr; }
    bool uses_video() const { return task != TaskKind::Asr; }

    // Model/train configs with the derived fields (vocab, projector widths,
    // rates) filled in.
    ModelConfig derived_model() const;
    TrainConfig derived_train() const;
    AnalysisOptions analysis_options() const;
};

std::string experiment_config_to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_config_from_json(const std::string& text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct RunOutput {
    std::filesystem::path run_dir;
    TrainOutcome outcome;
};

// Executes the configured phase under cfg.out_dir: config snapshot, checkpoint
// files, one metrics file per checkpoint, sink reports (plus heatmap exports),
// and a final summary. A mid-run failure leaves partial outputs plus a FAILED
// marker and rethrows.
RunOutput cmd_train(const ExperimentConfig& cfg);

// Fresh diagnostics over a stored checkpoint: alpha matrix, sink set, theta,
// cosine, attribution, gate-projection stats, heatmap exports.
std::filesystem::path cmd_analyze(const std::filesystem::path& checkpoint_path,
                                  int64_t sample_index, const std::filesystem::path& out_dir,
                                  std::optional<bool> pairwise_override = {});

// Baseline and intervened report bundles side by side plus a diff summary.
std::filesystem::path cmd_intervene(const std::filesystem::path& checkpoint_path,
                                    const InterventionSpec& spec, int64_t sample_index,
                                    const std::filesystem::path& out_dir);

struct SweepRow {
    int64_t index = 0;
    TaskKind task = TaskKind::Avsr;
    int64_t rate_audio = -1;
    int64_t rate_video = -1;
    double lambda = 0.0;
    uint64_t seed = 0;
    bool ok = false;
    std::string error;
    double final_ter = 0.0;
    double final_mean_cos_sq = 0.0;
    int64_t sink_count = 0;
};

// Cross product of rates × lambdas; per-row RNG streams derive from
// (base seed, row index). Row failures are recorded and the sweep continues.
std::vector<SweepRow> cmd_sweep(const ExperimentConfig& base,
                                const std::vector<double>& lambdas,
                                const std::vector<std::pair<int64_t, int64_t>>& rates,
                                const std::filesystem::path& out_dir);

std::string sweep_table_tsv(const std::vector<SweepRow>& rows);

}  // namespace sinklab
