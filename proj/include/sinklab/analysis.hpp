#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sinklab/model.hpp"

namespace sinklab {

// Pure diagnostics over ForwardTraces. Every function here is a function of
// its inputs only and safe for unrestricted concurrent use.

// α[l][i]: mean attention token i receives across heads and the causally
// permitted attending tokens k >= i. Layers are 1-based throughout; index
// [l-1] stores layer l.
struct AttentionScoreMatrix {
    int64_t layers = 0;
    int64_t seq_len = 0;
    std::vector<std::vector<double>> alpha;
    std::vector<Role> roles;

    bool operator==(const AttentionScoreMatrix&) const = default;
};

struct SinkRule {
    double ratio = 5.0;            // sink if alpha >= ratio * layer median
    double min_layers_frac = 0.5;  // global if a sink in this fraction of interior layers

    bool operator==(const SinkRule&) const = default;
};

struct SinkSet {
    std::vector<std::vector<int64_t>> per_layer;  // all layers, sorted token indices
    std::vector<int64_t> global_sinks;            // classified over interior layers [2, L-1]
    SinkRule rule;

    bool is_global_sink(int64_t token) const;
    bool operator==(const SinkSet&) const = default;
};

// Θ_i^l: feature indices with |H^l[i,j]| >= max(tau * median(|H^l|), 1e-6).
struct MassiveActivationReport {
    double tau = 1000.0;
    std::vector<double> layer_median;                      // median of |H^l| over all N×d entries
    std::vector<std::vector<std::vector<int64_t>>> theta;  // [l-1][token] sorted feature ids

    bool operator==(const MassiveActivationReport&) const = default;
};

struct ThetaConsistency {
    struct LayerResult {
        int64_t layer = 0;
        bool sinks_share = false;    // all sink tokens carry one identical Θ
        bool nonsinks_empty = false; // every non-sink Θ is empty
        std::vector<int64_t> shared; // the shared set when sinks_share holds

        bool operator==(const LayerResult&) const = default;
    };
    std::vector<LayerResult> layers;  // interior layers [2, L-1]

    bool operator==(const ThetaConsistency&) const = default;
};

struct CosineReport {
    std::vector<std::vector<double>> to_bos;  // [l-1][i] = cos(H^l[i], H^l[0])
    bool has_pairwise = false;
    std::vector<std::vector<std::vector<double>>> pairwise;  // [l-1][i][j] when enabled

    bool operator==(const CosineReport&) const = default;
};

struct AttributionReport {
    struct LayerStats {
        double mhsa_sink_max = 0.0;
        double mhsa_nonsink_max = 0.0;
        double mlp_sink_max = 0.0;
        double mlp_nonsink_max = 0.0;

        bool operator==(const LayerStats&) const = default;
    };
    std::vector<LayerStats> layers;
    // Earliest layer whose MLP contribution to some sink token exceeds
    // tau * median(|H^l|); -1 when no layer qualifies.
    int64_t earliest_mlp_layer = -1;
    double tau = 1000.0;

    bool operator==(const AttributionReport&) const = default;
};

struct GateStats {
    int64_t layer = 0;
    std::vector<double> sink_min;               // per inner feature; empty when no sinks
    std::vector<double> nonsink_max;            // per inner feature
    std::vector<int64_t> separating_features;   // sink_min > 0 > nonsink_max
};

struct AnalysisOptions {
    double tau = 1000.0;
    SinkRule rule;
    bool pairwise_cosine = false;
    // Diagnostics default to interior layers [2, L-1]; this widens the sweeps
    // that honor it (theta consistency) to the full layer range.
    bool full_layer_range = false;
};

struct SinkReport {
    int64_t schema_version = 1;
    int64_t step = -1;  // training step the snapshot was taken at; -1 outside training
    int64_t layers = 0;
    int64_t seq_len = 0;
    std::vector<Role> roles;
    AttentionScoreMatrix alpha;
    SinkSet sinks;
    MassiveActivationReport theta;
    ThetaConsistency consistency;
    CosineReport cosine;
    AttributionReport attribution;

    bool operator==(const SinkReport&) const = default;
};

double median_abs(const Tensor& t);

AttentionScoreMatrix attention_receive_scores(const ForwardTrace& trace);
SinkSet classify_sinks(const AttentionScoreMatrix& scores, double ratio, double min_layers_frac);
MassiveActivationReport massive_activation_indices(const ForwardTrace& trace, double tau);
ThetaConsistency theta_consistency(const MassiveActivationReport& report, const SinkSet& sinks,
                                   bool full_layer_range = false);
CosineReport cosine_to_bos(const ForwardTrace& trace, bool pairwise = false);
AttributionReport component_attribution(const ForwardTrace& trace, const SinkSet& sinks,
                                        double tau);
GateStats gate_projection_stats(const ForwardTrace& trace, const ModelConfig& cfg,
                                const ModelParams& params, int64_t layer, const SinkSet& sinks);

// Mean over interior layers and non-BOS, non-pad tokens of cos²(H^l[i], H^l[0]);
// the value twin of the decorrelation training term.
double mean_bos_alignment_sq(const ForwardTrace& trace);

// Positionally nearest token not in `sinks`, ties broken toward the lower index.
int64_t nearest_non_sink(int64_t token, const std::vector<int64_t>& sinks, int64_t seq_len);

SinkReport compute_sink_report(const ForwardTrace& trace, const AnalysisOptions& opts);

struct InterventionOutcome {
    SinkReport baseline;
    SinkReport intervened;
};

// Runs forward_with_trace twice, with and without the edit, and bundles both
// diagnostic sets. Draws no conclusion — that is experiment output.
InterventionOutcome intervention_experiment(const ModelConfig& cfg, ModelParams& params,
                                            std::vector<LoraAdapter>* adapters,
                                            const SequenceSpec& seq,
                                            const InterventionSpec& spec,
                                            const AnalysisOptions& opts);

struct EmergenceSummary {
    std::map<int64_t, int64_t> first_step;  // token -> first step in the global sink set
    bool bos_sink_from_start = false;
};

// Reports must share one sequence layout and be tagged with ascending steps.
EmergenceSummary checkpoint_timeline(const std::vector<SinkReport>& reports);

// Structured-text (JSON) serialization; re-parsing reproduces the structures
// exactly, including every floating-point value.
std::string sink_report_to_json(const SinkReport& report);
SinkReport sink_report_from_json(const std::string& text);

// Delimited heatmap rows "layer<TAB>token<TAB>value", one per (l, i).
std::string alpha_heatmap_tsv(const AttentionScoreMatrix& scores);
std::string cosine_heatmap_tsv(const CosineReport& cosine);

}  // namespace sinklab
