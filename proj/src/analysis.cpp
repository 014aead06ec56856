#include "sinklab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "sinklab/kernels.hpp"
#include "serialize_internal.hpp"

namespace sinklab {

namespace {

// Interior layers [2, L-1], 1-based; requires L >= 4 so the range is non-empty.
std::vector<int64_t> interior_layers(int64_t layers) {
    std::vector<int64_t> out;
    for (int64_t l = 2; l <= layers - 1; ++l) out.push_back(l);
    return out;
}

std::vector<int64_t> layer_range(int64_t layers, bool full) {
    if (!full) return interior_layers(layers);
    std::vector<int64_t> out;
    for (int64_t l = 1; l <= layers; ++l) out.push_back(l);
    return out;
}

double median_of(std::vector<double> v) {
    SINKLAB_CHECK(!v.empty(), "median of empty set");
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    if (n % 2 == 1) return v[n / 2];
    return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

double median_abs(const Tensor& t) {
    std::vector<double> mags(static_cast<size_t>(t.numel()));
    for (int64_t i = 0; i < t.numel(); ++i) mags[static_cast<size_t>(i)] = std::abs(t[i]);
    return median_of(std::move(mags));
}

bool SinkSet::is_global_sink(int64_t token) const {
    return std::binary_search(global_sinks.begin(), global_sinks.end(), token);
}

AttentionScoreMatrix attention_receive_scores(const ForwardTrace& trace) {
    SINKLAB_CHECK(!trace.attn.empty(), "trace carries no attention maps");
    const int64_t layers = trace.layers, n = trace.seq_len, heads = trace.heads;
    AttentionScoreMatrix out;
    out.layers = layers;
    out.seq_len = n;
    out.roles = trace.roles;
    out.alpha.assign(static_cast<size_t>(layers), std::vector<double>(static_cast<size_t>(n), 0.0));
    for (int64_t l = 0; l < layers; ++l) {
        const auto& maps = trace.attn[static_cast<size_t>(l)];
        SINKLAB_CHECK(static_cast<int64_t>(maps.size()) == heads, "trace attention maps incomplete");
        for (int64_t i = 0; i < n; ++i) {
            double total = 0.0;
            for (int64_t h = 0; h < heads; ++h)
                for (int64_t k = 0; k < n; ++k) total += maps[static_cast<size_t>(h)].at(k, i);
            // Causality permits exactly n - i attending tokens (k >= i).
            out.alpha[static_cast<size_t>(l)][static_cast<size_t>(i)] =
                total / (static_cast<double>(heads) * static_cast<double>(n - i));
        }
    }
    return out;
}

SinkSet classify_sinks(const AttentionScoreMatrix& scores, double ratio,
                       double min_layers_frac) {
    SINKLAB_CHECK(ratio > 1.0, "sink ratio must exceed 1");
    SINKLAB_CHECK(min_layers_frac > 0.0 && min_layers_frac <= 1.0,
                  "min_layers_frac must lie in (0, 1]");
    SinkSet out;
    out.rule = {ratio, min_layers_frac};
    const int64_t layers = scores.layers, n = scores.seq_len;
    out.per_layer.resize(static_cast<size_t>(layers));
    for (int64_t l = 0; l < layers; ++l) {
        const double med = median_of(scores.alpha[static_cast<size_t>(l)]);
        for (int64_t i = 0; i < n; ++i)
            if (scores.alpha[static_cast<size_t>(l)][static_cast<size_t>(i)] >= ratio * med)
                out.per_layer[static_cast<size_t>(l)].push_back(i);
    }
    const auto interior = interior_layers(layers);
    const double need = min_layers_frac * static_cast<double>(interior.size());
    for (int64_t i = 0; i < n; ++i) {
        int64_t hits = 0;
        for (int64_t l : interior)
            if (std::binary_search(out.per_layer[static_cast<size_t>(l - 1)].begin(),
                                   out.per_layer[static_cast<size_t>(l - 1)].end(), i))
                ++hits;
        if (static_cast<double>(hits) >= need) out.global_sinks.push_back(i);
    }
    return out;
}

MassiveActivationReport massive_activation_indices(const ForwardTrace& trace, double tau) {
    SINKLAB_CHECK(tau > 1.0, "tau must exceed 1");
    constexpr double kAbsFloor = 1e-6;  // guards the all-zero-median degenerate case
    MassiveActivationReport out;
    out.tau = tau;
    const int64_t layers = trace.layers, n = trace.seq_len, d = trace.d_model;
    out.layer_median.resize(static_cast<size_t>(layers));
    out.theta.resize(static_cast<size_t>(layers));
    for (int64_t l = 1; l <= layers; ++l) {
        const Tensor& h = trace.hidden_at(l);
        const double med = median_abs(h);
        out.layer_median[static_cast<size_t>(l - 1)] = med;
        const double threshold = std::max(tau * med, kAbsFloor);
        auto& per_token = out.theta[static_cast<size_t>(l - 1)];
        per_token.resize(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < d; ++j)
                if (std::abs(h.at(i, j)) >= threshold)
                    per_token[static_cast<size_t>(i)].push_back(j);
    }
    return out;
}

ThetaConsistency theta_consistency(const MassiveActivationReport& report, const SinkSet& sinks,
                                   bool full_layer_range) {
    ThetaConsistency out;
    const int64_t layers = static_cast<int64_t>(report.theta.size());
    for (int64_t l : layer_range(layers, full_layer_range)) {
        ThetaConsistency::LayerResult res;
        res.layer = l;
        const auto& per_token = report.theta[static_cast<size_t>(l - 1)];
        const int64_t n = static_cast<int64_t>(per_token.size());
        res.sinks_share = true;
        res.nonsinks_empty = true;
        bool first = true;
        for (int64_t i = 0; i < n; ++i) {
            if (sinks.is_global_sink(i)) {
                if (first) {
                    res.shared = per_token[static_cast<size_t>(i)];
                    first = false;
                } else if (per_token[static_cast<size_t>(i)] != res.shared) {
                    res.sinks_share = false;
                }
            } else if (!per_token[static_cast<size_t>(i)].empty()) {
                res.nonsinks_empty = false;
            }
        }
        if (!res.sinks_share) res.shared.clear();
        out.layers.push_back(std::move(res));
    }
    return out;
}

namespace {
double cosine_rows(const Tensor& h, int64_t i, int64_t j) {
    double dot = 0.0, ni = 0.0, nj = 0.0;
    for (int64_t c = 0; c < h.dim(1); ++c) {
        dot += h.at(i, c) * h.at(j, c);
        ni += h.at(i, c) * h.at(i, c);
        nj += h.at(j, c) * h.at(j, c);
    }
    if (ni == 0.0 || nj == 0.0) return 0.0;  // keeps reports total over padded fixtures
    return dot / (std::sqrt(ni) * std::sqrt(nj));
}
}  // namespace

CosineReport cosine_to_bos(const ForwardTrace& trace, bool pairwise) {
    CosineReport out;
    out.has_pairwise = pairwise;
    const int64_t layers = trace.layers, n = trace.seq_len;
    for (int64_t l = 1; l <= layers; ++l) {
        const Tensor& h = trace.hidden_at(l);
        std::vector<double> row(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) row[static_cast<size_t>(i)] = cosine_rows(h, i, 0);
        out.to_bos.push_back(std::move(row));
        if (pairwise) {
            std::vector<std::vector<double>> mat(static_cast<size_t>(n),
                                                 std::vector<double>(static_cast<size_t>(n)));
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < n; ++j)
                    mat[static_cast<size_t>(i)][static_cast<size_t>(j)] = cosine_rows(h, i, j);
            out.pairwise.push_back(std::move(mat));
        }
    }
    return out;
}

AttributionReport component_attribution(const ForwardTrace& trace, const SinkSet& sinks,
                                        double tau) {
    AttributionReport out;
    out.tau = tau;
    const int64_t layers = trace.layers, n = trace.seq_len, d = trace.d_model;
    for (int64_t l = 1; l <= layers; ++l) {
        const Tensor& o = trace.attn_out[static_cast<size_t>(l - 1)];
        const Tensor& m = trace.mlp_out[static_cast<size_t>(l - 1)];
        AttributionReport::LayerStats st;
        for (int64_t i = 0; i < n; ++i) {
            const bool sink = sinks.is_global_sink(i);
            for (int64_t j = 0; j < d; ++j) {
                const double ov = std::abs(o.at(i, j));
                const double mv = std::abs(m.at(i, j));
                if (sink) {
                    st.mhsa_sink_max = std::max(st.mhsa_sink_max, ov);
                    st.mlp_sink_max = std::max(st.mlp_sink_max, mv);
                } else {
                    st.mhsa_nonsink_max = std::max(st.mhsa_nonsink_max, ov);
                    st.mlp_nonsink_max = std::max(st.mlp_nonsink_max, mv);
                }
            }
        }
        out.layers.push_back(st);
        if (out.earliest_mlp_layer < 0 && !sinks.global_sinks.empty()) {
            const double med = median_abs(trace.hidden_at(l));
            const double threshold = std::max(tau * med, 1e-6);
            if (st.mlp_sink_max >= threshold) out.earliest_mlp_layer = l;
        }
    }
    return out;
}

GateStats gate_projection_stats(const ForwardTrace& trace, const ModelConfig& cfg,
                                const ModelParams& params, int64_t layer, const SinkSet& sinks) {
    SINKLAB_CHECK(layer >= 1 && layer <= trace.layers, "gate stats layer out of range");
    const LayerParams& lp = params.layers[static_cast<size_t>(layer - 1)];
    // The MLP input at layer l is LN(H^{l-1} + O^l), recomputed from the trace.
    Tensor pre = kernels::add(trace.hidden_at(layer - 1),
                              trace.attn_out[static_cast<size_t>(layer - 1)]);
    Tensor x = cfg.norm == NormKind::Rms ? kernels::rms_norm(pre, lp.mlp_gain, 1e-6)
                                         : kernels::layer_norm(pre, lp.mlp_gain, 1e-6);
    Tensor gate = kernels::matmul(x, lp.w_gate);

    GateStats out;
    out.layer = layer;
    const int64_t n = gate.dim(0), dff = gate.dim(1);
    const bool have_sinks = !sinks.global_sinks.empty();
    if (have_sinks) out.sink_min.assign(static_cast<size_t>(dff), HUGE_VAL);
    out.nonsink_max.assign(static_cast<size_t>(dff), -HUGE_VAL);
    bool have_nonsink = false;
    for (int64_t i = 0; i < n; ++i) {
        const bool sink = sinks.is_global_sink(i);
        if (!sink) have_nonsink = true;
        for (int64_t f = 0; f < dff; ++f) {
            const double v = gate.at(i, f);
            if (sink)
                out.sink_min[static_cast<size_t>(f)] =
                    std::min(out.sink_min[static_cast<size_t>(f)], v);
            else
                out.nonsink_max[static_cast<size_t>(f)] =
                    std::max(out.nonsink_max[static_cast<size_t>(f)], v);
        }
    }
    if (!have_nonsink) out.nonsink_max.clear();
    if (have_sinks && have_nonsink) {
        for (int64_t f = 0; f < dff; ++f)
            if (out.sink_min[static_cast<size_t>(f)] > 0.0 &&
                out.nonsink_max[static_cast<size_t>(f)] < 0.0)
                out.separating_features.push_back(f);
    }
    return out;
}

double mean_bos_alignment_sq(const ForwardTrace& trace) {
    const auto interior = interior_layers(trace.layers);
    SINKLAB_CHECK(!interior.empty(), "need at least 4 layers for interior diagnostics");
    double total = 0.0;
    int64_t count = 0;
    for (int64_t l : interior) {
        const Tensor& h = trace.hidden_at(l);
        for (int64_t i = 1; i < trace.seq_len; ++i) {
            if (!trace.roles.empty() && trace.roles[static_cast<size_t>(i)] == Role::Pad) continue;
            const double c = cosine_rows(h, i, 0);
            total += c * c;
            ++count;
        }
    }
    SINKLAB_CHECK(count > 0, "no counted tokens for BOS alignment");
    return total / static_cast<double>(count);
}

int64_t nearest_non_sink(int64_t token, const std::vector<int64_t>& sinks, int64_t seq_len) {
    auto is_sink = [&](int64_t i) {
        return std::find(sinks.begin(), sinks.end(), i) != sinks.end();
    };
    for (int64_t dist = 1; dist < seq_len; ++dist) {
        const int64_t lo = token - dist, hi = token + dist;
        if (lo >= 0 && !is_sink(lo)) return lo;
        if (hi < seq_len && !is_sink(hi)) return hi;
    }
    throw std::invalid_argument("every token is classified as a sink");
}

SinkReport compute_sink_report(const ForwardTrace& trace, const AnalysisOptions& opts) {
    SinkReport rep;
    rep.layers = trace.layers;
    rep.seq_len = trace.seq_len;
    rep.roles = trace.roles;
    rep.alpha = attention_receive_scores(trace);
    rep.sinks = classify_sinks(rep.alpha, opts.rule.ratio, opts.rule.min_layers_frac);
    rep.theta = massive_activation_indices(trace, opts.tau);
    rep.consistency = theta_consistency(rep.theta, rep.sinks, opts.full_layer_range);
    rep.cosine = cosine_to_bos(trace, opts.pairwise_cosine);
    rep.attribution = component_attribution(trace, rep.sinks, opts.tau);
    return rep;
}

InterventionOutcome intervention_experiment(const ModelConfig& cfg, ModelParams& params,
                                            std::vector<LoraAdapter>* adapters,
                                            const SequenceSpec& seq,
                                            const InterventionSpec& spec,
                                            const AnalysisOptions& opts) {
    InterventionOutcome out;
    {
        Tape tape;
        ModelGraph graph(tape, cfg, params, adapters, TrainMode::Inference);
        out.baseline = compute_sink_report(graph.forward(seq, {}, true).trace, opts);
    }
    {
        Tape tape;
        ModelGraph graph(tape, cfg, params, adapters, TrainMode::Inference);
        out.intervened = compute_sink_report(graph.forward(seq, {spec}, true).trace, opts);
    }
    return out;
}

EmergenceSummary checkpoint_timeline(const std::vector<SinkReport>& reports) {
    SINKLAB_CHECK(!reports.empty(), "timeline needs at least one report");
    EmergenceSummary out;
    const SinkReport& first = reports.front();
    for (size_t r = 1; r < reports.size(); ++r) {
        SINKLAB_CHECK(reports[r].seq_len == first.seq_len && reports[r].roles == first.roles,
                      "timeline reports disagree on the sequence layout");
        SINKLAB_CHECK(reports[r].step >= reports[r - 1].step,
                      "timeline reports must be ordered by step");
    }
    out.bos_sink_from_start = first.sinks.is_global_sink(0);
    for (const SinkReport& rep : reports) {
        for (int64_t token : rep.sinks.global_sinks) {
            if (!out.first_step.count(token)) out.first_step[token] = rep.step;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

nlohmann::json roles_to_json(const std::vector<Role>& roles) {
    nlohmann::json arr = nlohmann::json::array();
    for (Role r : roles) arr.push_back(role_name(r));
    return arr;
}

std::vector<Role> roles_from_json(const nlohmann::json& j) {
    std::vector<Role> out;
    for (const auto& s : j) out.push_back(role_from_name(s.get<std::string>()));
    return out;
}

}  // namespace

std::string sink_report_to_json(const SinkReport& rep) {
    nlohmann::json j;
    j["schema_version"] = rep.schema_version;
    j["step"] = rep.step;
    j["layers"] = rep.layers;
    j["seq_len"] = rep.seq_len;
    j["roles"] = roles_to_json(rep.roles);
    j["alpha"] = rep.alpha.alpha;
    j["sink_rule"] = {{"ratio", rep.sinks.rule.ratio},
                      {"min_layers_frac", rep.sinks.rule.min_layers_frac}};
    j["sinks_per_layer"] = rep.sinks.per_layer;
    j["global_sinks"] = rep.sinks.global_sinks;
    j["tau"] = rep.theta.tau;
    j["layer_median"] = rep.theta.layer_median;
    j["theta"] = rep.theta.theta;
    nlohmann::json cons = nlohmann::json::array();
    for (const auto& lr : rep.consistency.layers)
        cons.push_back({{"layer", lr.layer},
                        {"sinks_share", lr.sinks_share},
                        {"nonsinks_empty", lr.nonsinks_empty},
                        {"shared", lr.shared}});
    j["theta_consistency"] = cons;
    j["cosine_to_bos"] = rep.cosine.to_bos;
    j["has_pairwise"] = rep.cosine.has_pairwise;
    if (rep.cosine.has_pairwise) j["pairwise_cosine"] = rep.cosine.pairwise;
    nlohmann::json attr = nlohmann::json::array();
    for (const auto& st : rep.attribution.layers)
        attr.push_back({{"mhsa_sink_max", st.mhsa_sink_max},
                        {"mhsa_nonsink_max", st.mhsa_nonsink_max},
                        {"mlp_sink_max", st.mlp_sink_max},
                        {"mlp_nonsink_max", st.mlp_nonsink_max}});
    j["attribution"] = attr;
    j["earliest_mlp_layer"] = rep.attribution.earliest_mlp_layer;
    j["attribution_tau"] = rep.attribution.tau;
    return j.dump(2);
}

SinkReport sink_report_from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    SinkReport rep;
    rep.schema_version = j.at("schema_version").get<int64_t>();
    SINKLAB_CHECK_RUNTIME(rep.schema_version == 1,
                          "unsupported report schema version " << rep.schema_version);
    rep.step = j.at("step").get<int64_t>();
    rep.layers = j.at("layers").get<int64_t>();
    rep.seq_len = j.at("seq_len").get<int64_t>();
    rep.roles = roles_from_json(j.at("roles"));
    rep.alpha.layers = rep.layers;
    rep.alpha.seq_len = rep.seq_len;
    rep.alpha.roles = rep.roles;
    rep.alpha.alpha = j.at("alpha").get<std::vector<std::vector<double>>>();
    rep.sinks.rule.ratio = j.at("sink_rule").at("ratio").get<double>();
    rep.sinks.rule.min_layers_frac = j.at("sink_rule").at("min_layers_frac").get<double>();
    rep.sinks.per_layer = j.at("sinks_per_layer").get<std::vector<std::vector<int64_t>>>();
    rep.sinks.global_sinks = j.at("global_sinks").get<std::vector<int64_t>>();
    rep.theta.tau = j.at("tau").get<double>();
    rep.theta.layer_median = j.at("layer_median").get<std::vector<double>>();
    rep.theta.theta = j.at("theta").get<std::vector<std::vector<std::vector<int64_t>>>>();
    for (const auto& lr : j.at("theta_consistency")) {
        ThetaConsistency::LayerResult res;
        res.layer = lr.at("layer").get<int64_t>();
        res.sinks_share = lr.at("sinks_share").get<bool>();
        res.nonsinks_empty = lr.at("nonsinks_empty").get<bool>();
        res.shared = lr.at("shared").get<std::vector<int64_t>>();
        rep.consistency.layers.push_back(std::move(res));
    }
    rep.cosine.to_bos = j.at("cosine_to_bos").get<std::vector<std::vector<double>>>();
    rep.cosine.has_pairwise = j.at("has_pairwise").get<bool>();
    if (rep.cosine.has_pairwise)
        rep.cosine.pairwise =
            j.at("pairwise_cosine").get<std::vector<std::vector<std::vector<double>>>>();
    for (const auto& st : j.at("attribution")) {
        AttributionReport::LayerStats stats;
        stats.mhsa_sink_max = st.at("mhsa_sink_max").get<double>();
        stats.mhsa_nonsink_max = st.at("mhsa_nonsink_max").get<double>();
        stats.mlp_sink_max = st.at("mlp_sink_max").get<double>();
        stats.mlp_nonsink_max = st.at("mlp_nonsink_max").get<double>();
        rep.attribution.layers.push_back(stats);
    }
    rep.attribution.earliest_mlp_layer = j.at("earliest_mlp_layer").get<int64_t>();
    rep.attribution.tau = j.at("attribution_tau").get<double>();
    return rep;
}

namespace {
std::string heatmap_tsv(const std::vector<std::vector<double>>& rows) {
    std::string out = "layer\ttoken\tvalue\n";
    char buf[64];
    for (size_t l = 0; l < rows.size(); ++l)
        for (size_t i = 0; i < rows[l].size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%zu\t%zu\t%.17g\n", l + 1, i, rows[l][i]);
            out += buf;
        }
    return out;
}
}  // namespace

std::string alpha_heatmap_tsv(const AttentionScoreMatrix& scores) {
    return heatmap_tsv(scores.alpha);
}

std::string cosine_heatmap_tsv(const CosineReport& cosine) { return heatmap_tsv(cosine.to_bos); }

}  // namespace sinklab
