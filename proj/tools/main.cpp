#include <CLI11.hpp>

#include <cstdio>
#include <string>
#include <vector>

#include "sinklab/experiment.hpp"

using namespace sinklab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;    // config or argument errors, rejected before compute
constexpr int kExitRuntime = 3;  // mid-run failures, I/O errors

std::vector<double> parse_double_list(const std::string& s) {
    std::vector<double> out;
    size_t pos = 0;
    while (pos < s.size()) {
        size_t next = s.find(',', pos);
        if (next == std::string::npos) next = s.size();
        out.push_back(std::stod(s.substr(pos, next - pos)));
        pos = next + 1;
    }
    SINKLAB_CHECK(!out.empty(), "empty numeric list");
    return out;
}

// "a" or "a,v" depending on the task's modalities.
void apply_rates(ExperimentConfig& cfg, const std::string& rates) {
    std::vector<int64_t> vals;
    size_t pos = 0;
    while (pos < rates.size()) {
        size_t next = rates.find(',', pos);
        if (next == std::string::npos) next = rates.size();
        vals.push_back(std::stoll(rates.substr(pos, next - pos)));
        pos = next + 1;
    }
    switch (cfg.task) {
        case TaskKind::Asr:
            SINKLAB_CHECK(vals.size() == 1, "asr takes a single audio rate");
            cfg.rate_audio = vals[0];
            cfg.rate_video = -1;
            break;
        case TaskKind::Vsr:
            SINKLAB_CHECK(vals.size() == 1, "vsr takes a single video rate");
            cfg.rate_video = vals[0];
            cfg.rate_audio = -1;
            break;
        case TaskKind::Avsr:
            SINKLAB_CHECK(vals.size() == 2, "avsr takes rates a,v");
            cfg.rate_audio = vals[0];
            cfg.rate_video = vals[1];
            break;
    }
}

// "a,v;a,v;..." — for unimodal tasks each entry is a single value.
std::vector<std::pair<int64_t, int64_t>> parse_rates_list(const std::string& s, TaskKind task) {
    std::vector<std::pair<int64_t, int64_t>> out;
    size_t pos = 0;
    while (pos < s.size()) {
        size_t next = s.find(';', pos);
        if (next == std::string::npos) next = s.size();
        const std::string entry = s.substr(pos, next - pos);
        const size_t comma = entry.find(',');
        if (task == TaskKind::Avsr) {
            SINKLAB_CHECK(comma != std::string::npos, "avsr rate entries need a,v");
            out.push_back(
                {std::stoll(entry.substr(0, comma)), std::stoll(entry.substr(comma + 1))});
        } else {
            SINKLAB_CHECK(comma == std::string::npos, "unimodal rate entries take one value");
            const int64_t v = std::stoll(entry);
            out.push_back(task == TaskKind::Asr ? std::make_pair(v, int64_t{-1})
                                                : std::make_pair(int64_t{-1}, v));
        }
        pos = next + 1;
    }
    SINKLAB_CHECK(!out.empty(), "empty rates list");
    return out;
}

InterventionSpec::Mode parse_mode(const std::string& s, int64_t& target) {
    if (s == "toward-bos") return InterventionSpec::Mode::TowardBos;
    const std::string prefix = "toward-token:";
    SINKLAB_CHECK(s.rfind(prefix, 0) == 0, "mode must be toward-bos or toward-token:J, got " << s);
    target = std::stoll(s.substr(prefix.size()));
    return InterventionSpec::Mode::TowardToken;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale attention-sink laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_override, rates_override, ckpt_path, mode_str = "toward-bos";
    std::string lambdas_str, rates_list_str;
    int64_t seed_override = -1, sample_index = 0, layer = 2, token = 0;
    double lambda_override = -1.0;
    bool pairwise = false;

    auto* train = app.add_subcommand("train", "run the configured training phase");
    train->add_option("--config", config_path, "experiment config file")->required();
    train->add_option("--seed", seed_override, "override train.seed");
    train->add_option("--out", out_override, "override out_dir");
    train->add_option("--lambda", lambda_override, "override decorrelation weight");
    train->add_option("--rates", rates_override, "override compression rates a[,v]");

    auto* analyze = app.add_subcommand("analyze", "emit sink diagnostics for a checkpoint");
    analyze->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    analyze->add_option("--sample", sample_index, "held-out sample index");
    analyze->add_option("--out", out_override, "report directory")->required();
    analyze->add_flag("--pairwise", pairwise, "include the pairwise cosine matrix");

    auto* intervene = app.add_subcommand("intervene", "paired baseline/rotated diagnostics");
    intervene->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    intervene->add_option("--layer", layer, "edited layer l*");
    intervene->add_option("--token", token, "edited token index")->required();
    intervene->add_option("--mode", mode_str, "toward-bos | toward-token:J");
    intervene->add_option("--sample", sample_index, "held-out sample index");
    intervene->add_option("--out", out_override, "report directory")->required();

    auto* sweep = app.add_subcommand("sweep", "cross product of rates and lambdas");
    sweep->add_option("--config", config_path, "base experiment config")->required();
    sweep->add_option("--lambdas", lambdas_str, "comma list; defaults to the config grid");
    sweep->add_option("--rates-list", rates_list_str, "semicolon list of a[,v] entries");
    sweep->add_option("--seed", seed_override, "override base seed");
    sweep->add_option("--out", out_override, "sweep directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (train->parsed()) {
            ExperimentConfig cfg = load_experiment_config(config_path);
            if (seed_override >= 0) cfg.train.seed = static_cast<uint64_t>(seed_override);
            if (!out_override.empty()) cfg.out_dir = out_override;
            if (lambda_override >= 0.0) cfg.train.lambda = lambda_override;
            if (!rates_override.empty()) apply_rates(cfg, rates_override);
            const RunOutput run = cmd_train(cfg);
            const CheckpointMetrics& fin = run.outcome.metrics.checkpoints.back();
            std::printf("run %s: ce %.6f decor %.6f cos2 %.6f ter %.4f\n", run.run_dir.c_str(),
                        fin.ce, fin.decor, fin.mean_cos_sq, fin.ter);
        } else if (analyze->parsed()) {
            cmd_analyze(ckpt_path, sample_index, out_override,
                        pairwise ? std::optional<bool>(true) : std::nullopt);
            std::printf("reports written to %s\n", out_override.c_str());
        } else if (intervene->parsed()) {
            InterventionSpec spec;
            spec.layer = layer;
            spec.token = token;
            spec.mode = parse_mode(mode_str, spec.target);
            cmd_intervene(ckpt_path, spec, sample_index, out_override);
            std::printf("paired reports written to %s\n", out_override.c_str());
        } else if (sweep->parsed()) {
            ExperimentConfig cfg = load_experiment_config(config_path);
            if (seed_override >= 0) cfg.train.seed = static_cast<uint64_t>(seed_override);
            const std::vector<double> lambdas =
                lambdas_str.empty() ? cfg.lambda_grid : parse_double_list(lambdas_str);
            std::vector<std::pair<int64_t, int64_t>> rates;
            if (rates_list_str.empty()) {
                rates.push_back({cfg.rate_audio, cfg.rate_video});
            } else {
                rates = parse_rates_list(rates_list_str, cfg.task);
            }
            const auto rows = cmd_sweep(cfg, lambdas, rates, out_override);
            int64_t failed = 0;
            for (const auto& r : rows)
                if (!r.ok) ++failed;
            std::printf("%zu rows done, %lld failed; table at %s/sweep.tsv\n", rows.size(),
                        static_cast<long long>(failed), out_override.c_str());
            if (failed > 0) return kExitRuntime;
        }
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitUsage;
    } catch (const std::out_of_range& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitOk;
}
