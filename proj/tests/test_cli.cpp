#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>

#include "sinklab/checkpoint.hpp"
#include "sinklab/experiment.hpp"

using namespace sinklab;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_experiment(const fs::path& out) {
    ExperimentConfig cfg;
    cfg.task = TaskKind::Avsr;
    cfg.rate_audio = 4;
    cfg.rate_video = 2;
    cfg.model.layers = 4;
    cfg.model.d_model = 16;
    cfg.model.heads = 2;
    cfg.model.d_ff = 24;
    cfg.model.max_seq = 64;
    cfg.toy.symbol_vocab = 6;
    cfg.toy.min_len = 3;
    cfg.toy.max_len = 5;
    cfg.toy.audio_upsample = 4;
    cfg.toy.video_upsample = 2;
    cfg.toy.audio_embed_dim = 6;
    cfg.toy.video_embed_dim = 5;
    cfg.train.phase = Phase::Pretrain;
    cfg.train.steps = 4;
    cfg.train.batch = 2;
    cfg.train.checkpoint_interval = 2;
    cfg.train.eval_samples = 2;
    cfg.train.seed = 5;
    cfg.out_dir = out.string();
    return cfg;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is.good());
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

std::map<std::string, std::string> snapshot_tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& entry : fs::recursive_directory_iterator(root))
        if (entry.is_regular_file())
            out[fs::relative(entry.path(), root).string()] = slurp(entry.path());
    return out;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("experiment config: defaults carry the paper grid and tau") {
    ExperimentConfig cfg;
    CHECK(cfg.tau == 1000.0);
    CHECK(cfg.lambda_grid == std::vector<double>{10.0, 100.0, 10000.0});
    CHECK(cfg.sink_rule.ratio == 5.0);
    CHECK(cfg.sink_rule.min_layers_frac == 0.5);
}

TEST_CASE("experiment config: json round trip is field-exact") {
    ExperimentConfig cfg = tiny_experiment("runs/x");
    cfg.train.lambda = 100.0;
    cfg.lambda_grid = {10.0, 100.0, 10000.0};
    cfg.report.pairwise_cosine = true;
    const std::string one = experiment_config_to_json(cfg);
    ExperimentConfig back = experiment_config_from_json(one);
    const std::string two = experiment_config_to_json(back);
    CHECK(one == two);
    CHECK(back.tau == cfg.tau);
    CHECK(back.lambda_grid == cfg.lambda_grid);
    CHECK(back.rate_audio == cfg.rate_audio);
    CHECK(back.rate_video == cfg.rate_video);
    CHECK(back.train.lambda == cfg.train.lambda);
    CHECK(back.train.seed == cfg.train.seed);
}

TEST_CASE("experiment config: modality/rate contradictions rejected before compute") {
    ExperimentConfig cfg = tiny_experiment("runs/x");
    cfg.task = TaskKind::Asr;  // still carries a video rate
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.rate_video = -1;
    CHECK_NOTHROW(cfg.validate());

    ExperimentConfig vsr = tiny_experiment("runs/x");
    vsr.task = TaskKind::Vsr;
    vsr.rate_audio = -1;
    vsr.rate_video = 2;
    CHECK_NOTHROW(vsr.validate());
    vsr.rate_audio = 4;
    CHECK_THROWS_AS(vsr.validate(), std::invalid_argument);

    ExperimentConfig avsr = tiny_experiment("runs/x");
    avsr.rate_video = -1;
    CHECK_THROWS_AS(avsr.validate(), std::invalid_argument);
}

TEST_CASE("cmd_train: rerun with identical config and seed is bit-identical") {
    const fs::path dir = fresh_dir("sinklab_cli_det");
    ExperimentConfig cfg = tiny_experiment(dir / "run");
    (void)cmd_train(cfg);
    auto first = snapshot_tree(dir / "run");
    CHECK(first.count("summary.json") == 1);
    CHECK(first.count("config.json") == 1);
    CHECK(first.count("metrics/step_000000.json") == 1);
    CHECK(first.count("reports/step_000004.report.json") == 1);
    CHECK(first.count("checkpoints/final.ckpt") == 1);

    fs::remove_all(dir / "run");
    (void)cmd_train(cfg);
    auto second = snapshot_tree(dir / "run");
    REQUIRE(first.size() == second.size());
    for (const auto& [name, bytes] : first) CHECK(bytes == second.at(name));
    fs::remove_all(dir);
}

TEST_CASE("cmd_analyze and cmd_intervene work off a stored checkpoint") {
    const fs::path dir = fresh_dir("sinklab_cli_analyze");
    ExperimentConfig cfg = tiny_experiment(dir / "run");
    (void)cmd_train(cfg);
    const fs::path ckpt = dir / "run" / "checkpoints" / "final.ckpt";

    const fs::path rep_dir = cmd_analyze(ckpt, 0, dir / "analysis", true);
    SinkReport rep = sink_report_from_json(slurp(rep_dir / "analysis.report.json"));
    CHECK(rep.layers == cfg.model.layers);
    CHECK(rep.cosine.has_pairwise);
    CHECK(fs::exists(rep_dir / "analysis.alpha.tsv"));
    CHECK(fs::exists(rep_dir / "gate_stats.json"));

    InterventionSpec identity;
    identity.layer = 2;
    identity.token = 3;
    identity.mode = InterventionSpec::Mode::TowardToken;
    identity.target = 3;
    (void)cmd_intervene(ckpt, identity, 0, dir / "iv_id");
    const std::string diff = slurp(dir / "iv_id" / "diff.json");
    CHECK(diff.find("\"identical\": true") != std::string::npos);

    InterventionSpec bos;
    bos.layer = 2;
    bos.token = 3;
    bos.mode = InterventionSpec::Mode::TowardBos;
    (void)cmd_intervene(ckpt, bos, 0, dir / "iv_bos");
    SinkReport moved = sink_report_from_json(slurp(dir / "iv_bos" / "intervened.report.json"));
    CHECK(std::abs(moved.cosine.to_bos[1][3] - 1.0) <= 1e-10);
    fs::remove_all(dir);
}

TEST_CASE("cmd_sweep: cross product rows match paired single runs") {
    const fs::path dir = fresh_dir("sinklab_cli_sweep");
    ExperimentConfig pre = tiny_experiment(dir / "pretrain");
    (void)cmd_train(pre);

    ExperimentConfig base = tiny_experiment(dir / "unused");
    base.train.phase = Phase::Finetune;
    base.train.steps = 2;
    base.train.checkpoint_interval = 2;
    base.train.lora_rank = 2;
    base.train.init_checkpoint = (dir / "pretrain" / "checkpoints" / "final.ckpt").string();

    const std::vector<double> lambdas = {0.0, 100.0};
    const std::vector<std::pair<int64_t, int64_t>> rates = {{4, 2}, {2, 1}};
    const auto rows = cmd_sweep(base, lambdas, rates, dir / "sweep");
    REQUIRE(rows.size() == 4);
    for (const auto& r : rows) CHECK(r.ok);
    CHECK(fs::exists(dir / "sweep" / "sweep.tsv"));
    const std::string tsv = slurp(dir / "sweep" / "sweep.tsv");
    CHECK(std::count(tsv.begin(), tsv.end(), '\n') == 5);  // header + 4 rows

    // a row reproduces bitwise as a single run under its derived seed
    const SweepRow& probe = rows[1];  // rates (4,2), lambda 100
    ExperimentConfig single = base;
    single.rate_audio = probe.rate_audio;
    single.rate_video = probe.rate_video;
    single.train.lambda = probe.lambda;
    single.train.seed = probe.seed;
    single.out_dir = (dir / "single").string();
    RunOutput run = cmd_train(single);
    CHECK(run.outcome.metrics.checkpoints.back().ter == probe.final_ter);
    CHECK(run.outcome.metrics.checkpoints.back().mean_cos_sq == probe.final_mean_cos_sq);
    fs::remove_all(dir);
}

TEST_CASE("cmd_sweep: paper rate ladder runs to completion") {
    const fs::path dir = fresh_dir("sinklab_cli_ladder");
    ExperimentConfig pre = tiny_experiment(dir / "pretrain");
    pre.model.max_seq = 160;  // rates (1,1) keep the raw stream lengths
    (void)cmd_train(pre);

    ExperimentConfig base = pre;
    base.train.phase = Phase::Finetune;
    base.train.steps = 2;
    base.train.checkpoint_interval = 2;
    base.train.lora_rank = 2;
    base.train.eval_samples = 2;
    base.train.init_checkpoint = (dir / "pretrain" / "checkpoints" / "final.ckpt").string();
    const auto rows = cmd_sweep(base, {0.0},
                                {{1, 1}, {4, 2}, {16, 5}}, dir / "sweep");
    REQUIRE(rows.size() == 3);
    for (const auto& r : rows) {
        CHECK(r.ok);
        char tag[16];
        std::snprintf(tag, sizeof(tag), "row_%03d", static_cast<int>(r.index));
        CHECK(fs::exists(dir / "sweep" / tag / "reports" / "step_000002.report.json"));
    }
    fs::remove_all(dir);
}

TEST_CASE("cli binary: exit codes and end-to-end train/analyze") {
    const fs::path dir = fresh_dir("sinklab_cli_bin");
    ExperimentConfig cfg = tiny_experiment(dir / "run");
    const fs::path cfg_path = dir / "config.json";
    {
        std::ofstream os(cfg_path);
        os << experiment_config_to_json(cfg);
    }
    const std::string bin = SINKLAB_BIN;
    auto run = [&](const std::string& args) {
        const std::string cmd = bin + " " + args + " > " + (dir / "out.txt").string() + " 2>&1";
        const int rc = std::system(cmd.c_str());
        return WEXITSTATUS(rc);
    };

    CHECK(run("train --config " + cfg_path.string()) == 0);
    CHECK(fs::exists(dir / "run" / "summary.json"));
    CHECK(run("analyze --ckpt " + (dir / "run" / "checkpoints" / "final.ckpt").string() +
              " --out " + (dir / "analysis").string()) == 0);
    CHECK(fs::exists(dir / "analysis" / "analysis.report.json"));
    CHECK(run("intervene --ckpt " + (dir / "run" / "checkpoints" / "final.ckpt").string() +
              " --layer 2 --token 2 --mode toward-token:4 --out " +
              (dir / "iv").string()) == 0);
    CHECK(fs::exists(dir / "iv" / "diff.json"));

    // asr config carrying a video rate: rejected before compute, exit 2
    ExperimentConfig bad = cfg;
    bad.task = TaskKind::Asr;
    bad.out_dir = (dir / "bad_run").string();
    const fs::path bad_path = dir / "bad.json";
    {
        std::ofstream os(bad_path);
        os << experiment_config_to_json(bad);
    }
    CHECK(run("train --config " + bad_path.string()) == 2);
    CHECK(!fs::exists(dir / "bad_run" / "summary.json"));

    CHECK(run("train --config " + (dir / "missing.json").string()) == 3);
    CHECK(run("bogus-subcommand") == 2);

    // the default lambda grid is accepted verbatim by the sweep subcommand
    ExperimentConfig sw = cfg;
    sw.train.phase = Phase::Finetune;
    sw.train.steps = 2;
    sw.train.checkpoint_interval = 2;
    sw.train.lora_rank = 2;
    sw.train.init_checkpoint = (dir / "run" / "checkpoints" / "final.ckpt").string();
    const fs::path sw_path = dir / "sweep.json";
    {
        std::ofstream os(sw_path);
        os << experiment_config_to_json(sw);
    }
    CHECK(run("sweep --config " + sw_path.string() + " --lambdas 10,100,10000 --out " +
              (dir / "sweep").string()) == 0);
    const std::string tsv = slurp(dir / "sweep" / "sweep.tsv");
    CHECK(std::count(tsv.begin(), tsv.end(), '\n') == 4);  // header + 3 lambda rows
    CHECK(tsv.find("10000") != std::string::npos);
    fs::remove_all(dir);
}
