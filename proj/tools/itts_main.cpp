// itts: incremental text-to-frame synthesis with a distilled context
// prediction network. One subcommand per experiment stage; see README.

#include <clocale>
#include <cmath>
#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "itts/itts.hpp"

namespace {

int dispatch(const std::string& cmd, const itts::ExperimentConfig& cfg, const std::string& text) {
    using namespace itts::stages;
    if (cmd == "gen-corpus") gen_corpus(cfg);
    else if (cmd == "train-lm") train_lm_stage(cfg);
    else if (cmd == "train-teacher") train_teacher_stage(cfg);
    else if (cmd == "distill") distill_stage(cfg);
    else if (cmd == "synth") synth_stage(cfg, text);
    else if (cmd == "bench-latency") bench_latency_stage(cfg);
    else if (cmd == "bench-quality") bench_quality_stage(cfg);
    else if (cmd == "sim-curve") sim_curve_stage(cfg);
    else return 1;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    std::setlocale(LC_ALL, "C");
    CLI::App app{"incremental text-to-frame synthesis with a distilled context prediction network"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::string out_dir;
    std::string policy;
    std::string size;
    std::string text;
    double lambda = std::nan("");
    std::uint64_t seed = 0;

    app.add_option("--config", config_path, "experiment config file (JSON); defaults used when omitted")
        ->check(CLI::ExistingFile);
    app.add_option("--out", out_dir, "output directory (overrides config)");
    auto* seed_opt = app.add_option("--seed", seed, "global seed (overrides config)");
    app.add_option("--policy", policy, "pipeline policy: independent|unicontext|lookahead_k|teacher_lm|student");
    app.add_option("--size", size, "student size class: small|medium|large");
    app.add_option("--lambda", lambda, "teacher-student loss weight in [0,1]");

    app.add_subcommand("gen-corpus", "generate the synthetic corpus and vocabulary");
    app.add_subcommand("train-lm", "train the word-level language model");
    app.add_subcommand("train-teacher", "train the teacher (phase 1 + LM-guided phase 2)");
    app.add_subcommand("distill", "distill the teacher's context embedding into a student");
    auto* synth = app.add_subcommand("synth", "incrementally synthesize one sentence to frames");
    synth->add_option("--text", text, "sentence to synthesize (defaults to the first test sentence)");
    app.add_subcommand("bench-latency", "cumulative per-step latency and wpm per policy");
    app.add_subcommand("bench-quality", "frame reconstruction error and stop accuracy per policy");
    app.add_subcommand("sim-curve", "cosine-similarity curves (pseudo vs ground-truth lookahead)");

    CLI11_PARSE(app, argc, argv);

    try {
        itts::ExperimentConfig cfg =
            config_path.empty() ? itts::ExperimentConfig{} : itts::load_config(config_path);
        if (seed_opt->count() > 0) cfg.seed = seed;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (!policy.empty()) cfg.pipeline.policy = itts::parse_policy(policy);
        if (!size.empty()) cfg.distill.size = itts::parse_student_size(size);
        if (!std::isnan(lambda)) {
            if (!(lambda >= 0.0 && lambda <= 1.0)) throw itts::ConfigError("--lambda must lie in [0, 1]");
            cfg.distill.lambda = lambda;
        }
        return dispatch(app.get_subcommands().front()->get_name(), cfg, text);
    } catch (const itts::ConfigError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 2;
    } catch (const itts::IoError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 3;
    } catch (const itts::TrainingError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 4;
    } catch (const itts::ShapeError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 5;
    } catch (const itts::NumericError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 5;
    } catch (const itts::VocabError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 6;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
