#pragma once

// Experiment configuration: one human-editable JSON tree. Missing keys take
// the built-in defaults, so a config file only has to name what it changes.
// A single global seed expands into per-stage seeds through a fixed rule
// (stage_seed), so any stage can be rerun alone with identical results.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "itts/corpus.hpp"
#include "itts/distill.hpp"
#include "itts/evalbench.hpp"
#include "itts/lm.hpp"
#include "itts/pipeline.hpp"
#include "itts/tts.hpp"

namespace itts {

using json = nlohmann::json;

struct BenchSettings {
    std::size_t repetitions = 5;
    std::size_t lm_cost_factor = 100;  // emulates a large LM's sampling cost
    std::size_t min_bucket = 10;
    std::size_t latency_sentences = 24;  // test sentences per latency run
    std::vector<std::string> policies{"independent", "unicontext", "lookahead_full", "teacher_lm",
                                      "student"};
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::string out_dir = "runs/default";

    CorpusParams corpus{};           // corpus.seed is overwritten by the stage seed
    OracleParams oracle{};           // oracle.seed likewise
    LmConfig lm{};                   // defaults: E=64, H=128, lr 1e-3
    std::size_t lm_iters = 1200;
    TtsDims teacher_dims{};          // vocab filled from corpus setting
    TeacherTrainConfig teacher{};    // window 3, hop 1, L=5
    DistillConfig distill{};
    PipelineConfig pipeline{};       // N=2, delta=1
    BenchSettings bench{};

    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-6;
};

namespace detail {

template <typename T>
void read_field(const json& j, const char* section, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string(section) + "." + key + ": " + e.what());
    }
}

inline std::size_t line_of_byte(const std::string& text, std::size_t byte) {
    std::size_t line = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i)
        if (text[i] == '\n') ++line;
    return line;
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& j) {
    ExperimentConfig cfg;
    detail::read_field(j, "", "seed", cfg.seed);
    detail::read_field(j, "", "out_dir", cfg.out_dir);

    if (j.contains("corpus")) {
        const json& c = j.at("corpus");
        detail::read_field(c, "corpus", "vocab_size", cfg.corpus.vocab_size);
        detail::read_field(c, "corpus", "sentences", cfg.corpus.sentence_count);
        detail::read_field(c, "corpus", "min_len", cfg.corpus.min_len);
        detail::read_field(c, "corpus", "max_len", cfg.corpus.max_len);
    }
    if (j.contains("oracle")) {
        const json& c = j.at("oracle");
        detail::read_field(c, "oracle", "frames_per_word", cfg.oracle.frames_per_word);
        detail::read_field(c, "oracle", "frame_dim", cfg.oracle.frame_dim);
    }
    if (j.contains("lm")) {
        const json& c = j.at("lm");
        detail::read_field(c, "lm", "embed_dim", cfg.lm.embed_dim);
        detail::read_field(c, "lm", "hidden_dim", cfg.lm.hidden_dim);
        detail::read_field(c, "lm", "iters", cfg.lm_iters);
        detail::read_field(c, "lm", "lr", cfg.lm.lr);
        detail::read_field(c, "lm", "batch_size", cfg.lm.batch_size);
    }
    if (j.contains("teacher")) {
        const json& c = j.at("teacher");
        detail::read_field(c, "teacher", "enc_embed_dim", cfg.teacher_dims.enc_embed);
        detail::read_field(c, "teacher", "enc_hidden", cfg.teacher_dims.enc_hidden);
        detail::read_field(c, "teacher", "dec_hidden", cfg.teacher_dims.dec_hidden);
        detail::read_field(c, "teacher", "context_dim", cfg.teacher_dims.context_dim);
        detail::read_field(c, "teacher", "style_tokens", cfg.teacher_dims.style_tokens);
        detail::read_field(c, "teacher", "window", cfg.teacher.window);
        detail::read_field(c, "teacher", "hop", cfg.teacher.hop);
        detail::read_field(c, "teacher", "lookahead", cfg.teacher.lookahead);
        detail::read_field(c, "teacher", "phase1_iters", cfg.teacher.phase1_iters);
        detail::read_field(c, "teacher", "phase2_iters", cfg.teacher.phase2_iters);
        detail::read_field(c, "teacher", "lr", cfg.teacher.lr);
        detail::read_field(c, "teacher", "batch_size", cfg.teacher.batch_size);
        detail::read_field(c, "teacher", "temperature", cfg.teacher.temperature);
        detail::read_field(c, "teacher", "greedy", cfg.teacher.greedy);
    }
    if (j.contains("distill")) {
        const json& c = j.at("distill");
        std::string size = to_string(cfg.distill.size);
        detail::read_field(c, "distill", "size", size);
        cfg.distill.size = parse_student_size(size);
        detail::read_field(c, "distill", "lambda", cfg.distill.lambda);
        if (!(cfg.distill.lambda >= 0.0 && cfg.distill.lambda <= 1.0))
            throw ConfigError("distill.lambda must lie in [0, 1]");
        detail::read_field(c, "distill", "iters", cfg.distill.iters);
        detail::read_field(c, "distill", "lr", cfg.distill.lr);
        detail::read_field(c, "distill", "batch_size", cfg.distill.batch_size);
        detail::read_field(c, "distill", "progress_every", cfg.distill.progress_every);
    }
    if (j.contains("pipeline")) {
        const json& c = j.at("pipeline");
        detail::read_field(c, "pipeline", "segment_words", cfg.pipeline.segment_words);
        detail::read_field(c, "pipeline", "pad_frames", cfg.pipeline.pad_frames);
        std::string policy = to_string(cfg.pipeline.policy);
        detail::read_field(c, "pipeline", "policy", policy);
        cfg.pipeline.policy = parse_policy(policy);
        detail::read_field(c, "pipeline", "lookahead_k", cfg.pipeline.lookahead_k);
        detail::read_field(c, "pipeline", "max_frames", cfg.pipeline.max_frames);
        detail::read_field(c, "pipeline", "temperature", cfg.pipeline.temperature);
        detail::read_field(c, "pipeline", "greedy", cfg.pipeline.greedy);
    }
    if (j.contains("bench")) {
        const json& c = j.at("bench");
        detail::read_field(c, "bench", "repetitions", cfg.bench.repetitions);
        detail::read_field(c, "bench", "lm_cost_factor", cfg.bench.lm_cost_factor);
        detail::read_field(c, "bench", "min_bucket", cfg.bench.min_bucket);
        detail::read_field(c, "bench", "latency_sentences", cfg.bench.latency_sentences);
        detail::read_field(c, "bench", "policies", cfg.bench.policies);
    }
    if (j.contains("adam")) {
        const json& c = j.at("adam");
        detail::read_field(c, "adam", "beta1", cfg.adam_beta1);
        detail::read_field(c, "adam", "beta2", cfg.adam_beta2);
        detail::read_field(c, "adam", "eps", cfg.adam_eps);
    }
    return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config " + path.string());
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("parse error in " + path.string() + " at line " +
                          std::to_string(detail::line_of_byte(text, e.byte)) + ": " + e.what());
    }
    return parse_config(j);
}

/// Canonical JSON rendering of the resolved configuration (defaults filled
/// in); its hash goes into every manifest.
inline json config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["out_dir"] = cfg.out_dir;
    j["corpus"] = {{"vocab_size", cfg.corpus.vocab_size},
                   {"sentences", cfg.corpus.sentence_count},
                   {"min_len", cfg.corpus.min_len},
                   {"max_len", cfg.corpus.max_len}};
    j["oracle"] = {{"frames_per_word", cfg.oracle.frames_per_word}, {"frame_dim", cfg.oracle.frame_dim}};
    j["lm"] = {{"embed_dim", cfg.lm.embed_dim},
               {"hidden_dim", cfg.lm.hidden_dim},
               {"iters", cfg.lm_iters},
               {"lr", cfg.lm.lr},
               {"batch_size", cfg.lm.batch_size}};
    j["teacher"] = {{"enc_embed_dim", cfg.teacher_dims.enc_embed},
                    {"enc_hidden", cfg.teacher_dims.enc_hidden},
                    {"dec_hidden", cfg.teacher_dims.dec_hidden},
                    {"context_dim", cfg.teacher_dims.context_dim},
                    {"style_tokens", cfg.teacher_dims.style_tokens},
                    {"window", cfg.teacher.window},
                    {"hop", cfg.teacher.hop},
                    {"lookahead", cfg.teacher.lookahead},
                    {"phase1_iters", cfg.teacher.phase1_iters},
                    {"phase2_iters", cfg.teacher.phase2_iters},
                    {"lr", cfg.teacher.lr},
                    {"batch_size", cfg.teacher.batch_size},
                    {"temperature", cfg.teacher.temperature},
                    {"greedy", cfg.teacher.greedy}};
    j["distill"] = {{"size", to_string(cfg.distill.size)},
                    {"lambda", cfg.distill.lambda},
                    {"iters", cfg.distill.iters},
                    {"lr", cfg.distill.lr},
                    {"batch_size", cfg.distill.batch_size},
                    {"progress_every", cfg.distill.progress_every}};
    j["pipeline"] = {{"segment_words", cfg.pipeline.segment_words},
                     {"pad_frames", cfg.pipeline.pad_frames},
                     {"policy", to_string(cfg.pipeline.policy)},
                     {"lookahead_k", cfg.pipeline.lookahead_k},
                     {"max_frames", cfg.pipeline.max_frames},
                     {"temperature", cfg.pipeline.temperature},
                     {"greedy", cfg.pipeline.greedy}};
    j["bench"] = {{"repetitions", cfg.bench.repetitions},
                  {"lm_cost_factor", cfg.bench.lm_cost_factor},
                  {"min_bucket", cfg.bench.min_bucket},
                  {"latency_sentences", cfg.bench.latency_sentences},
                  {"policies", cfg.bench.policies}};
    j["adam"] = {{"beta1", cfg.adam_beta1}, {"beta2", cfg.adam_beta2}, {"eps", cfg.adam_eps}};
    return j;
}

inline std::uint64_t config_hash(const ExperimentConfig& cfg) {
    return fnv1a64(config_to_json(cfg).dump());
}

// ----------------------------- manifests -----------------------------

inline std::string hash_hex(std::uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Every stage writes one of these next to its outputs; together with the
/// config file it pins everything needed to reproduce the artifact bit for bit.
inline void write_manifest(const ExperimentConfig& cfg, const std::string& stage, std::uint64_t stage_seed_v,
                           const std::vector<std::filesystem::path>& inputs,
                           const std::vector<std::string>& outputs) {
    json m;
    m["stage"] = stage;
    m["config_hash"] = hash_hex(config_hash(cfg));
    m["seed"] = stage_seed_v;
    json in = json::object();
    for (const auto& p : inputs) in[p.filename().string()] = hash_hex(file_hash(p));
    m["inputs"] = in;
    m["outputs"] = outputs;
    const std::filesystem::path path = std::filesystem::path(cfg.out_dir) / ("manifest_" + stage + ".json");
    std::ofstream os(path);
    if (!os) throw IoError("cannot write manifest " + path.string());
    os << m.dump(2) << '\n';
}

}  // namespace itts
