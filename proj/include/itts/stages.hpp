#pragma once

// One function per CLI subcommand. Each stage reads its upstream artifacts
// from the experiment's output directory, writes its own outputs plus a
// manifest, and never mutates anything it read.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "itts/config.hpp"

namespace itts::stages {

namespace fs = std::filesystem;

// Artifact names inside out_dir.
inline constexpr const char* kCorpusTrain = "corpus_train.txt";
inline constexpr const char* kCorpusTest = "corpus_test.txt";
inline constexpr const char* kVocab = "vocab.txt";
inline constexpr const char* kLmCkpt = "lm.ckpt";
inline constexpr const char* kTeacherCkpt = "teacher.ckpt";
inline constexpr const char* kStudentCkpt = "student.ckpt";
inline constexpr const char* kStudentPseudoCkpt = "student_pseudo.ckpt";
inline constexpr const char* kStudentTruthCkpt = "student_truth.ckpt";
inline constexpr const char* kSummary = "summary.json";

inline fs::path artifact(const ExperimentConfig& cfg, const char* name) {
    return fs::path(cfg.out_dir) / name;
}

inline void require_artifact(const fs::path& path, const char* producer) {
    if (!fs::exists(path))
        throw IoError("missing " + path.string() + "; run `itts " + producer + "` first");
}

inline void ensure_out_dir(const ExperimentConfig& cfg) {
    fs::create_directories(cfg.out_dir);
}

// Per-stage seeds from the single global seed.
inline std::uint64_t seed_for(const ExperimentConfig& cfg, const char* stage) {
    return stage_seed(cfg.seed, stage);
}

inline OracleParams resolved_oracle(const ExperimentConfig& cfg) {
    OracleParams op = cfg.oracle;
    op.seed = seed_for(cfg, "oracle");
    return op;
}

inline PipelineConfig resolved_pipeline(const ExperimentConfig& cfg) {
    PipelineConfig p = cfg.pipeline;
    p.frames_per_word = cfg.oracle.frames_per_word;
    p.lookahead = cfg.teacher.lookahead;
    p.sampler_base = seed_for(cfg, "sampler");
    return p;
}

inline std::pair<std::vector<Sentence>, std::vector<Sentence>> load_split_corpus(
    const ExperimentConfig& cfg) {
    require_artifact(artifact(cfg, kCorpusTrain), "gen-corpus");
    require_artifact(artifact(cfg, kCorpusTest), "gen-corpus");
    const Vocabulary vocab = Vocabulary::synthetic(cfg.corpus.vocab_size);
    return {load_corpus(artifact(cfg, kCorpusTrain), vocab),
            load_corpus(artifact(cfg, kCorpusTest), vocab)};
}

inline void merge_summary(const ExperimentConfig& cfg, const std::string& section, const json& content) {
    const fs::path path = artifact(cfg, kSummary);
    json summary = json::object();
    if (fs::exists(path)) {
        std::ifstream is(path);
        try {
            summary = json::parse(std::string((std::istreambuf_iterator<char>(is)),
                                              std::istreambuf_iterator<char>()));
        } catch (const json::parse_error&) {
            summary = json::object();
        }
    }
    summary[section] = content;
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << summary.dump(2) << '\n';
}

// ----------------------------- gen-corpus -----------------------------

inline void gen_corpus(const ExperimentConfig& cfg) {
    ensure_out_dir(cfg);
    CorpusParams cp = cfg.corpus;
    cp.seed = seed_for(cfg, "corpus");
    const std::vector<Sentence> all = generate_corpus(cp);
    auto [train, test] = split_corpus(all);

    const Vocabulary vocab = Vocabulary::synthetic(cp.vocab_size);
    save_corpus(train, vocab, artifact(cfg, kCorpusTrain));
    save_corpus(test, vocab, artifact(cfg, kCorpusTest));
    std::ofstream vs(artifact(cfg, kVocab));
    for (const std::string& w : vocab.words()) vs << w << '\n';

    write_manifest(cfg, "gen-corpus", cp.seed, {}, {kCorpusTrain, kCorpusTest, kVocab});
    std::printf("[gen-corpus] %zu train / %zu test sentences, vocab %zu\n", train.size(), test.size(),
                vocab.size());
}

// ----------------------------- train-lm -----------------------------

inline void train_lm_stage(const ExperimentConfig& cfg) {
    ensure_out_dir(cfg);
    auto [train, test] = load_split_corpus(cfg);

    LmConfig lc = cfg.lm;
    lc.iters = cfg.lm_iters;
    lc.seed = seed_for(cfg, "lm");
    lc.adam_beta1 = cfg.adam_beta1;
    lc.adam_beta2 = cfg.adam_beta2;
    lc.adam_eps = cfg.adam_eps;
    LmTrainResult r = train_lm(train, test, cfg.corpus.vocab_size, lc);

    char buf[64];
    std::map<std::string, std::string> meta{{"kind", "lm"}};
    std::snprintf(buf, sizeof(buf), "%.17g", r.heldout_ce_initial);
    meta["heldout_ce_initial"] = buf;
    std::snprintf(buf, sizeof(buf), "%.17g", r.heldout_ce_final);
    meta["heldout_ce_final"] = buf;
    save_checkpoint(r.model.params(), artifact(cfg, kLmCkpt), meta);

    std::ofstream cs(artifact(cfg, "lm_progress.csv"));
    cs << "iteration,train_loss\n";
    for (std::size_t i = 0; i < r.train_loss.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.9f\n", i, r.train_loss[i]);
        cs << buf;
    }

    write_manifest(cfg, "train-lm", lc.seed,
                   {artifact(cfg, kCorpusTrain), artifact(cfg, kCorpusTest)},
                   {kLmCkpt, "lm_progress.csv"});
    std::printf("[train-lm] %zu iters, heldout CE %.3f -> %.3f\n", lc.iters, r.heldout_ce_initial,
                r.heldout_ce_final);
}

// ----------------------------- train-teacher -----------------------------

inline void train_teacher_stage(const ExperimentConfig& cfg) {
    ensure_out_dir(cfg);
    auto [train, test] = load_split_corpus(cfg);

    std::optional<LanguageModel> lm;
    std::vector<fs::path> inputs{artifact(cfg, kCorpusTrain)};
    if (cfg.teacher.phase2_iters > 0) {
        require_artifact(artifact(cfg, kLmCkpt), "train-lm");
        lm = LanguageModel::from_store(load_checkpoint(artifact(cfg, kLmCkpt)).store);
        inputs.push_back(artifact(cfg, kLmCkpt));
    }

    TtsDims dims = cfg.teacher_dims;
    dims.vocab = cfg.corpus.vocab_size;
    dims.frame_dim = cfg.oracle.frame_dim;
    TeacherModel model = TeacherModel::init(dims, seed_for(cfg, "teacher-init"));

    TeacherTrainConfig tc = cfg.teacher;
    tc.seed = seed_for(cfg, "teacher");
    tc.sampler_base = seed_for(cfg, "sampler");
    tc.adam_beta1 = cfg.adam_beta1;
    tc.adam_beta2 = cfg.adam_beta2;
    tc.adam_eps = cfg.adam_eps;
    TeacherTrainResult r = train_teacher(model, train, resolved_oracle(cfg), lm ? &*lm : nullptr, tc);

    save_checkpoint(model.params(), artifact(cfg, kTeacherCkpt), {{"kind", "teacher"}});
    std::ofstream cs(artifact(cfg, "teacher_progress.csv"));
    cs << "phase,iteration,loss\n";
    char buf[64];
    for (std::size_t i = 0; i < r.phase1_loss.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "1,%zu,%.9f\n", i, r.phase1_loss[i]);
        cs << buf;
    }
    for (std::size_t i = 0; i < r.phase2_loss.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "2,%zu,%.9f\n", i, r.phase2_loss[i]);
        cs << buf;
    }

    write_manifest(cfg, "train-teacher", tc.seed, inputs, {kTeacherCkpt, "teacher_progress.csv"});
    const double first = r.phase1_loss.empty() ? 0.0 : r.phase1_loss.front();
    const double last = r.phase1_loss.empty() ? 0.0 : r.phase1_loss.back();
    std::printf("[train-teacher] phase1 %zu iters (loss %.3f -> %.3f), phase2 %zu iters\n",
                tc.phase1_iters, first, last, tc.phase2_iters);
}

// ----------------------------- distill -----------------------------

inline DistillConfig resolved_distill(const ExperimentConfig& cfg) {
    DistillConfig dc = cfg.distill;
    dc.window = cfg.teacher.window;
    dc.hop = cfg.teacher.hop;
    dc.lookahead = cfg.teacher.lookahead;
    dc.temperature = cfg.teacher.temperature;
    dc.greedy = cfg.teacher.greedy;
    dc.seed = seed_for(cfg, "distill");
    dc.table_seed = seed_for(cfg, "table");
    dc.sampler_base = seed_for(cfg, "sampler");
    dc.adam_beta1 = cfg.adam_beta1;
    dc.adam_beta2 = cfg.adam_beta2;
    dc.adam_eps = cfg.adam_eps;
    return dc;
}

inline void write_distill_progress(const StudentTrainResult& r, const fs::path& path) {
    std::ofstream cs(path);
    cs << "iteration,l_distil,l_target,combined\n";
    char buf[128];
    for (const DistillProgressRow& row : r.progress) {
        std::snprintf(buf, sizeof(buf), "%zu,%.9f,%.9f,%.9f\n", row.iteration, row.distil, row.target,
                      row.combined);
        cs << buf;
    }
}

inline void distill_stage(const ExperimentConfig& cfg) {
    ensure_out_dir(cfg);
    auto [train, test] = load_split_corpus(cfg);
    require_artifact(artifact(cfg, kTeacherCkpt), "train-teacher");
    require_artifact(artifact(cfg, kLmCkpt), "train-lm");

    TeacherModel teacher = TeacherModel::from_store(load_checkpoint(artifact(cfg, kTeacherCkpt)).store);
    LanguageModel lm = LanguageModel::from_store(load_checkpoint(artifact(cfg, kLmCkpt)).store);

    DistillConfig dc = resolved_distill(cfg);
    StudentTrainResult r = train_student(teacher, &lm, train, test, resolved_oracle(cfg), dc);

    char buf[64];
    std::map<std::string, std::string> meta{{"kind", "student"}, {"size", to_string(dc.size)}};
    std::snprintf(buf, sizeof(buf), "%.17g", dc.lambda);
    meta["lambda"] = buf;
    std::snprintf(buf, sizeof(buf), "%.17g", r.heldout_initial);
    meta["heldout_distil_initial"] = buf;
    std::snprintf(buf, sizeof(buf), "%.17g", r.heldout_final);
    meta["heldout_distil_final"] = buf;
    save_checkpoint(r.student.params(), artifact(cfg, kStudentCkpt), meta);
    write_distill_progress(r, artifact(cfg, "distill_progress.csv"));

    write_manifest(cfg, "distill", dc.seed,
                   {artifact(cfg, kTeacherCkpt), artifact(cfg, kLmCkpt), artifact(cfg, kCorpusTrain)},
                   {kStudentCkpt, "distill_progress.csv"});
    std::printf("[distill] %s student, lambda %.2f, heldout distil %.4f -> %.4f\n", to_string(dc.size),
                dc.lambda, r.heldout_initial, r.heldout_final);
}

// ----------------------------- shared model loading -----------------------------

struct LoadedModels {
    TeacherModel teacher;
    std::optional<LanguageModel> lm;
    std::optional<StudentNet> student;
};

inline LoadedModels load_models(const ExperimentConfig& cfg, bool need_lm, bool need_student) {
    require_artifact(artifact(cfg, kTeacherCkpt), "train-teacher");
    LoadedModels m{TeacherModel::from_store(load_checkpoint(artifact(cfg, kTeacherCkpt)).store), {}, {}};
    if (need_lm) {
        require_artifact(artifact(cfg, kLmCkpt), "train-lm");
        m.lm = LanguageModel::from_store(load_checkpoint(artifact(cfg, kLmCkpt)).store);
    }
    if (need_student) {
        require_artifact(artifact(cfg, kStudentCkpt), "distill");
        m.student = StudentNet::from_store(load_checkpoint(artifact(cfg, kStudentCkpt)).store);
    }
    return m;
}

// ----------------------------- synth -----------------------------

inline void synth_stage(const ExperimentConfig& cfg, const std::string& text = "") {
    ensure_out_dir(cfg);
    const PipelineConfig pipe = resolved_pipeline(cfg);
    const bool need_lm = pipe.policy == Policy::teacher_lm;
    const bool need_student = pipe.policy == Policy::student;
    LoadedModels m = load_models(cfg, need_lm, need_student);

    const Vocabulary vocab = Vocabulary::synthetic(cfg.corpus.vocab_size);
    Sentence sentence;
    if (!text.empty()) {
        std::istringstream is(text);
        auto ingested = ingest_text(is, vocab);
        if (ingested.empty()) throw ConfigError("--text produced no tokens");
        sentence = ingested.front();
    } else {
        require_artifact(artifact(cfg, kCorpusTest), "gen-corpus");
        auto test = load_corpus(artifact(cfg, kCorpusTest), vocab);
        if (test.empty()) throw ConfigError("test corpus is empty");
        sentence = test.front();
    }

    PolicyRuntime rt(m.teacher, m.lm ? &*m.lm : nullptr, m.student ? &*m.student : nullptr);
    SynthesisResult r = incremental_synthesize(sentence, pipe, rt);

    const std::string policy = to_string(pipe.policy);
    const std::string frames_name = "frames_" + policy + ".bin";
    const std::string timing_name = "timing_" + policy + ".csv";
    save_frames(r.concatenated, pipe.pad_frames, policy, artifact(cfg, frames_name.c_str()));
    save_timings_csv(r.timings, artifact(cfg, timing_name.c_str()));

    std::vector<fs::path> inputs{artifact(cfg, kTeacherCkpt)};
    if (need_lm) inputs.push_back(artifact(cfg, kLmCkpt));
    if (need_student) inputs.push_back(artifact(cfg, kStudentCkpt));
    write_manifest(cfg, "synth", pipe.sampler_base, inputs, {frames_name, timing_name});
    std::printf("[synth] policy %s: %zu words -> %zu frames (%zu segments)%s\n", policy.c_str(), r.words,
                r.concatenated.rows(), r.segments.size(), r.any_runaway ? " [runaway flagged]" : "");
}

// ----------------------------- benchmarks -----------------------------

struct NamedPolicy {
    std::string name;
    Policy policy;
    std::size_t lookahead_k = 0;  // 0 keeps the configured k
};

inline NamedPolicy resolve_policy_name(const std::string& name) {
    if (name == "lookahead_full") return {name, Policy::lookahead_k, 1000};
    return {name, parse_policy(name), 0};
}

inline std::vector<Sentence> latency_corpus(const ExperimentConfig& cfg,
                                            const std::vector<Sentence>& test) {
    std::vector<Sentence> subset = test;
    if (subset.size() > cfg.bench.latency_sentences) subset.resize(cfg.bench.latency_sentences);
    return subset;
}

inline void bench_latency_stage(const ExperimentConfig& cfg) {
    ensure_out_dir(cfg);
    auto [train, test] = load_split_corpus(cfg);
    bool any_student = false, any_lm = false;
    for (const std::string& name : cfg.bench.policies) {
        NamedPolicy np = resolve_policy_name(name);
        any_student = any_student || np.policy == Policy::student;
        any_lm = any_lm || np.policy == Policy::teacher_lm;
    }
    LoadedModels m = load_models(cfg, any_lm, any_student);
    PolicyRuntime rt(m.teacher, m.lm ? &*m.lm : nullptr, m.student ? &*m.student : nullptr);

    const std::vector<Sentence> subset = latency_corpus(cfg, test);
    json section = json::object();
    std::vector<std::string> outputs;
    for (const std::string& name : cfg.bench.policies) {
        NamedPolicy np = resolve_policy_name(name);
        PipelineConfig pipe = resolved_pipeline(cfg);
        pipe.lm_cost_factor = cfg.bench.lm_cost_factor;
        if (np.lookahead_k > 0) pipe.lookahead_k = np.lookahead_k;
        LatencyTrace trace =
            latency_benchmark({np.policy}, subset, cfg.bench.repetitions, pipe, rt).front();

        const fs::path path = report_path(cfg.out_dir, "latency", np.name, cfg.seed);
        write_latency_csv(trace, path);
        outputs.push_back(path.filename().string());
        section[np.name] = {{"total_seconds", trace.total_seconds},
                            {"wpm", trace.wpm},
                            {"words", trace.words},
                            {"final_cumulative_ms",
                             trace.points.empty() ? 0.0 : trace.points.back().cumulative_ms},
                            {"timer_warning", trace.timer_warning},
                            {"any_runaway", trace.any_runaway}};
        std::printf("[bench-latency] %-14s total %.3fs wpm %.0f\n", np.name.c_str(), trace.total_seconds,
                    trace.wpm);
    }
    merge_summary(cfg, "latency", section);
    std::vector<fs::path> inputs{artifact(cfg, kTeacherCkpt)};
    if (any_lm) inputs.push_back(artifact(cfg, kLmCkpt));
    if (any_student) inputs.push_back(artifact(cfg, kStudentCkpt));
    write_manifest(cfg, "bench-latency", cfg.seed, inputs, outputs);
}

inline void bench_quality_stage(const ExperimentConfig& cfg) {
    ensure_out_dir(cfg);
    auto [train, test] = load_split_corpus(cfg);
    bool any_student = false, any_lm = false;
    for (const std::string& name : cfg.bench.policies) {
        NamedPolicy np = resolve_policy_name(name);
        any_student = any_student || np.policy == Policy::student;
        any_lm = any_lm || np.policy == Policy::teacher_lm;
    }
    LoadedModels m = load_models(cfg, any_lm, any_student);
    PolicyRuntime rt(m.teacher, m.lm ? &*m.lm : nullptr, m.student ? &*m.student : nullptr);

    json section = json::object();
    std::vector<std::string> outputs;
    for (const std::string& name : cfg.bench.policies) {
        NamedPolicy np = resolve_policy_name(name);
        PipelineConfig pipe = resolved_pipeline(cfg);
        if (np.lookahead_k > 0) pipe.lookahead_k = np.lookahead_k;
        PolicyQuality q = quality_report({np.policy}, test, resolved_oracle(cfg), pipe, rt).front();

        const fs::path path = report_path(cfg.out_dir, "quality", np.name, cfg.seed);
        write_quality_csv(q, path);
        outputs.push_back(path.filename().string());
        section[np.name] = {{"frame_mse", q.frame_mse},
                            {"stop_accuracy", q.stop_accuracy},
                            {"sentences", q.sentences},
                            {"runaway_segments", q.runaway_segments}};
        std::printf("[bench-quality] %-14s frame MSE %.5f stop acc %.2f\n", np.name.c_str(), q.frame_mse,
                    q.stop_accuracy);
    }
    merge_summary(cfg, "quality", section);
    std::vector<fs::path> inputs{artifact(cfg, kTeacherCkpt)};
    if (any_lm) inputs.push_back(artifact(cfg, kLmCkpt));
    if (any_student) inputs.push_back(artifact(cfg, kStudentCkpt));
    write_manifest(cfg, "bench-quality", cfg.seed, inputs, outputs);
}

// ----------------------------- sim-curve -----------------------------

/// Trains two lambda=1 students (LM-pseudo targets and ground-truth targets)
/// and writes both similarity curves over the test set.
inline void sim_curve_stage(const ExperimentConfig& cfg) {
    ensure_out_dir(cfg);
    auto [train, test] = load_split_corpus(cfg);
    require_artifact(artifact(cfg, kTeacherCkpt), "train-teacher");
    require_artifact(artifact(cfg, kLmCkpt), "train-lm");
    TeacherModel teacher = TeacherModel::from_store(load_checkpoint(artifact(cfg, kTeacherCkpt)).store);
    LanguageModel lm = LanguageModel::from_store(load_checkpoint(artifact(cfg, kLmCkpt)).store);

    DistillConfig dc = resolved_distill(cfg);
    dc.lambda = 1.0;  // curve compares context estimation only

    StudentTrainResult pseudo = train_student(teacher, &lm, train, test, resolved_oracle(cfg), dc);
    StudentTrainResult truth = train_student_without_lm(teacher, train, test, resolved_oracle(cfg), dc);
    save_checkpoint(pseudo.student.params(), artifact(cfg, kStudentPseudoCkpt),
                    {{"kind", "student"}, {"size", to_string(dc.size)}, {"lambda", "1"}, {"mode", "pseudo"}});
    save_checkpoint(truth.student.params(), artifact(cfg, kStudentTruthCkpt),
                    {{"kind", "student"}, {"size", to_string(dc.size)}, {"lambda", "1"}, {"mode", "truth"}});

    SimilarityEvalConfig sc;
    sc.segment_words = cfg.pipeline.segment_words;
    sc.lookahead = cfg.teacher.lookahead;
    sc.temperature = cfg.teacher.temperature;
    sc.greedy = cfg.teacher.greedy;
    sc.sampler_base = seed_for(cfg, "sampler");
    sc.min_bucket = cfg.bench.min_bucket;

    SimilarityCurve pseudo_curve =
        similarity_curve(pseudo.student, teacher, &lm, test, SimilarityMode::pseudo, sc);
    SimilarityCurve truth_curve =
        similarity_curve(truth.student, teacher, nullptr, test, SimilarityMode::truth, sc);

    const fs::path pseudo_path = report_path(cfg.out_dir, "similarity", "pseudo", cfg.seed);
    const fs::path truth_path = report_path(cfg.out_dir, "similarity", "truth", cfg.seed);
    write_similarity_csv(pseudo_curve, pseudo_path);
    write_similarity_csv(truth_curve, truth_path);

    json section = json::object();
    auto curve_json = [](const SimilarityCurve& c) {
        json arr = json::array();
        for (const SimilarityBucket& b : c.buckets)
            arr.push_back({{"t", b.t}, {"mean", b.mean}, {"stddev", b.stddev}, {"count", b.count}});
        return arr;
    };
    section["pseudo"] = curve_json(pseudo_curve);
    section["truth"] = curve_json(truth_curve);
    merge_summary(cfg, "similarity", section);

    write_manifest(cfg, "sim-curve", dc.seed,
                   {artifact(cfg, kTeacherCkpt), artifact(cfg, kLmCkpt), artifact(cfg, kCorpusTest)},
                   {pseudo_path.filename().string(), truth_path.filename().string(), kStudentPseudoCkpt,
                    kStudentTruthCkpt});
    std::printf("[sim-curve] pseudo buckets %zu, truth buckets %zu\n", pseudo_curve.buckets.size(),
                truth_curve.buckets.size());
}

}  // namespace itts::stages
