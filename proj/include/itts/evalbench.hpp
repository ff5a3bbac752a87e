#pragma once

// Desk-scale analyses: cosine-similarity curves between student and teacher
// context embeddings, cumulative latency traces with words-per-minute, and a
// frame-reconstruction quality report per policy.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "itts/pipeline.hpp"

namespace itts {

// ----------------------------- cosine similarity -----------------------------

inline double cosine_similarity(const ContextEmbedding& a, const ContextEmbedding& b) {
    require_same_shape(a.e, b.e, "cosine lhs", "cosine rhs");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.e.size(); ++i) {
        dot += a.e[i] * b.e[i];
        na += a.e[i] * a.e[i];
        nb += b.e[i] * b.e[i];
    }
    if (na == 0.0 || nb == 0.0) throw NumericError("undefined similarity: zero vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

// ----------------------------- similarity curves -----------------------------

struct SimilarityBucket {
    std::size_t t = 0;  // 1-based segment step
    double mean = 0.0;
    double stddev = 0.0;
    std::size_t count = 0;
};

struct SimilarityCurve {
    std::vector<SimilarityBucket> buckets;  // only buckets with enough samples
};

enum class SimilarityMode { pseudo, truth };

inline const char* to_string(SimilarityMode m) { return m == SimilarityMode::pseudo ? "pseudo" : "truth"; }

struct SimilarityEvalConfig {
    std::size_t segment_words = 2;
    std::size_t lookahead = 5;
    double temperature = 1.0;
    bool greedy = false;
    std::uint64_t sampler_base = 1;
    std::size_t min_bucket = 10;  // buckets with fewer samples are suppressed
};

/// Per-step cosine similarity between the student embedding e^(S)(w_{1:Nt})
/// and the teacher target. Pseudo mode samples the lookahead from the LM;
/// truth mode uses the sentence's real next words.
inline SimilarityCurve similarity_curve(const StudentNet& student, const TeacherModel& teacher,
                                        const LanguageModel* lm, const std::vector<Sentence>& test,
                                        SimilarityMode mode, const SimilarityEvalConfig& cfg) {
    if (test.empty()) throw ConfigError("similarity_curve needs a nonempty test set");
    if (mode == SimilarityMode::pseudo && lm == nullptr)
        throw ConfigError("pseudo-mode similarity needs a language model; run train-lm first");

    ConstBinding teacher_bind(teacher.params());
    ConstBinding student_bind(student.params());
    std::map<std::size_t, std::vector<double>> samples;

    for (const Sentence& s : test) {
        const std::vector<Segment> segments = segment_sentence(s, cfg.segment_words);
        for (std::size_t t = 0; t < segments.size(); ++t) {
            const Segment& seg = segments[t];
            std::vector<int> past = prefix_words(s, seg.start);
            std::vector<int> prefix = past;
            prefix.insert(prefix.end(), seg.word_ids.begin(), seg.word_ids.end());

            std::vector<int> future;
            if (mode == SimilarityMode::pseudo) {
                SamplerConfig sc;
                sc.max_len = cfg.lookahead;
                sc.temperature = cfg.temperature;
                sc.greedy = cfg.greedy;
                sc.seed = lookahead_seed(cfg.sampler_base, prefix);
                future = sample_lookahead(*lm, prefix, sc);
            } else {
                future = suffix_words(s, seg.start + seg.word_ids.size());
            }
            ContextEmbedding e_t = teacher.context_for(teacher_bind.binder(), past, future);
            ContextEmbedding e_s = student.predict(student_bind.binder(), prefix);
            samples[t + 1].push_back(cosine_similarity(e_s, e_t));
        }
    }

    SimilarityCurve curve;
    for (const auto& [t, values] : samples) {
        if (values.size() < cfg.min_bucket) continue;
        SimilarityBucket bucket;
        bucket.t = t;
        bucket.count = values.size();
        for (double v : values) bucket.mean += v;
        bucket.mean /= static_cast<double>(values.size());
        for (double v : values) bucket.stddev += (v - bucket.mean) * (v - bucket.mean);
        bucket.stddev = std::sqrt(bucket.stddev / static_cast<double>(values.size()));
        curve.buckets.push_back(bucket);
    }
    return curve;
}

// ----------------------------- latency benchmark -----------------------------

struct LatencyPoint {
    std::size_t t = 0;
    double cumulative_ms = 0.0;  // median over repetitions of per-step mean cumulative time
    double context_ms = 0.0;
    double decode_ms = 0.0;
    std::size_t samples = 0;  // sentences contributing to this step
};

struct LatencyTrace {
    Policy policy;
    std::vector<LatencyPoint> points;
    double total_seconds = 0.0;  // median over repetitions
    double wpm = 0.0;            // words synthesized per minute, from the median run
    std::size_t words = 0;
    bool timer_warning = false;
    bool any_runaway = false;
};

inline double words_per_minute(std::size_t words, double seconds) {
    if (seconds <= 0.0) return 0.0;
    return static_cast<double>(words) / (seconds / 60.0);
}

/// Checks that the monotonic clock actually resolves below a microsecond.
inline bool timer_resolution_insufficient() {
    using Clock = std::chrono::steady_clock;
    static_assert(Clock::is_steady);
    double min_delta_ns = 1e18;
    for (int i = 0; i < 64; ++i) {
        const auto a = Clock::now();
        auto b = Clock::now();
        while (b == a) b = Clock::now();
        min_delta_ns = std::min(min_delta_ns,
                                std::chrono::duration<double, std::nano>(b - a).count());
    }
    return min_delta_ns > 1000.0;
}

/// Synthesizes the whole corpus `repetitions` times per policy and reports
/// median-over-repetitions cumulative time per step. Strictly single-threaded.
inline std::vector<LatencyTrace> latency_benchmark(const std::vector<Policy>& policies,
                                                   const std::vector<Sentence>& corpus,
                                                   std::size_t repetitions, const PipelineConfig& base,
                                                   const PolicyRuntime& rt) {
    if (corpus.empty()) throw ConfigError("latency_benchmark needs a nonempty corpus");
    if (repetitions < 1) throw ConfigError("latency_benchmark needs repetitions >= 1");
    const bool timer_warn = timer_resolution_insufficient();

    std::vector<LatencyTrace> traces;
    for (Policy policy : policies) {
        PipelineConfig cfg = base;
        cfg.policy = policy;
        validate_pipeline(cfg);

        std::size_t max_steps = 0;
        for (const Sentence& s : corpus)
            max_steps = std::max(max_steps, segment_sentence(s, cfg.segment_words).size());

        LatencyTrace trace;
        trace.policy = policy;
        trace.timer_warning = timer_warn;
        std::vector<std::vector<double>> rep_cumulative(max_steps);  // per step, one value per repetition
        std::vector<std::vector<double>> rep_context(max_steps), rep_decode(max_steps);
        std::vector<std::size_t> step_samples(max_steps, 0);
        std::vector<double> rep_totals;

        for (std::size_t rep = 0; rep < repetitions; ++rep) {
            std::vector<double> step_context(max_steps, 0.0), step_decode(max_steps, 0.0);
            std::vector<std::size_t> counts(max_steps, 0);
            double total_ms = 0.0;
            std::size_t words = 0;
            for (const Sentence& s : corpus) {
                SynthesisResult r = incremental_synthesize(s, cfg, rt);
                trace.any_runaway = trace.any_runaway || r.any_runaway;
                words += r.words;
                for (const SegmentTiming& st : r.timings) {
                    step_context[st.t - 1] += st.context_ms;
                    step_decode[st.t - 1] += st.decode_ms;
                    counts[st.t - 1] += 1;
                    total_ms += st.context_ms + st.decode_ms;
                }
            }
            trace.words = words;
            rep_totals.push_back(total_ms / 1000.0);
            double cumulative = 0.0;
            for (std::size_t t = 0; t < max_steps; ++t) {
                const double n = counts[t] > 0 ? static_cast<double>(counts[t]) : 1.0;
                const double ctx = step_context[t] / n;
                const double dec = step_decode[t] / n;
                cumulative += ctx + dec;
                rep_cumulative[t].push_back(cumulative);
                rep_context[t].push_back(ctx);
                rep_decode[t].push_back(dec);
                step_samples[t] = counts[t];
            }
        }

        auto median = [](std::vector<double> v) {
            std::sort(v.begin(), v.end());
            const std::size_t n = v.size();
            return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
        };
        for (std::size_t t = 0; t < max_steps; ++t) {
            LatencyPoint pt;
            pt.t = t + 1;
            pt.cumulative_ms = median(rep_cumulative[t]);
            pt.context_ms = median(rep_context[t]);
            pt.decode_ms = median(rep_decode[t]);
            pt.samples = step_samples[t];
            trace.points.push_back(pt);
        }
        trace.total_seconds = median(rep_totals);
        trace.wpm = words_per_minute(trace.words, trace.total_seconds);
        traces.push_back(std::move(trace));
    }
    return traces;
}

// ----------------------------- quality report -----------------------------

struct PolicyQuality {
    Policy policy;
    double frame_mse = 0.0;      // mean over sentences of per-sentence frame MSE vs oracle
    double stop_accuracy = 0.0;  // segments whose free-running length is within +-1 of oracle
    std::size_t sentences = 0;
    std::size_t runaway_segments = 0;
};

/// Free-running synthesis per policy, frame MSE against the oracle aligned
/// per segment by truncation/zero-padding (missing frames are charged the
/// oracle's squared magnitude; extra frames are dropped).
inline std::vector<PolicyQuality> quality_report(const std::vector<Policy>& policies,
                                                 const std::vector<Sentence>& corpus,
                                                 const OracleParams& oracle, const PipelineConfig& base,
                                                 const PolicyRuntime& rt) {
    if (corpus.empty()) throw ConfigError("quality_report needs a nonempty corpus");
    const std::size_t vocab = rt.teacher().dims().vocab;

    std::vector<PolicyQuality> report;
    for (Policy policy : policies) {
        PipelineConfig cfg = base;
        cfg.policy = policy;
        validate_pipeline(cfg);

        PolicyQuality q;
        q.policy = policy;
        double mse_sum = 0.0;
        std::size_t stop_hits = 0, stop_total = 0;
        for (const Sentence& s : corpus) {
            FrameTarget target = oracle_frames(s, oracle, vocab);
            SynthesisResult r = incremental_synthesize(s, cfg, rt);
            const std::vector<Segment> segs = segment_sentence(s, cfg.segment_words);

            double sq = 0.0;
            std::size_t oracle_rows = 0;
            for (std::size_t i = 0; i < segs.size(); ++i) {
                const std::size_t L = segs[i].word_ids.size() * oracle.frames_per_word;
                const std::size_t row0 = segs[i].start * oracle.frames_per_word;
                const FrameSegment& pred = r.segments[i];
                for (std::size_t f = 0; f < L; ++f) {
                    for (std::size_t d = 0; d < oracle.frame_dim; ++d) {
                        const double o = target.frames.at(row0 + f, d);
                        const double p = f < pred.frames.rows() ? pred.frames.at(f, d) : 0.0;
                        sq += (p - o) * (p - o);
                    }
                }
                oracle_rows += L;
                const long diff =
                    static_cast<long>(pred.frames.rows()) - static_cast<long>(L);
                if (diff >= -1 && diff <= 1) ++stop_hits;
                ++stop_total;
                if (pred.runaway) ++q.runaway_segments;
            }
            mse_sum += sq / static_cast<double>(oracle_rows * oracle.frame_dim);
        }
        q.sentences = corpus.size();
        q.frame_mse = mse_sum / static_cast<double>(corpus.size());
        q.stop_accuracy = stop_total > 0 ? static_cast<double>(stop_hits) / static_cast<double>(stop_total) : 0.0;
        report.push_back(q);
    }
    return report;
}

// ----------------------------- report files -----------------------------

inline std::filesystem::path report_path(const std::filesystem::path& dir, const std::string& kind,
                                         const std::string& policy, std::uint64_t seed) {
    return dir / ("report_" + kind + "_" + policy + "_" + std::to_string(seed) + ".csv");
}

inline void write_similarity_csv(const SimilarityCurve& curve, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << "t,mean,stddev,count\n";
    char buf[128];
    for (const SimilarityBucket& b : curve.buckets) {
        std::snprintf(buf, sizeof(buf), "%zu,%.9f,%.9f,%zu\n", b.t, b.mean, b.stddev, b.count);
        os << buf;
    }
}

inline void write_latency_csv(const LatencyTrace& trace, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << "t,cumulative_ms,context_ms,decode_ms,samples\n";
    char buf[160];
    for (const LatencyPoint& p : trace.points) {
        std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f,%.6f,%zu\n", p.t, p.cumulative_ms, p.context_ms,
                      p.decode_ms, p.samples);
        os << buf;
    }
}

inline void write_quality_csv(const PolicyQuality& q, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << "policy,frame_mse,stop_accuracy,sentences,runaway_segments\n";
    char buf[192];
    std::snprintf(buf, sizeof(buf), "%s,%.9f,%.6f,%zu,%zu\n", to_string(q.policy), q.frame_mse,
                  q.stop_accuracy, q.sentences, q.runaway_segments);
    os << buf;
}

}  // namespace itts
