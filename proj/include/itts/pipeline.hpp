#pragma once

// Incremental synthesis driver. At step t the driver sees w_{1:Nt} (plus true
// future words for the lookahead-k baseline only), resolves a context
// embedding according to the policy, and decodes the current segment with the
// shared teacher decoder. Segments are concatenated with delta-frame padding.

#include <chrono>
#include <fstream>
#include <string>
#include <vector>

#include "itts/distill.hpp"
#include "itts/segmenting.hpp"
#include "itts/tts.hpp"

namespace itts {

// ----------------------------- configuration -----------------------------

enum class Policy { independent, unicontext, lookahead_k, teacher_lm, student };

inline const char* to_string(Policy p) {
    switch (p) {
        case Policy::independent: return "independent";
        case Policy::unicontext: return "unicontext";
        case Policy::lookahead_k: return "lookahead_k";
        case Policy::teacher_lm: return "teacher_lm";
        case Policy::student: return "student";
    }
    return "?";
}

inline Policy parse_policy(const std::string& s) {
    if (s == "independent") return Policy::independent;
    if (s == "unicontext") return Policy::unicontext;
    if (s == "lookahead_k" || s == "lookahead" || s == "lookahead_full") return Policy::lookahead_k;
    if (s == "teacher_lm" || s == "teacher") return Policy::teacher_lm;
    if (s == "student") return Policy::student;
    throw ConfigError("unknown policy '" + s + "'");
}

struct PipelineConfig {
    std::size_t segment_words = 2;  // N
    std::size_t pad_frames = 1;     // delta
    Policy policy = Policy::student;
    std::size_t lookahead_k = 5;     // k (lookahead_k policy); huge k = full-sentence lookahead
    std::size_t max_frames = 0;      // per segment; 0 = auto (3 * K_f * words + 2)
    std::size_t lookahead = 5;       // L for pseudo-lookahead sampling
    double temperature = 1.0;
    bool greedy = false;
    std::uint64_t sampler_base = 1;
    std::size_t lm_cost_factor = 1;  // benchmark knob emulating a large LM
    std::size_t frames_per_word = 4;  // K_f, for the auto frame cap
};

inline void validate_pipeline(const PipelineConfig& cfg) {
    if (cfg.segment_words < 1) throw ConfigError("segment width N must be >= 1");
    if (cfg.policy == Policy::lookahead_k && cfg.lookahead_k < 1)
        throw ConfigError("lookahead_k policy needs k >= 1");
}

/// Prebuilt frozen bindings so inference never copies weights inside timed
/// regions. Construct once per loaded model set.
class PolicyRuntime {
public:
    PolicyRuntime(const TeacherModel& teacher, const LanguageModel* lm, const StudentNet* student)
        : teacher_(&teacher), teacher_bind_(teacher.params()), lm_(lm) {
        if (student != nullptr) {
            student_ = student;
            student_bind_.emplace(student->params());
        }
    }

    const TeacherModel& teacher() const { return *teacher_; }
    ParamBinder teacher_binder() const { return teacher_bind_.binder(); }
    const LanguageModel* lm() const { return lm_; }
    const StudentNet* student() const { return student_; }
    ParamBinder student_binder() const {
        if (!student_bind_) throw ConfigError("student policy requires a student checkpoint; run distill first");
        return student_bind_->binder();
    }

private:
    const TeacherModel* teacher_;
    ConstBinding teacher_bind_;
    const LanguageModel* lm_ = nullptr;
    const StudentNet* student_ = nullptr;
    std::optional<ConstBinding> student_bind_;
};

// ----------------------------- context resolution -----------------------------

struct ContextResolution {
    Tensor e;          // [1 x context_dim]
    bool none = false;  // independent policy: decoder conditioned on zeros
};

/// `past` is w_{1:N(t-1)}, `current` the segment being synthesized,
/// `true_future` only consulted by the lookahead_k baseline.
inline ContextResolution resolve_context(Policy policy, const std::vector<int>& past,
                                         const std::vector<int>& current,
                                         const std::vector<int>& true_future, const PipelineConfig& cfg,
                                         const PolicyRuntime& rt) {
    switch (policy) {
        case Policy::independent:
            return {rt.teacher().zero_context(), true};
        case Policy::unicontext:
            return {rt.teacher().context_for(rt.teacher_binder(), past, {}).e, false};
        case Policy::lookahead_k: {
            std::vector<int> ahead = true_future;
            if (ahead.size() > cfg.lookahead_k) ahead.resize(cfg.lookahead_k);
            return {rt.teacher().context_for(rt.teacher_binder(), past, ahead).e, false};
        }
        case Policy::teacher_lm: {
            if (rt.lm() == nullptr)
                throw ConfigError("teacher_lm policy requires a language model; run train-lm first");
            std::vector<int> prefix = past;
            prefix.insert(prefix.end(), current.begin(), current.end());
            SamplerConfig sc;
            sc.max_len = cfg.lookahead;
            sc.temperature = cfg.temperature;
            sc.greedy = cfg.greedy;
            sc.seed = lookahead_seed(cfg.sampler_base, prefix);
            std::vector<int> ahead = sample_lookahead_inflated(*rt.lm(), prefix, sc, cfg.lm_cost_factor);
            return {rt.teacher().context_for(rt.teacher_binder(), past, ahead).e, false};
        }
        case Policy::student: {
            if (rt.student() == nullptr)
                throw ConfigError("student policy requires a student checkpoint; run distill first");
            std::vector<int> prefix = past;
            prefix.insert(prefix.end(), current.begin(), current.end());
            return {rt.student()->predict(rt.student_binder(), prefix).e, false};
        }
    }
    throw ConfigError("unknown policy");
}

// ----------------------------- synthesis -----------------------------

struct SegmentTiming {
    std::size_t t = 0;  // 1-based segment step
    double context_ms = 0.0;
    double decode_ms = 0.0;
};

struct SynthesisResult {
    std::vector<FrameSegment> segments;
    Tensor concatenated;  // with delta padding
    std::vector<SegmentTiming> timings;
    std::size_t words = 0;
    bool any_runaway = false;
};

/// Append `delta` copies of each segment's final frame, then concatenate.
inline Tensor concat_with_padding(const std::vector<FrameSegment>& segments, std::size_t delta) {
    if (segments.empty()) throw ShapeError("concat_with_padding on an empty segment list");
    const std::size_t D = segments[0].frames.cols();
    std::size_t total = 0;
    for (const FrameSegment& s : segments) {
        if (s.frames.cols() != D) throw ShapeError("segments disagree on frame width");
        if (s.frames.rows() == 0) throw ShapeError("empty segment in concatenation");
        total += s.frames.rows() + delta;
    }
    Tensor out(total, D);
    std::size_t row = 0;
    for (const FrameSegment& s : segments) {
        for (std::size_t f = 0; f < s.frames.rows(); ++f, ++row)
            for (std::size_t d = 0; d < D; ++d) out.at(row, d) = s.frames.at(f, d);
        const std::size_t last = s.frames.rows() - 1;
        for (std::size_t p = 0; p < delta; ++p, ++row)
            for (std::size_t d = 0; d < D; ++d) out.at(row, d) = s.frames.at(last, d);
    }
    return out;
}

inline SynthesisResult incremental_synthesize(const Sentence& s, const PipelineConfig& cfg,
                                              const PolicyRuntime& rt) {
    validate_pipeline(cfg);
    using Clock = std::chrono::steady_clock;
    const std::vector<Segment> segments = segment_sentence(s, cfg.segment_words);

    SynthesisResult result;
    result.words = s.word_count();
    for (std::size_t t = 0; t < segments.size(); ++t) {
        const Segment& seg = segments[t];
        std::vector<int> past = prefix_words(s, seg.start);
        std::vector<int> future = suffix_words(s, seg.start + seg.word_ids.size());

        const auto t0 = Clock::now();
        ContextResolution ctx = resolve_context(cfg.policy, past, seg.word_ids, future, cfg, rt);
        const auto t1 = Clock::now();

        EncoderState cur = rt.teacher().encode(rt.teacher_binder(), seg.word_ids);
        const std::size_t cap = cfg.max_frames > 0
                                    ? cfg.max_frames
                                    : 3 * cfg.frames_per_word * seg.word_ids.size() + 2;
        FrameSegment frames = rt.teacher().decode_segment(rt.teacher_binder(), cur, ctx.e, cap);
        const auto t2 = Clock::now();

        result.any_runaway = result.any_runaway || frames.runaway;
        result.segments.push_back(std::move(frames));
        SegmentTiming timing;
        timing.t = t + 1;
        timing.context_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        timing.decode_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
        result.timings.push_back(timing);
    }
    result.concatenated = concat_with_padding(result.segments, cfg.pad_frames);
    return result;
}

// ----------------------------- serialization -----------------------------

// Frames file: "ITTSFRMS" | u32 version | u32 rows | u32 cols | u32 delta
//              | u32 policy_len | policy | f64 data (row-major, little-endian)

inline void save_frames(const Tensor& frames, std::size_t delta, const std::string& policy,
                        const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write frames file " + path.string());
    os.write("ITTSFRMS", 8);
    detail::write_raw<std::uint32_t>(os, 1u);
    detail::write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(frames.rows()));
    detail::write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(frames.cols()));
    detail::write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(delta));
    detail::write_str(os, policy);
    os.write(reinterpret_cast<const char*>(frames.data()),
             static_cast<std::streamsize>(frames.size() * sizeof(double)));
    if (!os) throw IoError("failed writing frames file " + path.string());
}

struct FramesFile {
    Tensor frames;
    std::size_t delta = 0;
    std::string policy;
};

inline FramesFile load_frames(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open frames file " + path.string());
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, "ITTSFRMS", 8) != 0) throw IoError("bad frames magic in " + path.string());
    const auto version = detail::read_raw<std::uint32_t>(is);
    if (version != 1u) throw IoError("unsupported frames version " + std::to_string(version));
    const auto rows = detail::read_raw<std::uint32_t>(is);
    const auto cols = detail::read_raw<std::uint32_t>(is);
    FramesFile f;
    f.delta = detail::read_raw<std::uint32_t>(is);
    f.policy = detail::read_str(is);
    f.frames = Tensor(rows, cols);
    is.read(reinterpret_cast<char*>(f.frames.data()),
            static_cast<std::streamsize>(f.frames.size() * sizeof(double)));
    if (!is) throw IoError("truncated frames file " + path.string());
    return f;
}

inline void save_timings_csv(const std::vector<SegmentTiming>& timings, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write timing csv " + path.string());
    os << "t,context_ms,decode_ms,cumulative_ms\n";
    double cumulative = 0.0;
    char buf[160];
    for (const SegmentTiming& t : timings) {
        cumulative += t.context_ms + t.decode_ms;
        std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f,%.6f\n", t.t, t.context_ms, t.decode_ms, cumulative);
        os << buf;
    }
}

}  // namespace itts
