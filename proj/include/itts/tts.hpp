#pragma once

// Teacher-side synthesis model: BLSTM word encoder, style-token context
// embedding network, and an autoregressive frame decoder with a per-word
// stop-flag head. The decoder conditions on [previous frame | context
// embedding | mean-pooled current-segment encoding]; the conditioning part is
// constant per segment, so its gate projection is computed once.

#include <optional>
#include <string>
#include <vector>

#include "itts/corpus.hpp"
#include "itts/lm.hpp"
#include "itts/nn.hpp"
#include "itts/segmenting.hpp"

namespace itts {

struct TtsDims {
    std::size_t vocab = 0;
    std::size_t enc_embed = 64;
    std::size_t enc_hidden = 128;  // per-word output width (both directions)
    std::size_t dec_hidden = 256;
    std::size_t context_dim = 256;
    std::size_t style_tokens = 10;
    std::size_t frame_dim = 16;
};

/// Per-word encoder outputs for one sequence.
struct EncoderState {
    Tensor hidden;  // [len x enc_hidden]
    std::size_t length() const { return hidden.rows(); }
};

/// 256-dim context vector; attention weights kept for diagnostics.
struct ContextEmbedding {
    Tensor e;          // [1 x context_dim]
    Tensor attention;  // [1 x style_tokens] when produced by the token bank
};

struct FrameSegment {
    Tensor frames;       // [F x D]
    Tensor stop_logits;  // [F x 1]
    bool runaway = false;
};

/// L_target = frame MSE + stop-flag BCE, equally weighted.
inline double target_loss(const FrameSegment& pred, const Tensor& target_frames, const Tensor& target_flags) {
    if (!pred.frames.same_shape(target_frames))
        throw ShapeError("predicted frames " + pred.frames.shape_str() + " vs target " +
                         target_frames.shape_str());
    if (!pred.stop_logits.same_shape(target_flags))
        throw ShapeError("stop logits " + pred.stop_logits.shape_str() + " vs flags " +
                         target_flags.shape_str());
    return mse_loss(pred.frames, target_frames) + bce_stop_loss(pred.stop_logits, target_flags);
}

/// One sliding-window training example.
struct WindowExample {
    std::vector<int> observed;      // words before the current chunk
    std::vector<int> current;       // the chunk being decoded
    std::vector<int> truth_future;  // true next words, capped at L
    Tensor frames;                  // [F x D] oracle slice for the chunk
    Tensor flags;                   // [F x 1] word-final stop flags
    std::vector<int> pseudo_future;  // lazily cached LM lookahead
    bool pseudo_ready = false;
    Tensor teacher_target;  // lazily cached teacher context embedding (distillation)
};

class TeacherModel {
public:
    static TeacherModel init(const TtsDims& dims, std::uint64_t seed) {
        if (dims.enc_hidden % 2 != 0) throw ConfigError("encoder hidden width must be even");
        TeacherModel m;
        m.dims_ = dims;
        Rng rng(seed);
        const std::size_t H2 = dims.enc_hidden / 2;
        m.params_.add("enc.emb", glorot_init(rng, dims.vocab, dims.enc_embed));
        add_lstm_params(m.params_, "enc.fwd", dims.enc_embed, H2, rng);
        add_lstm_params(m.params_, "enc.bwd", dims.enc_embed, H2, rng);
        add_dense_params(m.params_, "ctx.query", 2 * dims.enc_hidden, dims.context_dim, rng);
        m.params_.add("ctx.tokens", glorot_init(rng, dims.style_tokens, dims.context_dim));
        m.params_.add("dec.cell.Wx_frame", recurrent_init(rng, dims.frame_dim, 4 * dims.dec_hidden));
        m.params_.add("dec.cell.Wx_ctx",
                      recurrent_init(rng, dims.context_dim + dims.enc_hidden, 4 * dims.dec_hidden));
        m.params_.add("dec.cell.Wh", recurrent_init(rng, dims.dec_hidden, 4 * dims.dec_hidden));
        m.params_.add("dec.cell.b", Tensor(1, 4 * dims.dec_hidden));
        add_dense_params(m.params_, "dec.frame", dims.dec_hidden, dims.frame_dim, rng);
        add_dense_params(m.params_, "dec.stop", dims.dec_hidden, 1, rng);
        return m;
    }

    static TeacherModel from_store(ParameterStore store) {
        TeacherModel m;
        m.dims_.vocab = store.value("enc.emb").rows();
        m.dims_.enc_embed = store.value("enc.emb").cols();
        m.dims_.enc_hidden = 2 * store.value("enc.fwd.Wh").rows();
        m.dims_.dec_hidden = store.value("dec.cell.Wh").rows();
        m.dims_.context_dim = store.value("ctx.tokens").cols();
        m.dims_.style_tokens = store.value("ctx.tokens").rows();
        m.dims_.frame_dim = store.value("dec.frame.W").cols();
        m.params_ = std::move(store);
        return m;
    }

    const TtsDims& dims() const { return dims_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }

    // ------------------------- graph builders (batched) -------------------------

    struct EncodedBatch {
        std::vector<Var> outputs;  // per step [B x enc_hidden], zeroed on padding
        Var pooled;                // [B x enc_hidden]; all-zero row for empty sequences
    };

    EncodedBatch encode_batch(const ParamBinder& p, const std::vector<std::vector<int>>& seqs) const {
        const std::size_t B = seqs.size();
        std::size_t T = 0;
        bool uniform = true;
        for (const auto& s : seqs) {
            for (int id : s)
                if (id < 0 || static_cast<std::size_t>(id) >= dims_.vocab)
                    throw VocabError("word id " + std::to_string(id) + " outside vocabulary of " +
                                     std::to_string(dims_.vocab));
            T = std::max(T, s.size());
            uniform = uniform && s.size() == seqs[0].size();
        }
        EncodedBatch enc;
        if (T == 0) {
            enc.pooled = constant(Tensor(B, dims_.enc_hidden));
            return enc;
        }

        Var emb = p("enc.emb");
        std::vector<Var> inputs;
        std::vector<Tensor> masks;
        Tensor inv_len(B, 1);
        for (std::size_t b = 0; b < B; ++b)
            inv_len[b] = seqs[b].empty() ? 0.0 : 1.0 / static_cast<double>(seqs[b].size());
        for (std::size_t t = 0; t < T; ++t) {
            std::vector<int> ids(B, 0);
            Tensor mask(B, 1);
            for (std::size_t b = 0; b < B; ++b) {
                if (t < seqs[b].size()) {
                    ids[b] = seqs[b][t];
                    mask[b] = 1.0;
                }
            }
            inputs.push_back(gather_rows(emb, ids));
            if (!uniform) masks.push_back(mask);
        }
        BlstmRun run = blstm_run(bind_lstm(p, "enc.fwd"), bind_lstm(p, "enc.bwd"), inputs, masks);
        enc.outputs = run.outputs;
        enc.pooled = masked_mean(run.outputs, inv_len);
        return enc;
    }

    struct ContextOut {
        Var e;          // [B x context_dim]
        Var attention;  // [B x style_tokens]
    };

    /// e = attention-weighted sum of style tokens, query from the two pooled
    /// context summaries (zeros standing in for missing past/future).
    ContextOut context_graph(const ParamBinder& p, const Var& past_pooled, const Var& future_pooled) const {
        Var query = dense(p, concat_cols({past_pooled, future_pooled}), "ctx.query");
        Var att = softmax_rows(matmul_nt(query, p("ctx.tokens")));
        return {matmul(att, p("ctx.tokens")), att};
    }

    struct DecodeLossParts {
        Var total, mse, bce;
    };

    /// Teacher-forced decode of fixed-length chunks with per-step losses.
    /// `cond` is [B x (context_dim + enc_hidden)]; targets come as per-step
    /// rows. Gradients flow through `cond` into whatever produced it.
    DecodeLossParts decode_loss_graph(const ParamBinder& p, const Var& cond,
                                      const std::vector<Tensor>& prev_steps,
                                      const std::vector<Tensor>& frame_steps,
                                      const std::vector<Tensor>& flag_steps) const {
        const std::size_t F = frame_steps.size();
        const std::size_t B = cond->value.rows();
        LstmVars cell;
        cell.Wh = p("dec.cell.Wh");
        cell.b = p("dec.cell.b");
        cell.hidden = dims_.dec_hidden;
        Var wx_frame = p("dec.cell.Wx_frame");
        Var cond_gates = matmul(cond, p("dec.cell.Wx_ctx"));  // constant across steps

        Var h = constant(Tensor(B, dims_.dec_hidden));
        Var c = constant(Tensor(B, dims_.dec_hidden));
        Var mse, bce;
        for (std::size_t f = 0; f < F; ++f) {
            Var x_gates = add(matmul(constant(prev_steps[f]), wx_frame), cond_gates);
            std::tie(h, c) = lstm_step_pre(cell, x_gates, h, c);
            Var frame = dense(p, h, "dec.frame");
            Var stop = dense(p, h, "dec.stop");
            Var m = mse_to(frame, frame_steps[f]);
            Var s = bce_logits_to(stop, flag_steps[f]);
            mse = mse ? add(mse, m) : m;
            bce = bce ? add(bce, s) : s;
        }
        DecodeLossParts parts;
        parts.mse = scale(mse, 1.0 / static_cast<double>(F));
        parts.bce = scale(bce, 1.0 / static_cast<double>(F));
        parts.total = add(parts.mse, parts.bce);
        return parts;
    }

    // ------------------------- plain inference -------------------------

    EncoderState encode(const ParamBinder& p, const std::vector<int>& words) const {
        if (words.empty()) throw ShapeError("encode called with an empty word sequence");
        EncodedBatch enc = encode_batch(p, {words});
        EncoderState state;
        state.hidden = Tensor(words.size(), dims_.enc_hidden);
        for (std::size_t t = 0; t < words.size(); ++t)
            for (std::size_t j = 0; j < dims_.enc_hidden; ++j)
                state.hidden.at(t, j) = enc.outputs[t]->value.at(0, j);
        return state;
    }

    static Tensor mean_rows_value(const Tensor& m) {
        Tensor out(1, m.cols());
        if (m.rows() == 0) return out;
        for (std::size_t r = 0; r < m.rows(); ++r)
            for (std::size_t c = 0; c < m.cols(); ++c) out[c] += m.at(r, c);
        for (std::size_t c = 0; c < m.cols(); ++c) out[c] /= static_cast<double>(m.rows());
        return out;
    }

    /// Either input may be null/empty (no past at t=1, no future at the end).
    ContextEmbedding context_embed(const ParamBinder& p, const EncoderState* past,
                                   const EncoderState* future) const {
        Tensor past_pool(1, dims_.enc_hidden), future_pool(1, dims_.enc_hidden);
        if (past != nullptr && past->length() > 0) past_pool = mean_rows_value(past->hidden);
        if (future != nullptr && future->length() > 0) future_pool = mean_rows_value(future->hidden);
        ContextOut out = context_graph(p, constant(past_pool), constant(future_pool));
        return {out.e->value, out.attention->value};
    }

    Tensor zero_context() const { return Tensor(1, dims_.context_dim); }

    /// Decoder conditioning vector for a segment.
    Tensor conditioning(const EncoderState& current, const Tensor& context) const {
        if (context.cols() != dims_.context_dim)
            throw ShapeError("context embedding " + context.shape_str() + " expected width " +
                             std::to_string(dims_.context_dim));
        Tensor pooled = mean_rows_value(current.hidden);
        Tensor cond(1, dims_.context_dim + dims_.enc_hidden);
        for (std::size_t j = 0; j < dims_.context_dim; ++j) cond[j] = context[j];
        for (std::size_t j = 0; j < dims_.enc_hidden; ++j) cond[dims_.context_dim + j] = pooled[j];
        return cond;
    }

    /// Free-running decode. The stop head fires once per word (that is its
    /// training target), so the segment ends after `word_count` firings; the
    /// max_frames cap flags runaway decoding instead of failing.
    FrameSegment decode_segment(const ParamBinder& p, const EncoderState& current, const Tensor& context,
                                std::size_t max_frames) const {
        if (current.length() == 0) throw ShapeError("decode_segment needs a nonempty current segment");
        if (max_frames < 1) throw ConfigError("max_frames must be >= 1");
        const std::size_t expected_stops = current.length();

        Var cond = constant(conditioning(current, context));
        LstmVars cell;
        cell.Wh = p("dec.cell.Wh");
        cell.b = p("dec.cell.b");
        cell.hidden = dims_.dec_hidden;
        Var wx_frame = p("dec.cell.Wx_frame");
        Var cond_gates = matmul(cond, p("dec.cell.Wx_ctx"));

        Var h = constant(Tensor(1, dims_.dec_hidden));
        Var c = constant(Tensor(1, dims_.dec_hidden));
        Tensor prev(1, dims_.frame_dim);
        std::vector<Tensor> frames;
        std::vector<double> stops;
        std::size_t fired = 0;
        bool runaway = true;
        for (std::size_t f = 0; f < max_frames; ++f) {
            Var x_gates = add(matmul(constant(prev), wx_frame), cond_gates);
            std::tie(h, c) = lstm_step_pre(cell, x_gates, h, c);
            Tensor frame = dense(p, h, "dec.frame")->value;
            const double logit = dense(p, h, "dec.stop")->value[0];
            frames.push_back(frame);
            stops.push_back(logit);
            prev = frame;
            if (detail::stable_sigmoid(logit) > 0.5) {
                ++fired;
                if (fired >= expected_stops) {
                    runaway = false;
                    break;
                }
            }
        }

        FrameSegment seg;
        seg.frames = Tensor(frames.size(), dims_.frame_dim);
        seg.stop_logits = Tensor(frames.size(), 1);
        for (std::size_t f = 0; f < frames.size(); ++f) {
            for (std::size_t d = 0; d < dims_.frame_dim; ++d) seg.frames.at(f, d) = frames[f][d];
            seg.stop_logits[f] = stops[f];
        }
        seg.runaway = runaway;
        return seg;
    }

    /// Teacher-forced decode: consumes ground-truth previous frames, emits
    /// exactly as many frames and stop logits as the target has rows.
    FrameSegment decode_teacher_forced(const ParamBinder& p, const EncoderState& current,
                                       const Tensor& context, const Tensor& target_frames) const {
        if (current.length() == 0) throw ShapeError("decode needs a nonempty current segment");
        if (target_frames.cols() != dims_.frame_dim || target_frames.rows() == 0)
            throw ShapeError("teacher-forcing targets " + target_frames.shape_str() + " expected [F x " +
                             std::to_string(dims_.frame_dim) + "]");
        const std::size_t F = target_frames.rows();
        std::vector<Tensor> prev_steps(F), frame_steps(F), flag_steps(F, Tensor(1, 1));
        for (std::size_t f = 0; f < F; ++f) {
            prev_steps[f] = Tensor(1, dims_.frame_dim);
            frame_steps[f] = Tensor(1, dims_.frame_dim);
            for (std::size_t d = 0; d < dims_.frame_dim; ++d) {
                if (f > 0) prev_steps[f][d] = target_frames.at(f - 1, d);
                frame_steps[f][d] = target_frames.at(f, d);
            }
        }
        // Reuse the loss graph for the forward pass; extract per-step outputs.
        Var cond = constant(conditioning(current, context));
        LstmVars cell;
        cell.Wh = p("dec.cell.Wh");
        cell.b = p("dec.cell.b");
        cell.hidden = dims_.dec_hidden;
        Var wx_frame = p("dec.cell.Wx_frame");
        Var cond_gates = matmul(cond, p("dec.cell.Wx_ctx"));
        Var h = constant(Tensor(1, dims_.dec_hidden));
        Var c = constant(Tensor(1, dims_.dec_hidden));
        FrameSegment seg;
        seg.frames = Tensor(F, dims_.frame_dim);
        seg.stop_logits = Tensor(F, 1);
        for (std::size_t f = 0; f < F; ++f) {
            Var x_gates = add(matmul(constant(prev_steps[f]), wx_frame), cond_gates);
            std::tie(h, c) = lstm_step_pre(cell, x_gates, h, c);
            Tensor frame = dense(p, h, "dec.frame")->value;
            for (std::size_t d = 0; d < dims_.frame_dim; ++d) seg.frames.at(f, d) = frame[d];
            seg.stop_logits[f] = dense(p, h, "dec.stop")->value[0];
        }
        return seg;
    }

    /// Convenience: context embedding from raw id sequences (either may be
    /// empty), composing encode and the token-bank attention.
    ContextEmbedding context_for(const ParamBinder& p, const std::vector<int>& observed_past,
                                 const std::vector<int>& future) const {
        std::optional<EncoderState> past_state, future_state;
        if (!observed_past.empty()) past_state = encode(p, observed_past);
        if (!future.empty()) future_state = encode(p, future);
        return context_embed(p, past_state ? &*past_state : nullptr, future_state ? &*future_state : nullptr);
    }

private:
    TtsDims dims_;
    ParameterStore params_;
};

// ----------------------------- training -----------------------------

struct TeacherTrainConfig {
    std::size_t window = 3;
    std::size_t hop = 1;
    std::size_t lookahead = 5;  // L
    std::size_t phase1_iters = 2000;
    std::size_t phase2_iters = 400;
    double lr = 1e-3;
    std::size_t batch_size = 16;
    std::uint64_t seed = 1;
    double temperature = 1.0;
    bool greedy = false;
    // One base seed shared by every consumer of pseudo lookahead (teacher
    // fine-tuning, distillation, evaluation, inference) keeps the
    // prefix -> lookahead map a single fixed function across the experiment.
    std::uint64_t sampler_base = 1;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-6;
};

inline std::vector<WindowExample> build_window_examples(const std::vector<Sentence>& corpus,
                                                        const OracleParams& oracle, std::size_t vocab,
                                                        std::size_t window, std::size_t hop) {
    std::vector<WindowExample> examples;
    for (const Sentence& s : corpus) {
        FrameTarget target = oracle_frames(s, oracle, vocab);
        const std::vector<int> words = s.words();
        for (const TrainingWindow& w : make_training_windows(s, window, hop)) {
            WindowExample ex;
            ex.observed = prefix_words(s, w.offset);
            ex.current = {words.begin() + static_cast<long>(w.offset),
                          words.begin() + static_cast<long>(w.offset + w.length)};
            // Ground-truth lookahead is the full remaining sentence; only the
            // LM-sampled pseudo lookahead is capped (at L, via the stop rule).
            ex.truth_future = suffix_words(s, w.offset + w.length);

            const std::size_t F = w.length * oracle.frames_per_word;
            const std::size_t row0 = w.offset * oracle.frames_per_word;
            ex.frames = Tensor(F, oracle.frame_dim);
            ex.flags = Tensor(F, 1);
            for (std::size_t f = 0; f < F; ++f) {
                for (std::size_t d = 0; d < oracle.frame_dim; ++d)
                    ex.frames.at(f, d) = target.frames.at(row0 + f, d);
                ex.flags[f] = target.stop_flags[row0 + f];
            }
            examples.push_back(std::move(ex));
        }
    }
    return examples;
}

/// LM lookahead for a window, sampled once and cached; the sampler seed is a
/// pure function of the observed words, so the cache is just a speedup.
inline const std::vector<int>& pseudo_future(WindowExample& ex, const LanguageModel& lm, std::size_t lookahead,
                                             double temperature, bool greedy, std::uint64_t sampler_base) {
    if (!ex.pseudo_ready) {
        std::vector<int> prefix = ex.observed;
        prefix.insert(prefix.end(), ex.current.begin(), ex.current.end());
        SamplerConfig sc;
        sc.max_len = lookahead;
        sc.temperature = temperature;
        sc.greedy = greedy;
        sc.seed = lookahead_seed(sampler_base, prefix);
        ex.pseudo_future = sample_lookahead(lm, prefix, sc);
        ex.pseudo_ready = true;
    }
    return ex.pseudo_future;
}

/// Assembled graph loss for one batch of equal-length windows.
inline Var teacher_batch_loss(const TeacherModel& model, const ParamBinder& p,
                              const std::vector<WindowExample*>& batch, bool use_pseudo,
                              const LanguageModel* lm, const TeacherTrainConfig& cfg,
                              std::uint64_t sampler_base) {
    const std::size_t B = batch.size();
    const std::size_t F = batch[0]->frames.rows();
    const std::size_t D = batch[0]->frames.cols();

    std::vector<std::vector<int>> past_seqs(B), future_seqs(B), current_seqs(B);
    for (std::size_t b = 0; b < B; ++b) {
        WindowExample& ex = *batch[b];
        if (ex.frames.rows() != F)
            throw ConfigError("teacher batches need equal window lengths; configure window <= min sentence length");
        past_seqs[b] = ex.observed;
        current_seqs[b] = ex.current;
        future_seqs[b] = use_pseudo ? pseudo_future(ex, *lm, cfg.lookahead, cfg.temperature, cfg.greedy,
                                                    sampler_base)
                                    : ex.truth_future;
    }

    TeacherModel::EncodedBatch past = model.encode_batch(p, past_seqs);
    TeacherModel::EncodedBatch future = model.encode_batch(p, future_seqs);
    TeacherModel::EncodedBatch current = model.encode_batch(p, current_seqs);
    TeacherModel::ContextOut ctx = model.context_graph(p, past.pooled, future.pooled);
    Var cond = concat_cols({ctx.e, current.pooled});

    std::vector<Tensor> prev_steps(F), frame_steps(F), flag_steps(F);
    for (std::size_t f = 0; f < F; ++f) {
        prev_steps[f] = Tensor(B, D);
        frame_steps[f] = Tensor(B, D);
        flag_steps[f] = Tensor(B, 1);
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t d = 0; d < D; ++d) {
                if (f > 0) prev_steps[f].at(b, d) = batch[b]->frames.at(f - 1, d);
                frame_steps[f].at(b, d) = batch[b]->frames.at(f, d);
            }
            flag_steps[f][b] = batch[b]->flags[f];
        }
    }
    return model.decode_loss_graph(p, cond, prev_steps, frame_steps, flag_steps).total;
}

struct TeacherTrainResult {
    std::vector<double> phase1_loss;
    std::vector<double> phase2_loss;
};

/// Phase 1 trains encoder/decoder/context network with ground-truth lookahead
/// windows; phase 2 fine-tunes with LM-sampled pseudo lookahead.
inline TeacherTrainResult train_teacher(TeacherModel& model, const std::vector<Sentence>& corpus,
                                        const OracleParams& oracle, const LanguageModel* lm,
                                        const TeacherTrainConfig& cfg) {
    if (corpus.empty()) throw ConfigError("train_teacher requires a nonempty corpus");
    if (cfg.phase2_iters > 0 && lm == nullptr)
        throw ConfigError("phase 2 needs a trained language model; run train-lm first");

    std::vector<WindowExample> examples =
        build_window_examples(corpus, oracle, model.dims().vocab, cfg.window, cfg.hop);
    const std::uint64_t sampler_base = cfg.sampler_base;

    AdamState adam;
    adam.lr = cfg.lr;
    adam.beta1 = cfg.adam_beta1;
    adam.beta2 = cfg.adam_beta2;
    adam.eps = cfg.adam_eps;
    Rng order(splitmix64(cfg.seed ^ 0x746561636865ull));  // "teache"
    TeacherTrainResult result;

    auto run_phase = [&](std::size_t iters, bool use_pseudo, std::vector<double>& trace) {
        trace.reserve(iters);
        for (std::size_t it = 0; it < iters; ++it) {
            std::vector<WindowExample*> batch;
            batch.reserve(cfg.batch_size);
            for (std::size_t b = 0; b < cfg.batch_size; ++b)
                batch.push_back(&examples[static_cast<std::size_t>(
                    order.uniform_int(0, static_cast<long>(examples.size()) - 1))]);

            model.params().zero_grads();
            ModelGraph g(model.params());
            Var loss = teacher_batch_loss(model, graph_binder(g), batch, use_pseudo, lm, cfg, sampler_base);
            const double value = loss->value[0];
            if (!std::isfinite(value))
                throw TrainingError("teacher loss diverged",
                                    static_cast<long>(trace.size() + (use_pseudo ? cfg.phase1_iters : 0)));
            g.backward_and_accumulate(loss);
            adam_step(model.params(), adam);
            trace.push_back(value);
        }
    };

    run_phase(cfg.phase1_iters, false, result.phase1_loss);
    run_phase(cfg.phase2_iters, true, result.phase2_loss);
    return result;
}

}  // namespace itts
