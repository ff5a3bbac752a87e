#pragma once

// Word-level autoregressive LM: embedding table, single-layer LSTM, softmax
// head. Downstream code only needs conditional next-word distributions and
// the stop-on-EOS lookahead sampler.

#include <algorithm>
#include <string>
#include <vector>

#include "itts/corpus.hpp"
#include "itts/nn.hpp"

namespace itts {

struct LmConfig {
    std::size_t embed_dim = 64;    // E_lm
    std::size_t hidden_dim = 128;  // H_lm
    std::size_t iters = 800;
    double lr = 1e-3;
    std::size_t batch_size = 16;
    std::uint64_t seed = 1;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-6;
};

class LanguageModel {
public:
    static LanguageModel init(std::size_t vocab_size, std::size_t embed_dim, std::size_t hidden_dim,
                              std::uint64_t seed) {
        LanguageModel lm;
        lm.vocab_ = vocab_size;
        lm.embed_ = embed_dim;
        lm.hidden_ = hidden_dim;
        Rng rng(seed);
        lm.params_.add("lm.emb", glorot_init(rng, vocab_size, embed_dim));
        add_lstm_params(lm.params_, "lm.cell", embed_dim, hidden_dim, rng);
        add_dense_params(lm.params_, "lm.out", hidden_dim, vocab_size, rng);
        return lm;
    }

    static LanguageModel from_store(ParameterStore store) {
        LanguageModel lm;
        lm.vocab_ = store.value("lm.emb").rows();
        lm.embed_ = store.value("lm.emb").cols();
        lm.hidden_ = store.value("lm.cell.Wh").rows();
        lm.params_ = std::move(store);
        return lm;
    }

    std::size_t vocab_size() const { return vocab_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }

    struct State {
        Tensor h, c;
    };

    State initial_state() const { return {Tensor(1, hidden_), Tensor(1, hidden_)}; }

    void advance(State& state, int word_id) const {
        const Tensor& emb = params_.value("lm.emb");
        if (word_id < 0 || static_cast<std::size_t>(word_id) >= vocab_)
            throw VocabError("word id " + std::to_string(word_id) + " outside LM vocabulary");
        Tensor x(1, embed_);
        for (std::size_t d = 0; d < embed_; ++d) x[d] = emb.at(static_cast<std::size_t>(word_id), d);
        LstmParams cell{params_.value("lm.cell.Wx"), params_.value("lm.cell.Wh"), params_.value("lm.cell.b")};
        auto [h, c] = lstm_cell_step(x, state.h, state.c, cell);
        state.h = h;
        state.c = c;
    }

    Tensor next_logits(const State& state) const {
        return linear_forward(state.h, params_.value("lm.out.W"), params_.value("lm.out.b"));
    }

    /// p(w | prefix) as a normalized vector over the vocabulary.
    std::vector<double> next_distribution(const std::vector<int>& prefix, double temperature = 1.0) const {
        if (prefix.empty()) throw ShapeError("next_distribution requires a nonempty prefix");
        State st = initial_state();
        for (int id : prefix) advance(st, id);
        Tensor logits = next_logits(st);
        return softmax_vector(logits, temperature);
    }

    static std::vector<double> softmax_vector(const Tensor& logits, double temperature) {
        std::vector<double> p(logits.size());
        double mx = logits[0] / temperature;
        for (std::size_t i = 0; i < logits.size(); ++i) mx = std::max(mx, logits[i] / temperature);
        double sum = 0.0;
        for (std::size_t i = 0; i < logits.size(); ++i) {
            p[i] = std::exp(logits[i] / temperature - mx);
            sum += p[i];
        }
        for (double& v : p) v /= sum;
        return p;
    }

private:
    ParameterStore params_;
    std::size_t vocab_ = 0, embed_ = 0, hidden_ = 0;
};

// ----------------------------- training -----------------------------

namespace detail {

/// Next-token cross-entropy of one padded batch; shared by the training step
/// and held-out evaluation. `denom` spreads the mean over all real positions.
inline Var lm_batch_loss(ModelGraph& g, const std::vector<const Sentence*>& batch, std::size_t hidden) {
    std::size_t max_steps = 0, total = 0;
    for (const Sentence* s : batch) {
        max_steps = std::max(max_steps, s->tokens.size() - 1);
        total += s->tokens.size() - 1;
    }
    const std::size_t B = batch.size();
    Var emb = g.p("lm.emb");
    LstmVars cell = bind_lstm(g, "lm.cell");

    Var h = constant(Tensor(B, hidden)), c = constant(Tensor(B, hidden));
    Var loss;
    for (std::size_t t = 0; t < max_steps; ++t) {
        std::vector<int> ids(B, 0), targets(B, 0);
        std::vector<double> mask(B, 0.0);
        Tensor mask_col(B, 1);
        for (std::size_t b = 0; b < B; ++b) {
            const auto& toks = batch[b]->tokens;
            if (t + 1 < toks.size()) {
                ids[b] = toks[t];
                targets[b] = toks[t + 1];
                mask[b] = 1.0;
                mask_col[b] = 1.0;
            }
        }
        Var x = gather_rows(emb, ids);
        auto [h_new, c_new] = lstm_step(cell, x, h, c);
        h = mask_carry(h_new, h, mask_col);
        c = mask_carry(c_new, c, mask_col);
        Var logits = dense(g, h, "lm.out");
        Var step_loss = cross_entropy_rows(logits, targets, mask, static_cast<double>(total));
        loss = loss ? add(loss, step_loss) : step_loss;
    }
    return loss;
}

}  // namespace detail

struct LmTrainResult {
    LanguageModel model;
    std::vector<double> train_loss;  // one entry per iteration
    double heldout_ce_initial = 0.0;
    double heldout_ce_final = 0.0;
};

inline double lm_heldout_ce(LanguageModel& lm, const std::vector<Sentence>& heldout, std::size_t hidden) {
    if (heldout.empty()) return 0.0;
    ModelGraph g(lm.params());
    std::vector<const Sentence*> all;
    all.reserve(heldout.size());
    for (const Sentence& s : heldout) all.push_back(&s);
    return detail::lm_batch_loss(g, all, hidden)->value[0];
}

inline LmTrainResult train_lm(const std::vector<Sentence>& train, const std::vector<Sentence>& heldout,
                              std::size_t vocab_size, const LmConfig& cfg) {
    if (train.empty()) throw ConfigError("train_lm requires a nonempty corpus");
    LmTrainResult result{LanguageModel::init(vocab_size, cfg.embed_dim, cfg.hidden_dim,
                                             splitmix64(cfg.seed ^ 0x6c6d5f696e6974ull)),
                         {}, 0.0, 0.0};
    LanguageModel& lm = result.model;
    result.heldout_ce_initial = lm_heldout_ce(lm, heldout, cfg.hidden_dim);

    AdamState adam;
    adam.lr = cfg.lr;
    adam.beta1 = cfg.adam_beta1;
    adam.beta2 = cfg.adam_beta2;
    adam.eps = cfg.adam_eps;
    Rng order(splitmix64(cfg.seed ^ 0x6c6d5f6f72646572ull));
    result.train_loss.reserve(cfg.iters);
    for (std::size_t it = 0; it < cfg.iters; ++it) {
        std::vector<const Sentence*> batch;
        batch.reserve(cfg.batch_size);
        for (std::size_t b = 0; b < cfg.batch_size; ++b)
            batch.push_back(&train[static_cast<std::size_t>(
                order.uniform_int(0, static_cast<long>(train.size()) - 1))]);

        lm.params().zero_grads();
        ModelGraph g(lm.params());
        Var loss = detail::lm_batch_loss(g, batch, cfg.hidden_dim);
        const double value = loss->value[0];
        if (!std::isfinite(value)) throw TrainingError("LM loss diverged", static_cast<long>(it));
        g.backward_and_accumulate(loss);
        adam_step(lm.params(), adam);
        result.train_loss.push_back(value);
    }
    result.heldout_ce_final = lm_heldout_ce(lm, heldout, cfg.hidden_dim);
    return result;
}

// ----------------------------- lookahead sampling -----------------------------

struct SamplerConfig {
    std::size_t max_len = 5;   // L
    double temperature = 1.0;  // tau
    std::uint64_t seed = 1;
    bool greedy = false;
};

inline void validate_sampler(const SamplerConfig& cfg) {
    if (cfg.max_len < 1) throw ConfigError("sampler max_len must be >= 1");
    if (!cfg.greedy && !(cfg.temperature > 0.0)) throw ConfigError("sampler temperature must be positive");
}

/// Ancestral sampling of up to L future words; stops early (and drops the
/// token) when EOS is drawn. Pure function of (lm, observed, cfg).
inline std::vector<int> sample_lookahead(const LanguageModel& lm, const std::vector<int>& observed,
                                         const SamplerConfig& cfg) {
    validate_sampler(cfg);
    if (observed.empty()) throw ShapeError("sample_lookahead requires a nonempty observed prefix");

    LanguageModel::State st = lm.initial_state();
    for (int id : observed) lm.advance(st, id);

    Rng rng(cfg.seed);
    std::vector<int> out;
    out.reserve(cfg.max_len);
    for (std::size_t i = 0; i < cfg.max_len; ++i) {
        Tensor logits = lm.next_logits(st);
        int next;
        if (cfg.greedy) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < logits.size(); ++j)
                if (logits[j] > logits[best]) best = j;
            next = static_cast<int>(best);
        } else {
            std::vector<double> p = LanguageModel::softmax_vector(logits, cfg.temperature);
            next = static_cast<int>(rng.categorical(p));
        }
        if (next == Vocabulary::kEos) break;
        out.push_back(next);
        lm.advance(st, next);
    }
    return out;
}

/// Reruns the identical sampling computation `cost_factor` times so the
/// benchmark can emulate a large LM's inference cost. Output equals a single
/// run; wall-clock scales with the factor.
inline std::vector<int> sample_lookahead_inflated(const LanguageModel& lm, const std::vector<int>& observed,
                                                  const SamplerConfig& cfg, std::size_t cost_factor) {
    std::vector<int> out;
    const std::size_t reps = std::max<std::size_t>(cost_factor, 1);
    for (std::size_t r = 0; r < reps; ++r) out = sample_lookahead(lm, observed, cfg);
    return out;
}

/// Deterministic per-prefix sampler seed. Tying the seed to the observed
/// words (and nothing else) keeps sampling causal and makes the
/// prefix -> lookahead map a fixed function shared by training and inference.
inline std::uint64_t lookahead_seed(std::uint64_t base_seed, const std::vector<int>& observed) {
    return splitmix64(fnv1a64_ids(observed, base_seed));
}

}  // namespace itts
