#pragma once

// Neural primitives. Plain-tensor entry points route through the same graph
// ops used in training, so inference and training forward passes are the
// same code path bit for bit.

#include <string>
#include <utility>
#include <vector>

#include "itts/autograd.hpp"
#include "itts/params.hpp"
#include "itts/tensor.hpp"

namespace itts {

// ----------------------------- plain surface -----------------------------

/// y = x W + b, row-wise. x [BxI], W [IxO], b [O] (or [1xO]).
inline Tensor linear_forward(const Tensor& x, const Tensor& W, const Tensor& b) {
    require_matrix(x, "linear input x");
    require_matrix(W, "linear weight W");
    if (x.cols() != W.rows())
        throw ShapeError("linear input x " + x.shape_str() + " incompatible with weight W " + W.shape_str());
    const std::size_t O = W.cols();
    if (b.size() != O) throw ShapeError("linear bias b " + b.shape_str() + " expected " + std::to_string(O));
    Tensor y = matmul_value(x, W, "linear input x", "linear weight W");
    for (std::size_t i = 0; i < y.rows(); ++i) {
        double* yi = y.row(i);
        for (std::size_t j = 0; j < O; ++j) yi[j] += b[j];
    }
    return y;
}

/// Gate parameters for one LSTM direction. Columns of Wx/Wh hold the four
/// gates in [input | forget | candidate | output] order, each `hidden` wide.
struct LstmParams {
    Tensor Wx;  // [I x 4H]
    Tensor Wh;  // [H x 4H]
    Tensor b;   // [1 x 4H]

    std::size_t hidden() const { return Wh.rows(); }
    std::size_t input() const { return Wx.rows(); }
};

struct LstmVars {
    Var Wx, Wh, b;
    std::size_t hidden = 0;
};

inline LstmVars bind_lstm(const ParamBinder& p, const std::string& prefix) {
    LstmVars v;
    v.Wx = p(prefix + ".Wx");
    v.Wh = p(prefix + ".Wh");
    v.b = p(prefix + ".b");
    v.hidden = v.Wh->value.rows();
    return v;
}

inline LstmVars bind_lstm(ModelGraph& g, const std::string& prefix) { return bind_lstm(graph_binder(g), prefix); }

inline LstmVars lstm_constants(const LstmParams& p) {
    LstmVars v;
    v.Wx = constant(p.Wx);
    v.Wh = constant(p.Wh);
    v.b = constant(p.b);
    v.hidden = p.Wh.rows();
    return v;
}

inline void add_lstm_params(ParameterStore& store, const std::string& prefix, std::size_t input,
                            std::size_t hidden, Rng& rng) {
    store.add(prefix + ".Wx", recurrent_init(rng, input, 4 * hidden));
    store.add(prefix + ".Wh", recurrent_init(rng, hidden, 4 * hidden));
    store.add(prefix + ".b", Tensor(1, 4 * hidden));
}

/// LSTM step with the input contribution x*Wx already computed. Lets callers
/// with partly-constant inputs project the constant part once per sequence.
inline std::pair<Var, Var> lstm_step_pre(const LstmVars& p, const Var& x_gates, const Var& h_prev,
                                         const Var& c_prev) {
    const std::size_t H = p.hidden;
    Var gates = add_rowvec(add(x_gates, matmul(h_prev, p.Wh)), p.b);
    Var i = sigmoid(slice_cols(gates, 0, H));
    Var f = sigmoid(slice_cols(gates, H, H));
    Var cand = tanh_op(slice_cols(gates, 2 * H, H));
    Var o = sigmoid(slice_cols(gates, 3 * H, H));
    Var c = add(mul(f, c_prev), mul(i, cand));
    Var h = mul(o, tanh_op(c));
    return {h, c};
}

/// One LSTM step on graph nodes. Returns (h_t, c_t).
inline std::pair<Var, Var> lstm_step(const LstmVars& p, const Var& x, const Var& h_prev, const Var& c_prev) {
    return lstm_step_pre(p, matmul(x, p.Wx), h_prev, c_prev);
}

/// Plain-tensor LSTM step (shared graph kernel underneath).
inline std::pair<Tensor, Tensor> lstm_cell_step(const Tensor& x, const Tensor& h_prev, const Tensor& c_prev,
                                                const LstmParams& params) {
    if (!x.all_finite()) throw NumericError("lstm_cell_step input x contains nonfinite values");
    if (!h_prev.all_finite() || !c_prev.all_finite())
        throw NumericError("lstm_cell_step state contains nonfinite values");
    const std::size_t H = params.hidden();
    if (x.cols() != params.input())
        throw ShapeError("lstm input x " + x.shape_str() + " expected width " + std::to_string(params.input()));
    if (h_prev.cols() != H || c_prev.cols() != H || h_prev.rows() != x.rows() || c_prev.rows() != x.rows())
        throw ShapeError("lstm state " + h_prev.shape_str() + "/" + c_prev.shape_str() + " expected [" +
                         std::to_string(x.rows()) + "x" + std::to_string(H) + "]");
    auto [h, c] = lstm_step(lstm_constants(params), constant(x), constant(h_prev), constant(c_prev));
    return {h->value, c->value};
}

// ----------------------------- masked sequence runners -----------------------------

/// h/c carry through masked (padded) steps unchanged: s = m*s_new + (1-m)*s_old.
inline Var mask_carry(const Var& fresh, const Var& held, const Tensor& mask) {
    Tensor inv(mask.rows(), 1);
    for (std::size_t i = 0; i < mask.rows(); ++i) inv[i] = 1.0 - mask[i];
    return add(mul_colvec(fresh, constant(mask)), mul_colvec(held, constant(inv)));
}

struct LstmRun {
    std::vector<Var> states;  // carried h after each step, [B x H]
    Var last;                 // carried h after the final step
};

/// Unidirectional pass over `inputs` (each [B x E]). `masks` may be empty for
/// fully-real sequences; otherwise one [B x 1] tensor of {0,1} per step.
inline LstmRun lstm_run(const LstmVars& p, const std::vector<Var>& inputs, const std::vector<Tensor>& masks) {
    if (inputs.empty()) throw ShapeError("lstm_run on empty sequence");
    const std::size_t B = inputs[0]->value.rows();
    Var h = constant(Tensor(B, p.hidden));
    Var c = constant(Tensor(B, p.hidden));
    LstmRun run;
    run.states.reserve(inputs.size());
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        auto [h_new, c_new] = lstm_step(p, inputs[t], h, c);
        if (!masks.empty()) {
            h_new = mask_carry(h_new, h, masks[t]);
            c_new = mask_carry(c_new, c, masks[t]);
        }
        h = h_new;
        c = c_new;
        run.states.push_back(h);
    }
    run.last = h;
    return run;
}

struct BlstmRun {
    std::vector<Var> outputs;  // per step [B x 2H], concat(fwd, bwd), zeroed on padded rows
    Var fwd_last;              // forward direction state after the last real step [B x H]
    Var bwd_first;             // backward direction state at the first position [B x H]
};

/// Bidirectional pass. Right-padded batches: the forward carry freezes past
/// each row's real length and the backward carry stays zero until it reaches
/// real tokens, so the two boundary states need no per-row indexing.
inline BlstmRun blstm_run(const LstmVars& fwd, const LstmVars& bwd, const std::vector<Var>& inputs,
                          const std::vector<Tensor>& masks) {
    if (inputs.empty()) throw ShapeError("blstm_run on empty sequence");
    const std::size_t T = inputs.size();

    LstmRun f = lstm_run(fwd, inputs, masks);

    std::vector<Var> rev_inputs(inputs.rbegin(), inputs.rend());
    std::vector<Tensor> rev_masks(masks.rbegin(), masks.rend());
    LstmRun b = lstm_run(bwd, rev_inputs, rev_masks);

    BlstmRun run;
    run.outputs.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
        Var out = concat_cols({f.states[t], b.states[T - 1 - t]});
        if (!masks.empty()) out = mul_colvec(out, constant(masks[t]));
        run.outputs.push_back(out);
    }
    run.fwd_last = f.last;
    run.bwd_first = b.last;
    return run;
}

/// Mean over real steps of per-step masked outputs; `inv_len` is [B x 1]
/// holding 1/len (0 for empty rows, which leaves an all-zero summary).
inline Var masked_mean(const std::vector<Var>& outputs, const Tensor& inv_len) {
    Var sum = outputs[0];
    for (std::size_t t = 1; t < outputs.size(); ++t) sum = add(sum, outputs[t]);
    return mul_colvec(sum, constant(inv_len));
}

/// Plain-tensor BLSTM over one unpadded sequence of [B x I] inputs.
struct BlstmResult {
    std::vector<Tensor> outputs;  // per step [B x 2H]
    Tensor forward_last;          // [B x H]
    Tensor backward_first;        // [B x H]
};

inline BlstmResult blstm_forward(const std::vector<Tensor>& xs, const LstmParams& fwd, const LstmParams& bwd) {
    if (xs.empty()) throw ShapeError("blstm_forward called with an empty sequence");
    std::vector<Var> inputs;
    inputs.reserve(xs.size());
    for (const Tensor& x : xs) {
        if (!x.all_finite()) throw NumericError("blstm_forward input contains nonfinite values");
        inputs.push_back(constant(x));
    }
    BlstmRun run = blstm_run(lstm_constants(fwd), lstm_constants(bwd), inputs, {});
    BlstmResult res;
    res.outputs.reserve(run.outputs.size());
    for (const Var& v : run.outputs) res.outputs.push_back(v->value);
    res.forward_last = run.fwd_last->value;
    res.backward_first = run.bwd_first->value;
    return res;
}

// ----------------------------- losses -----------------------------

inline double mse_loss(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "mse prediction", "mse target");
    return mse_to(constant(pred), target)->value[0];
}

inline double bce_stop_loss(const Tensor& logits, const Tensor& flags) {
    require_same_shape(logits, flags, "stop logits", "stop flags");
    return bce_logits_to(constant(logits), flags)->value[0];
}

/// y = x W + b on graph nodes with bound parameters.
inline Var dense(const ParamBinder& p, const Var& x, const std::string& prefix) {
    return add_rowvec(matmul(x, p(prefix + ".W")), p(prefix + ".b"));
}

inline Var dense(ModelGraph& g, const Var& x, const std::string& prefix) {
    return dense(graph_binder(g), x, prefix);
}

inline void add_dense_params(ParameterStore& store, const std::string& prefix, std::size_t input,
                             std::size_t output, Rng& rng) {
    store.add(prefix + ".W", glorot_init(rng, input, output));
    store.add(prefix + ".b", Tensor(1, output));
}

}  // namespace itts
