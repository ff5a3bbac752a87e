#pragma once

// Student context prediction network G^(S) and the teacher-student training
// loop. The student reads frozen pretrained-style word embeddings, runs one
// BLSTM, combines the two boundary states, and maps them to the teacher's
// context embedding space. Teacher and LM stay frozen throughout.

#include <limits>
#include <string>
#include <vector>

#include "itts/tts.hpp"

namespace itts {

// ----------------------------- size classes -----------------------------

enum class StudentSize { small, medium, large };

struct StudentSpec {
    std::size_t blstm_hidden;  // per-direction H_s
    std::size_t dense_width;
};

inline StudentSpec student_spec(StudentSize s) {
    switch (s) {
        case StudentSize::small: return {100, 200};
        case StudentSize::medium: return {300, 600};
        case StudentSize::large: return {500, 1000};
    }
    throw ConfigError("unknown student size");
}

inline const char* to_string(StudentSize s) {
    switch (s) {
        case StudentSize::small: return "small";
        case StudentSize::medium: return "medium";
        case StudentSize::large: return "large";
    }
    return "?";
}

inline StudentSize parse_student_size(const std::string& s) {
    if (s == "small") return StudentSize::small;
    if (s == "medium") return StudentSize::medium;
    if (s == "large") return StudentSize::large;
    throw ConfigError("student size must be small|medium|large, got '" + s + "'");
}

/// Trainable parameter count implied by the stated dimensions (the frozen
/// word-embedding table is pretrained and not part of the size class).
inline std::size_t student_parameter_count(StudentSize size, std::size_t embed_dim = 300,
                                           std::size_t context_dim = 256) {
    const StudentSpec sp = student_spec(size);
    const std::size_t H = sp.blstm_hidden, Dd = sp.dense_width;
    const std::size_t per_dir = embed_dim * 4 * H + H * 4 * H + 4 * H;  // Wx + Wh + b
    return 2 * per_dir + (2 * H * Dd + Dd) + (Dd * context_dim + context_dim);
}

// ----------------------------- word embeddings -----------------------------

/// Stand-in for pretrained word vectors: a seeded fixed random table, frozen.
struct WordEmbeddingTable {
    Tensor table;  // [V x 300]

    static WordEmbeddingTable fixed_random(std::size_t vocab, std::uint64_t seed, std::size_t dim = 300) {
        WordEmbeddingTable t;
        Rng rng(splitmix64(seed ^ 0x656d626564ull));  // "embed"
        t.table = uniform_init(rng, vocab, dim, 0.5);
        return t;
    }
};

// ----------------------------- student network -----------------------------

class StudentNet {
public:
    static StudentNet init(StudentSize size, const WordEmbeddingTable& table, std::size_t context_dim,
                           std::uint64_t seed) {
        StudentNet net;
        net.size_ = size;
        net.context_dim_ = context_dim;
        net.embed_dim_ = table.table.cols();
        const StudentSpec sp = student_spec(size);
        Rng rng(seed);
        net.params_.add("student.embed", table.table, false);
        add_lstm_params(net.params_, "student.fwd", net.embed_dim_, sp.blstm_hidden, rng);
        add_lstm_params(net.params_, "student.bwd", net.embed_dim_, sp.blstm_hidden, rng);
        add_dense_params(net.params_, "student.fc1", 2 * sp.blstm_hidden, sp.dense_width, rng);
        add_dense_params(net.params_, "student.fc2", sp.dense_width, context_dim, rng);
        return net;
    }

    static StudentNet from_store(ParameterStore store) {
        StudentNet net;
        const std::size_t H = store.value("student.fwd.Wh").rows();
        switch (H) {
            case 100: net.size_ = StudentSize::small; break;
            case 300: net.size_ = StudentSize::medium; break;
            case 500: net.size_ = StudentSize::large; break;
            default: throw ConfigError("student hidden width " + std::to_string(H) + " is not a size class");
        }
        net.context_dim_ = store.value("student.fc2.W").cols();
        net.embed_dim_ = store.value("student.embed").cols();
        net.params_ = std::move(store);
        return net;
    }

    StudentSize size() const { return size_; }
    std::size_t context_dim() const { return context_dim_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }

    /// Batched graph: embeds each observed prefix, runs the BLSTM, combines
    /// [backward state at position 1 | forward state at the last position],
    /// then fc1 -> ReLU -> fc2. Out-of-vocabulary ids fall back to UNK.
    Var predict_graph(const ParamBinder& p, const std::vector<std::vector<int>>& seqs) const {
        const std::size_t B = seqs.size();
        const std::size_t V = params_.value("student.embed").rows();
        std::size_t T = 0;
        bool uniform = true;
        for (const auto& s : seqs) {
            if (s.empty()) throw ShapeError("student prediction needs a nonempty observed sequence");
            T = std::max(T, s.size());
            uniform = uniform && s.size() == seqs[0].size();
        }
        Var emb = p("student.embed");
        std::vector<Var> inputs;
        std::vector<Tensor> masks;
        for (std::size_t t = 0; t < T; ++t) {
            std::vector<int> ids(B, 0);
            Tensor mask(B, 1);
            for (std::size_t b = 0; b < B; ++b) {
                if (t < seqs[b].size()) {
                    int id = seqs[b][t];
                    if (id < 0 || static_cast<std::size_t>(id) >= V) id = Vocabulary::kUnk;
                    ids[b] = id;
                    mask[b] = 1.0;
                }
            }
            inputs.push_back(gather_rows(emb, ids));
            if (!uniform) masks.push_back(mask);
        }
        BlstmRun run = blstm_run(bind_lstm(p, "student.fwd"), bind_lstm(p, "student.bwd"), inputs, masks);
        Var joined = concat_cols({run.bwd_first, run.fwd_last});
        return dense(p, relu(dense(p, joined, "student.fc1")), "student.fc2");
    }

    ContextEmbedding predict(const ParamBinder& p, const std::vector<int>& observed) const {
        Var e = predict_graph(p, {observed});
        return {e->value, Tensor()};
    }

private:
    ParameterStore params_;
    StudentSize size_ = StudentSize::small;
    std::size_t context_dim_ = 256;
    std::size_t embed_dim_ = 300;
};

// ----------------------------- losses -----------------------------

/// Squared Euclidean distance between two context embeddings.
inline double distil_loss(const ContextEmbedding& a, const ContextEmbedding& b) {
    require_same_shape(a.e, b.e, "student embedding", "teacher embedding");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.e.size(); ++i) {
        const double d = a.e[i] - b.e[i];
        acc += d * d;
    }
    return acc;
}

/// Batch mean of per-row squared distances, as a graph node.
inline Var distil_loss_graph(const Var& e_s, const Tensor& e_t) {
    require_same_shape(e_s->value, e_t, "student embeddings", "teacher embeddings");
    // mse_to averages over B*dim elements; rescale to sum over dim, mean over B.
    return scale(mse_to(e_s, e_t), static_cast<double>(e_t.cols()));
}

/// L = (1 - lambda) * L_target + lambda * L_distil.
inline double combined_loss(double l_target, double l_distil, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw ConfigError("lambda must lie in [0, 1], got " + std::to_string(lambda));
    return (1.0 - lambda) * l_target + lambda * l_distil;
}

// ----------------------------- training -----------------------------

struct DistillConfig {
    StudentSize size = StudentSize::small;
    double lambda = 1.0;
    std::size_t iters = 1500;
    double lr = 1e-3;
    std::size_t batch_size = 16;
    std::uint64_t seed = 1;
    std::size_t window = 3;
    std::size_t hop = 1;
    std::size_t lookahead = 5;
    double temperature = 1.0;
    bool greedy = false;
    std::uint64_t table_seed = 1;
    std::uint64_t sampler_base = 1;  // must match the teacher's (see TeacherTrainConfig)
    std::size_t progress_every = 50;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-6;
};

struct DistillProgressRow {
    std::size_t iteration;
    double distil;
    double target;  // NaN when lambda = 1 (target loss not evaluated)
    double combined;
};

struct StudentTrainResult {
    StudentNet student;
    std::vector<DistillProgressRow> progress;
    double heldout_initial = 0.0;
    double heldout_final = 0.0;
};

namespace detail {

/// Teacher context targets for a set of windows, cached per window. With the
/// prefix-hashed sampler seed these are pure functions of the window text, so
/// caching changes nothing but speed.
class TeacherTargets {
public:
    TeacherTargets(const TeacherModel& teacher, const LanguageModel* lm, const DistillConfig& cfg,
                   std::uint64_t sampler_base)
        : teacher_(teacher), binding_(teacher.params()), lm_(lm), cfg_(cfg), sampler_base_(sampler_base) {}

    const Tensor& target(WindowExample& ex) {
        if (ex.teacher_target.size() == 0) {
            const std::vector<int>& future =
                lm_ != nullptr
                    ? pseudo_future(ex, *lm_, cfg_.lookahead, cfg_.temperature, cfg_.greedy, sampler_base_)
                    : ex.truth_future;
            ContextEmbedding e = teacher_.context_for(binding_.binder(), ex.observed, future);
            ex.teacher_target = e.e;
        }
        return ex.teacher_target;
    }

private:
    const TeacherModel& teacher_;
    ConstBinding binding_;
    const LanguageModel* lm_;
    DistillConfig cfg_;
    std::uint64_t sampler_base_;
};

}  // namespace detail

/// Mean distillation loss of a student over a fixed window set.
inline double student_heldout_distil(const StudentNet& student, std::vector<WindowExample>& windows,
                                     detail::TeacherTargets& targets) {
    if (windows.empty()) return 0.0;
    ConstBinding bind(student.params());
    double acc = 0.0;
    for (WindowExample& ex : windows) {
        std::vector<int> input = ex.observed;
        input.insert(input.end(), ex.current.begin(), ex.current.end());
        ContextEmbedding e_s = student.predict(bind.binder(), input);
        ContextEmbedding e_t{targets.target(ex), Tensor()};
        acc += distil_loss(e_s, e_t);
    }
    return acc / static_cast<double>(windows.size());
}

/// Teacher-student training (Eq. 9 objective). `lm == nullptr` selects the
/// ground-truth-lookahead ablation; everything else is identical.
inline StudentTrainResult train_student(const TeacherModel& teacher, const LanguageModel* lm,
                                        const std::vector<Sentence>& train,
                                        const std::vector<Sentence>& heldout, const OracleParams& oracle,
                                        const DistillConfig& cfg) {
    if (!(cfg.lambda >= 0.0 && cfg.lambda <= 1.0))
        throw ConfigError("lambda must lie in [0, 1], got " + std::to_string(cfg.lambda));
    if (train.empty()) throw ConfigError("train_student requires a nonempty corpus");

    const std::size_t vocab = teacher.dims().vocab;
    std::vector<WindowExample> examples = build_window_examples(train, oracle, vocab, cfg.window, cfg.hop);
    std::vector<WindowExample> heldout_examples =
        build_window_examples(heldout, oracle, vocab, cfg.window, cfg.hop);

    const std::uint64_t sampler_base = cfg.sampler_base;
    detail::TeacherTargets targets(teacher, lm, cfg, sampler_base);

    WordEmbeddingTable table = WordEmbeddingTable::fixed_random(vocab, cfg.table_seed);
    StudentTrainResult result{
        StudentNet::init(cfg.size, table, teacher.dims().context_dim,
                         splitmix64(cfg.seed ^ 0x73747564656e74ull)),  // "student"
        {}, 0.0, 0.0};
    StudentNet& student = result.student;
    ConstBinding teacher_bind(teacher.params());

    result.heldout_initial = student_heldout_distil(student, heldout_examples, targets);

    AdamState adam;
    adam.lr = cfg.lr;
    adam.beta1 = cfg.adam_beta1;
    adam.beta2 = cfg.adam_beta2;
    adam.eps = cfg.adam_eps;
    Rng order(splitmix64(cfg.seed ^ 0x64697374696cull));  // "distil"
    for (std::size_t it = 0; it < cfg.iters; ++it) {
        std::vector<WindowExample*> batch;
        batch.reserve(cfg.batch_size);
        for (std::size_t b = 0; b < cfg.batch_size; ++b)
            batch.push_back(&examples[static_cast<std::size_t>(
                order.uniform_int(0, static_cast<long>(examples.size()) - 1))]);

        const std::size_t B = batch.size();
        std::vector<std::vector<int>> student_inputs(B);
        Tensor teacher_batch(B, teacher.dims().context_dim);
        for (std::size_t b = 0; b < B; ++b) {
            WindowExample& ex = *batch[b];
            student_inputs[b] = ex.observed;
            student_inputs[b].insert(student_inputs[b].end(), ex.current.begin(), ex.current.end());
            const Tensor& t = targets.target(ex);
            for (std::size_t j = 0; j < t.size(); ++j) teacher_batch.at(b, j) = t[j];
        }

        student.params().zero_grads();
        ModelGraph g(student.params());
        Var e_s = student.predict_graph(graph_binder(g), student_inputs);
        Var l_distil = distil_loss_graph(e_s, teacher_batch);

        Var loss;
        double target_value = std::numeric_limits<double>::quiet_NaN();
        if (cfg.lambda < 1.0) {
            // Decode the current chunk conditioned on the student embedding,
            // teacher-forced against oracle frames. Decoder weights are
            // frozen constants; gradients reach the student through e_s.
            TeacherModel::EncodedBatch current = teacher.encode_batch(
                teacher_bind.binder(),
                [&] {
                    std::vector<std::vector<int>> cur(B);
                    for (std::size_t b = 0; b < B; ++b) cur[b] = batch[b]->current;
                    return cur;
                }());
            const std::size_t F = batch[0]->frames.rows();
            const std::size_t D = batch[0]->frames.cols();
            std::vector<Tensor> prev_steps(F), frame_steps(F), flag_steps(F);
            for (std::size_t f = 0; f < F; ++f) {
                prev_steps[f] = Tensor(B, D);
                frame_steps[f] = Tensor(B, D);
                flag_steps[f] = Tensor(B, 1);
                for (std::size_t b = 0; b < B; ++b) {
                    if (batch[b]->frames.rows() != F)
                        throw ConfigError("student batches need equal window lengths");
                    for (std::size_t d = 0; d < D; ++d) {
                        if (f > 0) prev_steps[f].at(b, d) = batch[b]->frames.at(f - 1, d);
                        frame_steps[f].at(b, d) = batch[b]->frames.at(f, d);
                    }
                    flag_steps[f][b] = batch[b]->flags[f];
                }
            }
            Var cond = concat_cols({e_s, current.pooled});
            Var l_target =
                teacher.decode_loss_graph(teacher_bind.binder(), cond, prev_steps, frame_steps, flag_steps)
                    .total;
            target_value = l_target->value[0];
            loss = add(scale(l_target, 1.0 - cfg.lambda), scale(l_distil, cfg.lambda));
        } else {
            loss = l_distil;
        }

        const double value = loss->value[0];
        if (!std::isfinite(value)) throw TrainingError("distillation loss diverged", static_cast<long>(it));
        g.backward_and_accumulate(loss);
        adam_step(student.params(), adam);

        if (it % cfg.progress_every == 0 || it + 1 == cfg.iters)
            result.progress.push_back({it, l_distil->value[0], target_value, value});
    }

    result.heldout_final = student_heldout_distil(student, heldout_examples, targets);
    return result;
}

/// Ablation: teacher targets built from the sentence's true future words.
inline StudentTrainResult train_student_without_lm(const TeacherModel& teacher,
                                                   const std::vector<Sentence>& train,
                                                   const std::vector<Sentence>& heldout,
                                                   const OracleParams& oracle, const DistillConfig& cfg) {
    return train_student(teacher, nullptr, train, heldout, oracle, cfg);
}

}  // namespace itts
