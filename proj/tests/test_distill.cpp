#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "itts/distill.hpp"

using namespace itts;

namespace {

TtsDims tiny_teacher_dims(std::size_t vocab = 12) {
    TtsDims d;
    d.vocab = vocab;
    d.enc_embed = 8;
    d.enc_hidden = 12;
    d.dec_hidden = 14;
    d.context_dim = 12;
    d.style_tokens = 3;
    d.frame_dim = 4;
    return d;
}

StudentNet tiny_student(std::size_t vocab = 12, std::uint64_t seed = 7, std::size_t ctx = 12) {
    WordEmbeddingTable table = WordEmbeddingTable::fixed_random(vocab, 3);
    return StudentNet::init(StudentSize::small, table, ctx, seed);
}

}  // namespace

TEST_CASE("student_predict wiring", "[distill]") {
    StudentNet net = tiny_student();
    ConstBinding bind(net.params());
    ParamBinder p = bind.binder();

    auto manual_predict = [&](const std::vector<int>& ids) {
        const Tensor& table = net.params().value("student.embed");
        std::vector<Tensor> xs;
        for (int id : ids) {
            Tensor x(1, table.cols());
            for (std::size_t d = 0; d < table.cols(); ++d) x[d] = table.at(static_cast<std::size_t>(id), d);
            xs.push_back(x);
        }
        LstmParams fwd{net.params().value("student.fwd.Wx"), net.params().value("student.fwd.Wh"),
                       net.params().value("student.fwd.b")};
        LstmParams bwd{net.params().value("student.bwd.Wx"), net.params().value("student.bwd.Wh"),
                       net.params().value("student.bwd.b")};
        BlstmResult r = blstm_forward(xs, fwd, bwd);
        Tensor joined(1, 2 * fwd.hidden());
        for (std::size_t j = 0; j < fwd.hidden(); ++j) {
            joined[j] = r.backward_first[j];
            joined[fwd.hidden() + j] = r.forward_last[j];
        }
        Tensor h1 = linear_forward(joined, net.params().value("student.fc1.W"),
                                   net.params().value("student.fc1.b"));
        for (std::size_t i = 0; i < h1.size(); ++i) h1[i] = std::max(h1[i], 0.0);
        return linear_forward(h1, net.params().value("student.fc2.W"), net.params().value("student.fc2.b"));
    };

    SECTION("single-word input uses the lone step for both boundary states") {
        ContextEmbedding e = net.predict(p, {5});
        CHECK(e.e == manual_predict({5}));
    }
    SECTION("4-word input equals the manual composition of primitives") {
        std::vector<int> ids{4, 9, 2, 7};
        ContextEmbedding e = net.predict(p, ids);
        CHECK(e.e == manual_predict(ids));
    }
    SECTION("zeroed output layer maps everything to the zero vector") {
        StudentNet z = tiny_student();
        z.params().value("student.fc2.W").fill(0.0);
        z.params().value("student.fc2.b").fill(0.0);
        ConstBinding zb(z.params());
        ContextEmbedding e = z.predict(zb.binder(), {1, 2, 3});
        for (std::size_t i = 0; i < e.e.size(); ++i) REQUIRE(e.e[i] == 0.0);
    }
    SECTION("unknown ids substitute UNK instead of failing") {
        ContextEmbedding oov = net.predict(p, {5, 999});
        ContextEmbedding unk = net.predict(p, {5, Vocabulary::kUnk});
        CHECK(oov.e == unk.e);
        ContextEmbedding neg = net.predict(p, {-3, 5});
        ContextEmbedding unk2 = net.predict(p, {Vocabulary::kUnk, 5});
        CHECK(neg.e == unk2.e);
    }
    SECTION("empty input is an error") {
        CHECK_THROWS_AS(net.predict(p, {}), ShapeError);
    }
}

TEST_CASE("distil_loss", "[distill]") {
    Rng rng(5);
    Tensor a(1, 8), b(1, 8);
    for (std::size_t i = 0; i < 8; ++i) {
        a[i] = rng.uniform(-1, 1);
        b[i] = rng.uniform(-1, 1);
    }
    ContextEmbedding ea{a, Tensor()}, eb{b, Tensor()};

    SECTION("identical embeddings give zero") {
        CHECK(distil_loss(ea, ea) == 0.0);
    }
    SECTION("unit offset on one coordinate gives exactly one") {
        Tensor c = a;
        c[3] += 1.0;
        ContextEmbedding ec{c, Tensor()};
        CHECK(distil_loss(ea, ec) == 1.0);
    }
    SECTION("random pair matches the term-by-term oracle; symmetric and nonnegative") {
        double acc = 0.0;
        for (std::size_t i = 0; i < 8; ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
        CHECK(distil_loss(ea, eb) == Catch::Approx(acc).epsilon(1e-14));
        CHECK(distil_loss(ea, eb) == distil_loss(eb, ea));
        CHECK(distil_loss(ea, eb) > 0.0);
    }
    SECTION("batched graph version averages per-row squared distances") {
        Tensor es(2, 3), et(2, 3);
        double expect = 0.0;
        Rng r2(9);
        for (std::size_t i = 0; i < 6; ++i) {
            es[i] = r2.uniform(-1, 1);
            et[i] = r2.uniform(-1, 1);
        }
        for (std::size_t row = 0; row < 2; ++row)
            for (std::size_t j = 0; j < 3; ++j) {
                const double d = es.at(row, j) - et.at(row, j);
                expect += d * d;
            }
        expect /= 2.0;
        CHECK(distil_loss_graph(constant(es), et)->value[0] == Catch::Approx(expect).epsilon(1e-14));
    }
}

TEST_CASE("combined_loss", "[distill]") {
    CHECK(combined_loss(2.0, 0.1, 1.0) == 0.1);
    CHECK(combined_loss(2.0, 0.1, 0.0) == 2.0);
    CHECK(combined_loss(2.0, 0.1, 0.95) == Catch::Approx(0.195).epsilon(1e-14));
    CHECK_THROWS_AS(combined_loss(1.0, 1.0, 1.2), ConfigError);
    CHECK_THROWS_AS(combined_loss(1.0, 1.0, -0.1), ConfigError);
}

TEST_CASE("student size classes have the exact closed-form parameter counts", "[distill]") {
    // Dimensions: 300-d input, hidden 100/300/500, dense 200/600/1000, 256-d output.
    auto closed_form = [](std::size_t H, std::size_t Dd) {
        const std::size_t per_dir = 300 * 4 * H + H * 4 * H + 4 * H;
        return 2 * per_dir + (2 * H * Dd + Dd) + (Dd * 256 + 256);
    };
    CHECK(student_parameter_count(StudentSize::small) == closed_form(100, 200));
    CHECK(student_parameter_count(StudentSize::medium) == closed_form(300, 600));
    CHECK(student_parameter_count(StudentSize::large) == closed_form(500, 1000));

    WordEmbeddingTable table = WordEmbeddingTable::fixed_random(16, 1);
    for (StudentSize size : {StudentSize::small, StudentSize::medium, StudentSize::large}) {
        StudentNet net = StudentNet::init(size, table, 256, 9);
        CHECK(net.params().total_parameters(true) == student_parameter_count(size));
    }
    CHECK(student_parameter_count(StudentSize::small) < student_parameter_count(StudentSize::medium));
    CHECK(student_parameter_count(StudentSize::medium) < student_parameter_count(StudentSize::large));
}

namespace {

struct DistillFixture {
    std::vector<Sentence> corpus;
    std::vector<Sentence> heldout;
    OracleParams oracle;
    TeacherModel teacher;
    DistillConfig cfg;

    DistillFixture() : teacher(TeacherModel::init(tiny_teacher_dims(), 31)) {
        CorpusParams cp;
        cp.vocab_size = 12;
        cp.sentence_count = 16;
        cp.min_len = 4;
        cp.max_len = 6;
        cp.seed = 11;
        auto all = generate_corpus(cp);
        auto [tr, held] = split_corpus(all);
        corpus = tr;
        heldout = held;
        oracle.frames_per_word = 2;
        oracle.frame_dim = 4;
        oracle.seed = 5;
        cfg.size = StudentSize::small;
        cfg.window = 2;
        cfg.iters = 12;
        cfg.batch_size = 4;
        cfg.seed = 17;
    }
};

}  // namespace

TEST_CASE("train_student freeze and determinism contracts", "[distill]") {
    DistillFixture fx;

    SECTION("teacher and embedding table stay bit-identical") {
        std::map<std::string, Tensor> teacher_before;
        for (const auto& [name, e] : fx.teacher.params().entries()) teacher_before[name] = e.value;
        Tensor table_before = WordEmbeddingTable::fixed_random(12, fx.cfg.table_seed).table;

        StudentTrainResult r = train_student(fx.teacher, nullptr, fx.corpus, fx.heldout, fx.oracle, fx.cfg);
        for (const auto& [name, e] : fx.teacher.params().entries())
            REQUIRE(e.value == teacher_before.at(name));
        REQUIRE(r.student.params().value("student.embed") == table_before);
        REQUIRE(r.student.params().entry("student.embed").trainable == false);
    }
    SECTION("seeded reruns give identical students") {
        StudentTrainResult a = train_student(fx.teacher, nullptr, fx.corpus, fx.heldout, fx.oracle, fx.cfg);
        StudentTrainResult b = train_student(fx.teacher, nullptr, fx.corpus, fx.heldout, fx.oracle, fx.cfg);
        for (const auto& [name, e] : a.student.params().entries())
            REQUIRE(e.value == b.student.params().value(name));
        REQUIRE(a.heldout_final == b.heldout_final);
    }
    SECTION("lambda outside [0,1] is a config error") {
        DistillConfig bad = fx.cfg;
        bad.lambda = 1.5;
        CHECK_THROWS_AS(train_student(fx.teacher, nullptr, fx.corpus, fx.heldout, fx.oracle, bad),
                        ConfigError);
    }
}

TEST_CASE("combined objective at lambda=0.95 passes the gradient check into the student only",
          "[distill]") {
    DistillFixture fx;
    std::vector<WindowExample> examples =
        build_window_examples(fx.corpus, fx.oracle, 12, fx.cfg.window, fx.cfg.hop);
    REQUIRE(examples.size() >= 2);

    WordEmbeddingTable table = WordEmbeddingTable::fixed_random(12, fx.cfg.table_seed);
    StudentNet student = StudentNet::init(StudentSize::small, table, fx.teacher.dims().context_dim, 23);
    ConstBinding teacher_bind(fx.teacher.params());

    std::vector<WindowExample*> batch{&examples[0], &examples[2]};
    // Teacher targets via ground-truth lookahead (deterministic closure).
    Tensor teacher_batch(batch.size(), fx.teacher.dims().context_dim);
    for (std::size_t b = 0; b < batch.size(); ++b) {
        ContextEmbedding e =
            fx.teacher.context_for(teacher_bind.binder(), batch[b]->observed, batch[b]->truth_future);
        for (std::size_t j = 0; j < e.e.size(); ++j) teacher_batch.at(b, j) = e.e[j];
    }

    auto build = [&](ModelGraph& g) {
        const std::size_t B = batch.size();
        std::vector<std::vector<int>> inputs(B);
        std::vector<std::vector<int>> current(B);
        for (std::size_t b = 0; b < B; ++b) {
            inputs[b] = batch[b]->observed;
            inputs[b].insert(inputs[b].end(), batch[b]->current.begin(), batch[b]->current.end());
            current[b] = batch[b]->current;
        }
        Var e_s = student.predict_graph(graph_binder(g), inputs);
        Var l_distil = distil_loss_graph(e_s, teacher_batch);

        TeacherModel::EncodedBatch cur = fx.teacher.encode_batch(teacher_bind.binder(), current);
        const std::size_t F = batch[0]->frames.rows(), D = batch[0]->frames.cols();
        std::vector<Tensor> prev(F), frames(F), flags(F);
        for (std::size_t f = 0; f < F; ++f) {
            prev[f] = Tensor(B, D);
            frames[f] = Tensor(B, D);
            flags[f] = Tensor(B, 1);
            for (std::size_t b = 0; b < B; ++b) {
                for (std::size_t d = 0; d < D; ++d) {
                    if (f > 0) prev[f].at(b, d) = batch[b]->frames.at(f - 1, d);
                    frames[f].at(b, d) = batch[b]->frames.at(f, d);
                }
                flags[f][b] = batch[b]->flags[f];
            }
        }
        Var cond = concat_cols({e_s, cur.pooled});
        Var l_target =
            fx.teacher.decode_loss_graph(teacher_bind.binder(), cond, prev, frames, flags).total;
        return add(scale(l_target, 1.0 - 0.95), scale(l_distil, 0.95));
    };

    GradCheckOptions opt;
    opt.max_coords_per_param = 8;
    GradCheckReport r = grad_check(student.params(), build, opt);
    INFO("worst param: " << r.worst_param);
    CHECK(r.max_rel_err < 1e-4);

    // Gradients flow into StudentNet only: the teacher store was never bound.
    for (const auto& [name, e] : fx.teacher.params().entries()) {
        for (std::size_t i = 0; i < e.grad.size(); ++i) REQUIRE(e.grad[i] == 0.0);
    }
}

TEST_CASE("ground-truth ablation differs unless the LM has memorized the corpus", "[distill]") {
    SECTION("random LM gives targets that differ from ground-truth targets") {
        DistillFixture fx;
        LanguageModel lm = LanguageModel::init(12, 8, 12, 77);
        std::vector<WindowExample> ex =
            build_window_examples(fx.corpus, fx.oracle, 12, fx.cfg.window, fx.cfg.hop);
        ConstBinding bind(fx.teacher.params());
        std::size_t differing = 0;
        for (std::size_t i = 0; i < 6 && i < ex.size(); ++i) {
            std::vector<int> prefix = ex[i].observed;
            prefix.insert(prefix.end(), ex[i].current.begin(), ex[i].current.end());
            SamplerConfig sc;
            sc.max_len = fx.cfg.lookahead;
            sc.seed = lookahead_seed(1, prefix);
            std::vector<int> pseudo = sample_lookahead(lm, prefix, sc);
            if (pseudo != ex[i].truth_future) {
                ContextEmbedding et = fx.teacher.context_for(bind.binder(), ex[i].observed, ex[i].truth_future);
                ContextEmbedding ep = fx.teacher.context_for(bind.binder(), ex[i].observed, pseudo);
                REQUIRE(distil_loss(et, ep) > 0.0);
                ++differing;
            }
        }
        CHECK(differing > 0);
    }
    SECTION("memorized LM with greedy sampling makes both trainers coincide") {
        // Single-sentence corpus the LM memorizes; greedy lookahead then equals
        // the true future, so pseudo and truth targets are identical.
        Sentence s{{5, 3, 8, 2, 6, Vocabulary::kEos}};
        std::vector<Sentence> corpus(12, s);
        LmConfig lc;
        lc.embed_dim = 16;
        lc.hidden_dim = 32;
        lc.iters = 500;
        lc.batch_size = 4;
        lc.seed = 7;
        LmTrainResult lm = train_lm(corpus, {}, 12, lc);

        OracleParams op;
        op.frames_per_word = 2;
        op.frame_dim = 4;
        TeacherModel teacher = TeacherModel::init(tiny_teacher_dims(), 31);

        DistillConfig cfg;
        cfg.size = StudentSize::small;
        cfg.window = 2;
        cfg.iters = 30;
        cfg.batch_size = 4;
        cfg.seed = 17;
        cfg.greedy = true;

        StudentTrainResult with_lm = train_student(teacher, &lm.model, corpus, {s}, op, cfg);
        StudentTrainResult without = train_student_without_lm(teacher, corpus, {s}, op, cfg);
        REQUIRE(with_lm.heldout_final == Catch::Approx(without.heldout_final).epsilon(1e-12));
        for (const auto& [name, e] : with_lm.student.params().entries())
            REQUIRE(e.value == without.student.params().value(name));
    }
}
