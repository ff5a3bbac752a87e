#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "itts/tts.hpp"

using namespace itts;

namespace {

TtsDims tiny_dims(std::size_t vocab = 10) {
    TtsDims d;
    d.vocab = vocab;
    d.enc_embed = 6;
    d.enc_hidden = 8;
    d.dec_hidden = 10;
    d.context_dim = 12;
    d.style_tokens = 3;
    d.frame_dim = 4;
    return d;
}

}  // namespace

TEST_CASE("encode basics", "[tts]") {
    TeacherModel model = TeacherModel::init(tiny_dims(), 5);
    ConstBinding bind(model.params());
    ParamBinder p = bind.binder();

    SECTION("single word gives one hidden vector") {
        EncoderState st = model.encode(p, {3});
        CHECK(st.hidden.rows() == 1);
        CHECK(st.hidden.cols() == 8);
    }
    SECTION("purity: identical inputs, identical outputs") {
        EncoderState a = model.encode(p, {3, 7, 2});
        EncoderState b = model.encode(p, {3, 7, 2});
        CHECK(a.hidden == b.hidden);
    }
    SECTION("3-word input equals manual embedding + blstm composition") {
        std::vector<int> words{4, 1, 9};
        EncoderState st = model.encode(p, words);

        const Tensor& emb = model.params().value("enc.emb");
        std::vector<Tensor> xs;
        for (int id : words) {
            Tensor x(1, emb.cols());
            for (std::size_t d = 0; d < emb.cols(); ++d) x[d] = emb.at(static_cast<std::size_t>(id), d);
            xs.push_back(x);
        }
        LstmParams fwd{model.params().value("enc.fwd.Wx"), model.params().value("enc.fwd.Wh"),
                       model.params().value("enc.fwd.b")};
        LstmParams bwd{model.params().value("enc.bwd.Wx"), model.params().value("enc.bwd.Wh"),
                       model.params().value("enc.bwd.b")};
        BlstmResult ref = blstm_forward(xs, fwd, bwd);
        for (std::size_t t = 0; t < 3; ++t)
            for (std::size_t j = 0; j < 8; ++j) REQUIRE(st.hidden.at(t, j) == ref.outputs[t].at(0, j));
    }
    SECTION("unknown id raises a vocabulary error") {
        CHECK_THROWS_AS(model.encode(p, {42}), VocabError);
        CHECK_THROWS_AS(model.encode(p, {}), ShapeError);
    }
}

TEST_CASE("context_embed attention", "[tts]") {
    SECTION("bank with one token returns that token regardless of inputs") {
        TtsDims d = tiny_dims();
        d.style_tokens = 1;
        TeacherModel model = TeacherModel::init(d, 11);
        ConstBinding bind(model.params());
        ParamBinder p = bind.binder();
        EncoderState past = model.encode(p, {2, 3});
        ContextEmbedding ce = model.context_embed(p, &past, nullptr);
        const Tensor& tokens = model.params().value("ctx.tokens");
        for (std::size_t j = 0; j < d.context_dim; ++j)
            REQUIRE(ce.e[j] == Catch::Approx(tokens.at(0, j)).margin(1e-12));
        REQUIRE(ce.attention[0] == Catch::Approx(1.0).margin(1e-12));
    }

    TeacherModel model = TeacherModel::init(tiny_dims(), 11);
    ConstBinding bind(model.params());
    ParamBinder p = bind.binder();

    SECTION("both inputs empty give a fixed deterministic baseline") {
        ContextEmbedding a = model.context_embed(p, nullptr, nullptr);
        ContextEmbedding b = model.context_embed(p, nullptr, nullptr);
        CHECK(a.e == b.e);

        // Zero summaries mean the query is just the bias row.
        const Tensor& W = model.params().value("ctx.query.W");
        const Tensor& bias = model.params().value("ctx.query.b");
        const Tensor& tokens = model.params().value("ctx.tokens");
        Tensor zeros(1, W.rows());
        Tensor q = linear_forward(zeros, W, bias);
        std::vector<double> scores(tokens.rows(), 0.0);
        double mx = -1e300;
        for (std::size_t t = 0; t < tokens.rows(); ++t) {
            for (std::size_t j = 0; j < tokens.cols(); ++j) scores[t] += q[j] * tokens.at(t, j);
            mx = std::max(mx, scores[t]);
        }
        double denom = 0.0;
        for (double& sc : scores) denom += (sc = std::exp(sc - mx));
        for (std::size_t j = 0; j < tokens.cols(); ++j) {
            double e = 0.0;
            for (std::size_t t = 0; t < tokens.rows(); ++t) e += scores[t] / denom * tokens.at(t, j);
            REQUIRE(a.e[j] == Catch::Approx(e).margin(1e-12));
        }
    }
    SECTION("4-token bank matches the attention formula computed by hand") {
        TtsDims d = tiny_dims();
        d.style_tokens = 4;
        TeacherModel m4 = TeacherModel::init(d, 17);
        ConstBinding b4(m4.params());
        ParamBinder p4 = b4.binder();
        EncoderState past = m4.encode(p4, {1, 5});
        EncoderState future = m4.encode(p4, {7});
        ContextEmbedding ce = m4.context_embed(p4, &past, &future);

        Tensor concat(1, 2 * d.enc_hidden);
        Tensor pp = TeacherModel::mean_rows_value(past.hidden);
        Tensor fp = TeacherModel::mean_rows_value(future.hidden);
        for (std::size_t j = 0; j < d.enc_hidden; ++j) {
            concat[j] = pp[j];
            concat[d.enc_hidden + j] = fp[j];
        }
        Tensor q = linear_forward(concat, m4.params().value("ctx.query.W"), m4.params().value("ctx.query.b"));
        const Tensor& tokens = m4.params().value("ctx.tokens");
        std::vector<double> w(4);
        double mx = -1e300;
        for (std::size_t t = 0; t < 4; ++t) {
            w[t] = 0.0;
            for (std::size_t j = 0; j < d.context_dim; ++j) w[t] += q[j] * tokens.at(t, j);
            mx = std::max(mx, w[t]);
        }
        double denom = 0.0;
        for (double& v : w) denom += (v = std::exp(v - mx));
        for (std::size_t t = 0; t < 4; ++t) {
            w[t] /= denom;
            REQUIRE(ce.attention[t] == Catch::Approx(w[t]).margin(1e-12));
        }
        for (std::size_t j = 0; j < d.context_dim; ++j) {
            double e = 0.0;
            for (std::size_t t = 0; t < 4; ++t) e += w[t] * tokens.at(t, j);
            REQUIRE(ce.e[j] == Catch::Approx(e).margin(1e-12));
        }
    }
    SECTION("attention weights are a convex combination across random models") {
        for (std::uint64_t seed = 1; seed <= 20; ++seed) {
            TeacherModel m = TeacherModel::init(tiny_dims(), seed * 131);
            ConstBinding b(m.params());
            ParamBinder pb = b.binder();
            Rng rng(seed);
            std::vector<int> past_ids, future_ids;
            for (int i = 0; i < 3; ++i) past_ids.push_back(static_cast<int>(rng.uniform_int(0, 9)));
            for (int i = 0; i < 2; ++i) future_ids.push_back(static_cast<int>(rng.uniform_int(0, 9)));
            EncoderState past = m.encode(pb, past_ids);
            EncoderState future = m.encode(pb, future_ids);
            ContextEmbedding ce = m.context_embed(pb, &past, &future);
            double sum = 0.0;
            for (std::size_t t = 0; t < ce.attention.size(); ++t) {
                REQUIRE(ce.attention[t] >= 0.0);
                sum += ce.attention[t];
            }
            REQUIRE(std::abs(sum - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("decoder basics", "[tts]") {
    TeacherModel model = TeacherModel::init(tiny_dims(), 23);
    ConstBinding bind(model.params());
    ParamBinder p = bind.binder();
    EncoderState current = model.encode(p, {2, 6});

    SECTION("max_frames=1 emits exactly one frame") {
        FrameSegment seg = model.decode_segment(p, current, model.zero_context(), 1);
        CHECK(seg.frames.rows() == 1);
        CHECK(seg.stop_logits.rows() == 1);
    }
    SECTION("teacher forcing emits exactly the target length") {
        Rng rng(3);
        Tensor target(7, 4);
        for (std::size_t i = 0; i < target.size(); ++i) target[i] = rng.uniform(-1, 1);
        FrameSegment seg = model.decode_teacher_forced(p, current, model.zero_context(), target);
        CHECK(seg.frames.rows() == 7);
        CHECK(seg.stop_logits.rows() == 7);
    }
    SECTION("free running never exceeds max_frames") {
        FrameSegment seg = model.decode_segment(p, current, model.zero_context(), 11);
        CHECK(seg.frames.rows() <= 11);
    }
}

TEST_CASE("target_loss", "[tts]") {
    Rng rng(7);
    Tensor frames(6, 4);
    for (std::size_t i = 0; i < frames.size(); ++i) frames[i] = rng.uniform(-1, 1);
    Tensor flags(6, 1);
    flags[2] = 1.0;
    flags[5] = 1.0;

    SECTION("perfect prediction with saturated logits gives ~zero loss") {
        FrameSegment pred;
        pred.frames = frames;
        pred.stop_logits = Tensor(6, 1);
        for (std::size_t i = 0; i < 6; ++i) pred.stop_logits[i] = flags[i] > 0.5 ? 40.0 : -40.0;
        CHECK(target_loss(pred, frames, flags) < 1e-10);
    }
    SECTION("zero prediction decomposes into oracle power plus ln 2") {
        FrameSegment pred;
        pred.frames = Tensor(6, 4);
        pred.stop_logits = Tensor(6, 1);
        double power = 0.0;
        for (std::size_t i = 0; i < frames.size(); ++i) power += frames[i] * frames[i];
        power /= static_cast<double>(frames.size());
        CHECK(target_loss(pred, frames, flags) ==
              Catch::Approx(power + std::log(2.0)).epsilon(1e-12));
    }
    SECTION("doubling the frame error quadruples the MSE term") {
        FrameSegment one, two;
        one.frames = frames;
        two.frames = frames;
        for (std::size_t i = 0; i < frames.size(); ++i) {
            one.frames[i] += 0.25;
            two.frames[i] += 0.5;
        }
        one.stop_logits = Tensor(6, 1);
        two.stop_logits = Tensor(6, 1);
        const double ln2 = bce_stop_loss(Tensor(6, 1), flags);
        CHECK(target_loss(two, frames, flags) - ln2 ==
              Catch::Approx(4.0 * (target_loss(one, frames, flags) - ln2)).epsilon(1e-12));
    }
    SECTION("length mismatch is a dimension error") {
        FrameSegment pred;
        pred.frames = Tensor(5, 4);
        pred.stop_logits = Tensor(5, 1);
        CHECK_THROWS_AS(target_loss(pred, frames, flags), ShapeError);
    }
}

TEST_CASE("full teacher loss passes the gradient check", "[tts]") {
    TtsDims d = tiny_dims(10);
    OracleParams op;
    op.frames_per_word = 2;
    op.frame_dim = d.frame_dim;
    op.seed = 3;

    // Two-word current chunks: a 4-word and a 5-word sentence.
    std::vector<Sentence> corpus{{{2, 3, 4, 5, Vocabulary::kEos}}, {{6, 7, 8, 9, 2, Vocabulary::kEos}}};
    std::vector<WindowExample> examples = build_window_examples(corpus, op, d.vocab, 2, 1);
    REQUIRE(examples.size() >= 4);

    TeacherModel model = TeacherModel::init(d, 31);
    TeacherTrainConfig cfg;
    cfg.window = 2;
    std::vector<WindowExample*> batch{&examples[1], &examples[4]};

    GradCheckOptions opt;
    opt.max_coords_per_param = 12;
    GradCheckReport r = grad_check(
        model.params(),
        [&](ModelGraph& g) {
            return teacher_batch_loss(model, graph_binder(g), batch, false, nullptr, cfg, 0);
        },
        opt);
    INFO("worst param: " << r.worst_param);
    CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("train_teacher controls", "[tts]") {
    CorpusParams cp;
    cp.vocab_size = 12;
    cp.sentence_count = 12;
    cp.min_len = 4;
    cp.max_len = 6;
    auto corpus = generate_corpus(cp);
    OracleParams op;
    op.frames_per_word = 2;
    op.frame_dim = 4;
    TtsDims d = tiny_dims(12);

    TeacherTrainConfig cfg;
    cfg.phase1_iters = 4;
    cfg.phase2_iters = 0;
    cfg.batch_size = 4;
    cfg.seed = 9;

    SECTION("freezing every parameter keeps the loss constant") {
        // One sentence with a single window, so every batch is identical and
        // any loss movement could only come from parameter updates.
        std::vector<Sentence> one{{{2, 3, 4, Vocabulary::kEos}}};
        TeacherModel model = TeacherModel::init(d, 41);
        for (auto& [name, e] : model.params().entries()) e.trainable = false;
        TeacherTrainResult r = train_teacher(model, one, op, nullptr, cfg);
        for (double v : r.phase1_loss) REQUIRE(v == r.phase1_loss.front());
    }
    SECTION("seeded runs are identical") {
        TeacherModel a = TeacherModel::init(d, 41);
        TeacherModel b = TeacherModel::init(d, 41);
        TeacherTrainResult ra = train_teacher(a, corpus, op, nullptr, cfg);
        TeacherTrainResult rb = train_teacher(b, corpus, op, nullptr, cfg);
        REQUIRE(ra.phase1_loss == rb.phase1_loss);
        for (const auto& [name, e] : a.params().entries()) REQUIRE(e.value == b.params().value(name));
    }
    SECTION("phase 2 without an LM is a config error") {
        TeacherModel model = TeacherModel::init(d, 41);
        TeacherTrainConfig bad = cfg;
        bad.phase2_iters = 2;
        CHECK_THROWS_WITH(train_teacher(model, corpus, op, nullptr, bad),
                          Catch::Matchers::ContainsSubstring("train-lm"));
    }
}

TEST_CASE("toy teacher learns frame targets and stop timing", "[tts][training]") {
    CorpusParams cp;
    cp.seed = 21;
    cp.vocab_size = 12;
    cp.sentence_count = 40;
    cp.min_len = 4;
    cp.max_len = 6;
    auto corpus = generate_corpus(cp);

    OracleParams op;
    op.frames_per_word = 3;
    op.frame_dim = 8;
    op.seed = 2;

    TtsDims d;
    d.vocab = 12;
    d.enc_embed = 16;
    d.enc_hidden = 32;
    d.dec_hidden = 48;
    d.context_dim = 24;
    d.style_tokens = 4;
    d.frame_dim = 8;

    TeacherModel model = TeacherModel::init(d, 77);
    TeacherTrainConfig cfg;
    cfg.window = 3;
    cfg.phase1_iters = 500;
    cfg.phase2_iters = 0;
    cfg.batch_size = 8;
    cfg.seed = 13;
    TeacherTrainResult r = train_teacher(model, corpus, op, nullptr, cfg);

    // Loss halves over the run (averaged across the first and last 25 iters).
    auto mean_of = [&](std::size_t begin, std::size_t end) {
        double acc = 0.0;
        for (std::size_t i = begin; i < end; ++i) acc += r.phase1_loss[i];
        return acc / static_cast<double>(end - begin);
    };
    const double head = mean_of(0, 25);
    const double tail = mean_of(r.phase1_loss.size() - 25, r.phase1_loss.size());
    INFO("head " << head << " tail " << tail);
    CHECK(tail < 0.5 * head);

    // Free-running decode of an in-corpus chunk lands within +-1 of K_f * N.
    ConstBinding bind(model.params());
    ParamBinder p = bind.binder();
    std::size_t within = 0, total = 0;
    for (std::size_t si = 0; si < 8; ++si) {
        const Sentence& s = corpus[si];
        const std::vector<int> words = s.words();
        std::vector<int> chunk{words[0], words[1], words[2]};
        std::vector<int> future = suffix_words(s, 3);
        if (future.size() > 5) future.resize(5);
        ContextEmbedding ce = model.context_for(p, {}, future);
        EncoderState cur = model.encode(p, chunk);
        FrameSegment seg = model.decode_segment(p, cur, ce.e, 40);
        const long expect = 3 * static_cast<long>(op.frames_per_word);
        if (std::abs(static_cast<long>(seg.frames.rows()) - expect) <= 1) ++within;
        ++total;
    }
    INFO("stop-exact segments: " << within << "/" << total);
    CHECK(within >= 6);
}
