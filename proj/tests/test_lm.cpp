#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "itts/lm.hpp"

using namespace itts;

namespace {

LmConfig tiny_config() {
    LmConfig cfg;
    cfg.embed_dim = 16;
    cfg.hidden_dim = 32;
    cfg.iters = 500;
    cfg.batch_size = 4;
    cfg.seed = 7;
    return cfg;
}

}  // namespace

TEST_CASE("LM memorizes a single-sentence corpus", "[lm]") {
    const std::size_t V = 16;
    Sentence s{{5, 3, 8, 2, 6, Vocabulary::kEos}};
    std::vector<Sentence> corpus(32, s);

    LmTrainResult r = train_lm(corpus, {}, V, tiny_config());
    REQUIRE(r.train_loss.back() < 0.05);

    SECTION("greedy continuation returns the true next words and stops at EOS") {
        SamplerConfig sc;
        sc.greedy = true;
        sc.max_len = 5;
        std::vector<int> observed{5, 3};
        std::vector<int> look = sample_lookahead(r.model, observed, sc);
        CHECK(look == std::vector<int>{8, 2, 6});
    }
    SECTION("an observed prefix where EOS is near-certain yields an empty lookahead") {
        SamplerConfig sc;
        sc.greedy = true;
        std::vector<int> look = sample_lookahead(r.model, s.words(), sc);
        CHECK(look.empty());
    }
}

TEST_CASE("LM training is deterministic", "[lm]") {
    const std::size_t V = 12;
    CorpusParams cp;
    cp.vocab_size = V;
    cp.sentence_count = 20;
    cp.min_len = 4;
    cp.max_len = 6;
    auto corpus = generate_corpus(cp);

    LmConfig cfg = tiny_config();
    cfg.iters = 40;
    LmTrainResult a = train_lm(corpus, {}, V, cfg);
    LmTrainResult b = train_lm(corpus, {}, V, cfg);
    REQUIRE(a.train_loss == b.train_loss);
    for (const auto& [name, e] : a.model.params().entries())
        REQUIRE(e.value == b.model.params().value(name));
}

TEST_CASE("LM divergence reports the iteration", "[lm]") {
    const std::size_t V = 12;
    CorpusParams cp;
    cp.vocab_size = V;
    cp.sentence_count = 10;
    auto corpus = generate_corpus(cp);
    LmConfig cfg = tiny_config();
    cfg.iters = 3;
    cfg.lr = std::numeric_limits<double>::quiet_NaN();  // poisons params after step 0
    CHECK_THROWS_WITH(train_lm(corpus, {}, V, cfg), Catch::Matchers::ContainsSubstring("iteration 1"));
}

TEST_CASE("LM approximates the Markov chain conditionals", "[lm]") {
    CorpusParams cp;
    cp.seed = 3;
    cp.vocab_size = 16;
    cp.sentence_count = 1200;
    cp.min_len = 6;
    cp.max_len = 10;
    auto corpus = generate_corpus(cp);
    MarkovChain chain = corpus_chain(cp.seed, cp.vocab_size);

    LmConfig cfg;
    cfg.embed_dim = 48;
    cfg.hidden_dim = 64;
    cfg.iters = 2500;
    cfg.batch_size = 16;
    cfg.seed = 5;
    LmTrainResult r = train_lm(corpus, {}, cp.vocab_size, cfg);

    const std::size_t W = cp.vocab_size - Vocabulary::kReserved;
    // Frequent bigram contexts: the chain is first-order, so the true
    // conditional after word w is row w of the transition matrix. The model
    // conditions on whole prefixes, so average its prediction over early
    // corpus occurrences of w (before EOS is reachable).
    for (std::size_t w = 0; w < 5; ++w) {
        const int wid = static_cast<int>(w + Vocabulary::kReserved);
        std::vector<double> avg(cp.vocab_size, 0.0);
        std::size_t count = 0;
        for (const Sentence& s : corpus) {
            if (count >= 80) break;
            for (std::size_t i = 0; i + 1 < s.tokens.size() && i < 4 && count < 80; ++i) {
                if (s.tokens[i] != wid) continue;
                std::vector<int> prefix(s.tokens.begin(), s.tokens.begin() + static_cast<long>(i) + 1);
                std::vector<double> p = r.model.next_distribution(prefix);
                for (std::size_t j = 0; j < p.size(); ++j) avg[j] += p[j];
                ++count;
            }
        }
        REQUIRE(count > 0);
        for (double& v : avg) v /= static_cast<double>(count);
        double tv = 0.0;
        for (std::size_t j = 0; j < W; ++j)
            tv += std::abs(avg[j + Vocabulary::kReserved] - chain.transition.at(w, j));
        tv += avg[Vocabulary::kEos] + avg[Vocabulary::kUnk];
        tv *= 0.5;
        CHECK(tv < 0.1);
    }
}

TEST_CASE("lookahead sampler contract", "[lm]") {
    const std::size_t V = 14;
    LanguageModel lm = LanguageModel::init(V, 12, 16, 99);

    SECTION("bounded length, EOS never included, deterministic per seed") {
        for (std::uint64_t seed = 1; seed <= 20; ++seed) {
            SamplerConfig sc;
            sc.seed = seed;
            sc.max_len = 4;
            std::vector<int> prefix{3, 5};
            std::vector<int> a = sample_lookahead(lm, prefix, sc);
            std::vector<int> b = sample_lookahead(lm, prefix, sc);
            REQUIRE(a == b);
            REQUIRE(a.size() <= 4);
            for (int id : a) REQUIRE(id != Vocabulary::kEos);
        }
    }
    SECTION("temperature -> 0 equals the greedy argmax chain") {
        SamplerConfig cold;
        cold.temperature = 1e-3;
        cold.seed = 17;
        cold.max_len = 5;
        std::vector<int> prefix{2, 7, 4};
        std::vector<int> sampled = sample_lookahead(lm, prefix, cold);

        // Argmax chain computed by repeatedly calling the logits function.
        std::vector<int> expect;
        LanguageModel::State st = lm.initial_state();
        for (int id : prefix) lm.advance(st, id);
        for (std::size_t i = 0; i < 5; ++i) {
            Tensor logits = lm.next_logits(st);
            std::size_t best = 0;
            for (std::size_t j = 1; j < logits.size(); ++j)
                if (logits[j] > logits[best]) best = j;
            if (best == static_cast<std::size_t>(Vocabulary::kEos)) break;
            expect.push_back(static_cast<int>(best));
            lm.advance(st, static_cast<int>(best));
        }
        CHECK(sampled == expect);
    }
    SECTION("softmax normalization holds at every context") {
        Rng rng(123);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<int> prefix;
            const auto len = static_cast<std::size_t>(rng.uniform_int(1, 6));
            for (std::size_t i = 0; i < len; ++i)
                prefix.push_back(static_cast<int>(rng.uniform_int(0, static_cast<long>(V) - 1)));
            std::vector<double> p = lm.next_distribution(prefix);
            double sum = 0.0;
            for (double v : p) {
                REQUIRE(v >= 0.0);
                sum += v;
            }
            REQUIRE(std::abs(sum - 1.0) < 1e-9);
        }
    }
    SECTION("inflated sampling returns the single-run result") {
        SamplerConfig sc;
        sc.seed = 4;
        std::vector<int> prefix{3, 6};
        CHECK(sample_lookahead_inflated(lm, prefix, sc, 8) == sample_lookahead(lm, prefix, sc));
    }
    SECTION("precondition violations") {
        SamplerConfig sc;
        CHECK_THROWS_AS(sample_lookahead(lm, {}, sc), ShapeError);
        sc.max_len = 0;
        CHECK_THROWS_AS(sample_lookahead(lm, {1}, sc), ConfigError);
        sc = SamplerConfig{};
        sc.temperature = 0.0;
        CHECK_THROWS_AS(sample_lookahead(lm, {1}, sc), ConfigError);
    }
}
