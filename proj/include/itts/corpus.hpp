#pragma once

// Synthetic sentence corpus, plain-text ingestion, and the deterministic
// frame-target oracle. The oracle's declination term makes every frame depend
// on total sentence length, so conditioning on (predicted) future context has
// measurable value downstream.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "itts/common.hpp"
#include "itts/tensor.hpp"

namespace itts {

// ----------------------------- vocabulary -----------------------------

class Vocabulary {
public:
    static constexpr int kEos = 0;
    static constexpr int kUnk = 1;
    static constexpr std::size_t kReserved = 2;

    static Vocabulary synthetic(std::size_t vocab_size) {
        if (vocab_size < 8) throw ConfigError("vocab_size must be >= 8, got " + std::to_string(vocab_size));
        Vocabulary v;
        v.words_.reserve(vocab_size);
        v.words_.push_back("</s>");
        v.words_.push_back("<unk>");
        for (std::size_t i = kReserved; i < vocab_size; ++i) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "w%03zu", i - kReserved);
            v.words_.push_back(buf);
        }
        v.rebuild_index();
        return v;
    }

    std::size_t size() const { return words_.size(); }
    std::size_t regular_words() const { return words_.size() - kReserved; }

    const std::string& word(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= words_.size())
            throw VocabError("word id " + std::to_string(id) + " outside vocabulary of " +
                             std::to_string(words_.size()));
        return words_[static_cast<std::size_t>(id)];
    }

    /// Lookup with UNK fallback (ingestion path).
    int id_or_unk(const std::string& w) const {
        auto it = indices_.find(w);
        return it == indices_.end() ? kUnk : it->second;
    }

    bool contains_id(int id) const { return id >= 0 && static_cast<std::size_t>(id) < words_.size(); }

    const std::vector<std::string>& words() const { return words_; }

private:
    void rebuild_index() {
        indices_.clear();
        for (std::size_t i = 0; i < words_.size(); ++i) indices_[words_[i]] = static_cast<int>(i);
    }

    std::vector<std::string> words_;
    std::map<std::string, int> indices_;
};

// ----------------------------- sentences -----------------------------

/// Word-id sequence; `tokens` ends with exactly one EOS.
struct Sentence {
    std::vector<int> tokens;

    std::size_t word_count() const { return tokens.empty() ? 0 : tokens.size() - 1; }

    /// Words only, EOS stripped.
    std::vector<int> words() const { return {tokens.begin(), tokens.end() - 1}; }
};

inline void validate_sentence(const Sentence& s) {
    if (s.tokens.size() < 2) throw ConfigError("sentence must contain at least one word plus EOS");
    for (std::size_t i = 0; i + 1 < s.tokens.size(); ++i)
        if (s.tokens[i] == Vocabulary::kEos) throw ConfigError("EOS in sentence interior");
    if (s.tokens.back() != Vocabulary::kEos) throw ConfigError("sentence does not end in EOS");
}

// ----------------------------- Markov chain -----------------------------

struct MarkovChain {
    Tensor transition;              // [W x W] over regular words (id offset kReserved)
    std::vector<double> stationary;  // left eigenvector, used as the initial distribution
};

/// Chain construction is a pure function of (seed, vocab_size). Squared
/// weights give peaked rows (learnable conditionals); the 0.05 floor keeps
/// every transition possible so the chain still mixes.
inline MarkovChain corpus_chain(std::uint64_t seed, std::size_t vocab_size) {
    const std::size_t W = vocab_size - Vocabulary::kReserved;
    Rng rng(splitmix64(seed ^ 0x636861696eull));  // "chain"
    MarkovChain chain;
    chain.transition = Tensor(W, W);
    for (std::size_t i = 0; i < W; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < W; ++j) {
            const double u = rng.uniform();
            const double w = 0.05 + u * u;
            chain.transition.at(i, j) = w;
            total += w;
        }
        for (std::size_t j = 0; j < W; ++j) chain.transition.at(i, j) /= total;
    }
    // Power iteration for the stationary distribution.
    std::vector<double> pi(W, 1.0 / static_cast<double>(W)), next(W, 0.0);
    for (int iter = 0; iter < 500; ++iter) {
        std::fill(next.begin(), next.end(), 0.0);
        for (std::size_t i = 0; i < W; ++i)
            for (std::size_t j = 0; j < W; ++j) next[j] += pi[i] * chain.transition.at(i, j);
        pi.swap(next);
    }
    chain.stationary = pi;
    return chain;
}

struct CorpusParams {
    std::uint64_t seed = 1;
    std::size_t vocab_size = 64;
    std::size_t sentence_count = 400;
    std::size_t min_len = 4;
    std::size_t max_len = 14;
};

/// Seeded first-order Markov sentences. First word is drawn from the chain's
/// stationary distribution, so unigram statistics match it in expectation.
inline std::vector<Sentence> generate_corpus(const CorpusParams& p) {
    if (p.vocab_size < 8) throw ConfigError("vocab_size must be >= 8, got " + std::to_string(p.vocab_size));
    if (p.min_len < 4 || p.max_len > 30 || p.min_len > p.max_len)
        throw ConfigError("sentence length range [" + std::to_string(p.min_len) + ", " +
                          std::to_string(p.max_len) + "] must lie within [4, 30]");
    if (p.sentence_count == 0) throw ConfigError("sentence_count must be positive");

    MarkovChain chain = corpus_chain(p.seed, p.vocab_size);
    const std::size_t W = p.vocab_size - Vocabulary::kReserved;
    Rng rng(splitmix64(p.seed ^ 0x73656e74ull));  // "sent"

    std::vector<Sentence> corpus;
    corpus.reserve(p.sentence_count);
    for (std::size_t s = 0; s < p.sentence_count; ++s) {
        const auto len = static_cast<std::size_t>(
            rng.uniform_int(static_cast<long>(p.min_len), static_cast<long>(p.max_len)));
        Sentence sent;
        sent.tokens.reserve(len + 1);
        std::size_t w = rng.categorical(chain.stationary);
        sent.tokens.push_back(static_cast<int>(w + Vocabulary::kReserved));
        std::vector<double> row(W);
        for (std::size_t t = 1; t < len; ++t) {
            for (std::size_t j = 0; j < W; ++j) row[j] = chain.transition.at(w, j);
            w = rng.categorical(row);
            sent.tokens.push_back(static_cast<int>(w + Vocabulary::kReserved));
        }
        sent.tokens.push_back(Vocabulary::kEos);
        corpus.push_back(std::move(sent));
    }
    return corpus;
}

// ----------------------------- frame oracle -----------------------------

struct FrameTarget {
    Tensor frames;      // [M*K_f x D]
    Tensor stop_flags;  // [M*K_f x 1], 1 on the last frame of each word
};

/// Fixed per-word synthesis embeddings in [-1, 1]^D; pure in (seed, V, D).
inline Tensor oracle_embedding_table(std::uint64_t seed, std::size_t vocab_size, std::size_t frame_dim) {
    Rng rng(splitmix64(seed ^ 0x73796e656d62ull));  // "synemb"
    Tensor table(vocab_size, frame_dim);
    for (std::size_t i = 0; i < table.size(); ++i) table[i] = rng.uniform(-1.0, 1.0);
    return table;
}

/// Prosodic declination stand-in: 1 at the first word, 0.5 at the last.
inline double declination(std::size_t word_index_1based, std::size_t word_count) {
    const double denom = static_cast<double>(std::max<std::size_t>(word_count - 1, 1));
    return 1.0 - 0.5 * static_cast<double>(word_index_1based - 1) / denom;
}

/// Small fixed per-offset component, |value| <= 0.1.
inline double position_component(std::size_t frame_offset, std::size_t dim) {
    return 0.1 * std::sin(1.7 * static_cast<double>(frame_offset + 1) + 0.9 * static_cast<double>(dim + 1));
}

struct OracleParams {
    std::size_t frames_per_word = 4;  // K_f
    std::size_t frame_dim = 16;       // D
    std::uint64_t seed = 1;
};

/// frame(n, j) = SynEmb(w_n) * decl(n, M) + posvec(j). Pure in its arguments.
inline FrameTarget oracle_frames(const Sentence& s, const OracleParams& p, std::size_t vocab_size) {
    if (p.frames_per_word < 1) throw ConfigError("frames_per_word must be >= 1");
    if (p.frame_dim < 2) throw ConfigError("frame_dim must be >= 2");
    validate_sentence(s);

    const Tensor table = oracle_embedding_table(p.seed, vocab_size, p.frame_dim);
    const std::size_t M = s.word_count();
    FrameTarget target;
    target.frames = Tensor(M * p.frames_per_word, p.frame_dim);
    target.stop_flags = Tensor(M * p.frames_per_word, 1);

    for (std::size_t n = 0; n < M; ++n) {
        const int id = s.tokens[n];
        if (id < 0 || static_cast<std::size_t>(id) >= vocab_size)
            throw VocabError("word id " + std::to_string(id) + " outside vocabulary of " +
                             std::to_string(vocab_size));
        const double decl = declination(n + 1, M);
        for (std::size_t j = 0; j < p.frames_per_word; ++j) {
            const std::size_t row = n * p.frames_per_word + j;
            for (std::size_t d = 0; d < p.frame_dim; ++d)
                target.frames.at(row, d) =
                    table.at(static_cast<std::size_t>(id), d) * decl + position_component(j, d);
            if (j + 1 == p.frames_per_word) target.stop_flags[row] = 1.0;
        }
    }
    return target;
}

// ----------------------------- text io -----------------------------

/// One sentence per line, space-separated tokens, UTF-8, EOS implicit.
inline void save_corpus(const std::vector<Sentence>& corpus, const Vocabulary& vocab,
                        const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write corpus " + path.string());
    for (const Sentence& s : corpus) {
        for (std::size_t i = 0; i + 1 < s.tokens.size(); ++i) {
            if (i) os << ' ';
            os << vocab.word(s.tokens[i]);
        }
        os << '\n';
    }
}

/// Lowercases, splits on whitespace, maps out-of-vocabulary words to UNK.
inline std::vector<Sentence> ingest_text(std::istream& is, const Vocabulary& vocab) {
    std::vector<Sentence> corpus;
    std::string line;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        Sentence sent;
        std::string tok;
        while (ls >> tok) {
            std::transform(tok.begin(), tok.end(), tok.begin(),
                           [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
            sent.tokens.push_back(vocab.id_or_unk(tok));
        }
        if (sent.tokens.empty()) continue;
        sent.tokens.push_back(Vocabulary::kEos);
        corpus.push_back(std::move(sent));
    }
    return corpus;
}

inline std::vector<Sentence> load_corpus(const std::filesystem::path& path, const Vocabulary& vocab) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open corpus " + path.string());
    return ingest_text(is, vocab);
}

/// Deterministic split: every 10th sentence (index % 10 == 0) is held out.
inline std::pair<std::vector<Sentence>, std::vector<Sentence>> split_corpus(const std::vector<Sentence>& all) {
    std::vector<Sentence> train, heldout;
    for (std::size_t i = 0; i < all.size(); ++i)
        (i % 10 == 0 ? heldout : train).push_back(all[i]);
    return {train, heldout};
}

}  // namespace itts
