#pragma once

// Sentence chopping shared by training preprocessing and the incremental
// driver: N-word inference segments and sliding training windows.

#include <vector>

#include "itts/corpus.hpp"

namespace itts {

/// One inference-time chunk of consecutive words (EOS excluded).
struct Segment {
    std::size_t start = 0;       // word index of the first word
    std::vector<int> word_ids;  // N words, final segment may be shorter
};

inline std::vector<Segment> segment_sentence(const Sentence& s, std::size_t segment_words) {
    if (segment_words < 1) throw ConfigError("segment width N must be >= 1");
    validate_sentence(s);
    const std::vector<int> words = s.words();
    std::vector<Segment> segments;
    for (std::size_t start = 0; start < words.size(); start += segment_words) {
        Segment seg;
        seg.start = start;
        const std::size_t end = std::min(start + segment_words, words.size());
        seg.word_ids.assign(words.begin() + static_cast<long>(start), words.begin() + static_cast<long>(end));
        segments.push_back(std::move(seg));
    }
    return segments;
}

/// Sliding training window: `current` covers words [offset, offset+length).
/// Observed context is everything before it, future context everything after.
struct TrainingWindow {
    std::size_t offset = 0;
    std::size_t length = 0;
};

inline std::vector<TrainingWindow> make_training_windows(const Sentence& s, std::size_t window = 3,
                                                         std::size_t hop = 1) {
    if (window < 1) throw ConfigError("window length must be >= 1");
    if (hop < 1) throw ConfigError("hop size must be >= 1");
    validate_sentence(s);
    const std::size_t M = s.word_count();
    std::vector<TrainingWindow> out;
    if (M <= window) {
        out.push_back({0, M});
        return out;
    }
    for (std::size_t offset = 0; offset + window <= M; offset += hop) out.push_back({offset, window});
    return out;
}

/// Words [0, end) of the sentence.
inline std::vector<int> prefix_words(const Sentence& s, std::size_t end) {
    const std::vector<int> words = s.words();
    return {words.begin(), words.begin() + static_cast<long>(std::min(end, words.size()))};
}

/// Words [begin, M) of the sentence.
inline std::vector<int> suffix_words(const Sentence& s, std::size_t begin) {
    const std::vector<int> words = s.words();
    if (begin >= words.size()) return {};
    return {words.begin() + static_cast<long>(begin), words.end()};
}

}  // namespace itts
