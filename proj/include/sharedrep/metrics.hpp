#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sharedrep {

struct ConfusionCounts {
    std::vector<std::size_t> tp, fp, fn;
    std::size_t total = 0;

    static ConfusionCounts from(std::span<const int> preds, std::span<const int> labels,
                                std::size_t classes);
    /// F1 of one class, 0 when precision + recall is 0.
    double f1(std::size_t cls) const;
};

/// F1 of `positive_class` treated as the positive label.
double f1_binary(std::span<const int> preds, std::span<const int> labels, int positive_class = 1);

/// Unweighted mean of per-class F1 over all `classes` classes.
double f1_macro(std::span<const int> preds, std::span<const int> labels, std::size_t classes);

// ---------------------------------------------------------------------------
// Text similarity. Tokenization is lowercase + whitespace split.

using Tokens = std::vector<std::string>;

Tokens tokenize(std::string_view text);

struct TextPair {
    Tokens reference;
    Tokens hypothesis;

    static TextPair from_text(std::string_view reference, std::string_view hypothesis);
};

/// Word-level Levenshtein distance (unit costs).
std::size_t edit_distance(std::span<const std::string> reference, std::span<const std::string> hypothesis);

/// edit_distance / |reference|; may exceed 1.
double wer(const TextPair& pair);

/// Corpus WER: total edits over total reference words.
double corpus_wer(std::span<const TextPair> pairs);

inline constexpr double kBleuSmoothing = 1e-9;

/// Corpus BLEU-4 with one reference per hypothesis. A zero n-gram match count
/// is replaced by kBleuSmoothing; brevity penalty exp(min(0, 1 - r/c)).
double bleu(std::span<const Tokens> references, std::span<const Tokens> hypotheses);

}  // namespace sharedrep
