#include "sharedrep/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

#include "sharedrep/errors.hpp"

namespace sharedrep {

ConfusionCounts ConfusionCounts::from(std::span<const int> preds, std::span<const int> labels,
                                      std::size_t classes) {
    if (preds.size() != labels.size())
        throw UsageError("metric: " + std::to_string(preds.size()) + " predictions for " +
                         std::to_string(labels.size()) + " labels");
    if (preds.empty()) throw UsageError("metric: empty prediction set");
    ConfusionCounts c;
    c.tp.assign(classes, 0);
    c.fp.assign(classes, 0);
    c.fn.assign(classes, 0);
    c.total = preds.size();
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const int p = preds[i], y = labels[i];
        if (p < 0 || y < 0 || static_cast<std::size_t>(p) >= classes ||
            static_cast<std::size_t>(y) >= classes)
            throw UsageError("metric: class index outside [0, " + std::to_string(classes) + ")");
        if (p == y) {
            ++c.tp[static_cast<std::size_t>(p)];
        } else {
            ++c.fp[static_cast<std::size_t>(p)];
            ++c.fn[static_cast<std::size_t>(y)];
        }
    }
    return c;
}

double ConfusionCounts::f1(std::size_t cls) const {
    // 2PR/(P+R) == 2TP/(2TP+FP+FN); zero when there are no true positives.
    const double t = static_cast<double>(tp.at(cls));
    const double denom = 2.0 * t + static_cast<double>(fp[cls] + fn[cls]);
    return t == 0.0 ? 0.0 : 2.0 * t / denom;
}

double f1_binary(std::span<const int> preds, std::span<const int> labels, int positive_class) {
    if (preds.size() != labels.size())
        throw UsageError("f1_binary: " + std::to_string(preds.size()) + " predictions for " +
                         std::to_string(labels.size()) + " labels");
    if (preds.empty()) throw UsageError("f1_binary: empty prediction set");
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const bool p = preds[i] == positive_class;
        const bool y = labels[i] == positive_class;
        tp += p && y;
        fp += p && !y;
        fn += !p && y;
    }
    if (tp == 0) return 0.0;
    // 2PR/(P+R) reduced to one division so the result is correctly rounded
    return 2.0 * double(tp) / double(2 * tp + fp + fn);
}

double f1_macro(std::span<const int> preds, std::span<const int> labels, std::size_t classes) {
    if (classes == 0) throw UsageError("f1_macro: zero classes");
    const auto counts = ConfusionCounts::from(preds, labels, classes);
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += counts.f1(c);
    return sum / static_cast<double>(classes);
}

// ---------------------------------------------------------------------------

Tokens tokenize(std::string_view text) {
    Tokens out;
    std::string cur;
    for (char ch : text) {
        const auto u = static_cast<unsigned char>(ch);
        if (std::isspace(u)) {
            if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(u)));
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

TextPair TextPair::from_text(std::string_view reference, std::string_view hypothesis) {
    return {tokenize(reference), tokenize(hypothesis)};
}

std::size_t edit_distance(std::span<const std::string> ref, std::span<const std::string> hyp) {
    // Single-row DP over the hypothesis.
    std::vector<std::size_t> row(hyp.size() + 1);
    for (std::size_t j = 0; j <= hyp.size(); ++j) row[j] = j;
    for (std::size_t i = 1; i <= ref.size(); ++i) {
        std::size_t diag = row[0];
        row[0] = i;
        for (std::size_t j = 1; j <= hyp.size(); ++j) {
            const std::size_t up = row[j];
            const std::size_t sub = diag + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
            row[j] = std::min({sub, up + 1, row[j - 1] + 1});
            diag = up;
        }
    }
    return row[hyp.size()];
}

double wer(const TextPair& pair) {
    if (pair.reference.empty()) throw UsageError("wer: empty reference is undefined");
    return static_cast<double>(edit_distance(pair.reference, pair.hypothesis)) /
           static_cast<double>(pair.reference.size());
}

double corpus_wer(std::span<const TextPair> pairs) {
    std::size_t edits = 0, words = 0;
    for (const auto& p : pairs) {
        edits += edit_distance(p.reference, p.hypothesis);
        words += p.reference.size();
    }
    if (words == 0) throw UsageError("wer: empty reference corpus is undefined");
    return static_cast<double>(edits) / static_cast<double>(words);
}

namespace {

using NgramCounts = std::map<std::vector<std::string_view>, std::size_t>;

NgramCounts count_ngrams(const Tokens& tokens, std::size_t n) {
    NgramCounts counts;
    if (tokens.size() < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        std::vector<std::string_view> key(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                          tokens.begin() + static_cast<std::ptrdiff_t>(i + n));
        ++counts[std::move(key)];
    }
    return counts;
}

}  // namespace

double bleu(std::span<const Tokens> references, std::span<const Tokens> hypotheses) {
    if (references.size() != hypotheses.size())
        throw UsageError("bleu: " + std::to_string(references.size()) + " references for " +
                         std::to_string(hypotheses.size()) + " hypotheses");
    if (references.empty()) throw UsageError("bleu: empty corpus");

    constexpr std::size_t kMaxOrder = 4;
    std::size_t matches[kMaxOrder] = {};
    std::size_t totals[kMaxOrder] = {};
    std::size_t ref_len = 0, hyp_len = 0;
    for (std::size_t s = 0; s < references.size(); ++s) {
        ref_len += references[s].size();
        hyp_len += hypotheses[s].size();
        for (std::size_t n = 1; n <= kMaxOrder; ++n) {
            const auto hyp_counts = count_ngrams(hypotheses[s], n);
            const auto ref_counts = count_ngrams(references[s], n);
            for (const auto& [gram, count] : hyp_counts) {
                totals[n - 1] += count;
                if (auto it = ref_counts.find(gram); it != ref_counts.end())
                    matches[n - 1] += std::min(count, it->second);
            }
        }
    }
    if (hyp_len == 0) return 0.0;

    double log_sum = 0.0;
    for (std::size_t n = 0; n < kMaxOrder; ++n) {
        const double num = matches[n] > 0 ? static_cast<double>(matches[n]) : kBleuSmoothing;
        const double den = totals[n] > 0 ? static_cast<double>(totals[n]) : 1.0;
        log_sum += std::log(num / den);
    }
    const double brevity =
        std::exp(std::min(0.0, 1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len)));
    return brevity * std::exp(log_sum / kMaxOrder);
}

}  // namespace sharedrep
