#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace q2l {

/// One evaluated (sample, category) entry.
struct ScoredLabel {
    double score = 0.0;
    bool positive = false;
};

/// All-points average precision: mean, over the positives, of the precision
/// at each positive's rank when entries are sorted by descending score.
/// Ties keep list order. Returns nullopt when the list holds no positive.
inline std::optional<double> average_precision(std::span<const ScoredLabel> ranked) {
    std::vector<std::size_t> order(ranked.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return ranked[a].score > ranked[b].score; });
    std::size_t hits = 0;
    double acc = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r) {
        if (!ranked[order[r]].positive) continue;
        ++hits;
        acc += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
    if (hits == 0) return std::nullopt;
    return acc / static_cast<double>(hits);
}

struct MeanAp {
    double value = 0.0;
    std::size_t defined = 0;
    std::size_t undefined = 0;
};

inline MeanAp mean_ap(std::span<const std::optional<double>> per_category) {
    MeanAp m;
    for (const auto& ap : per_category) {
        if (ap) {
            m.value += *ap;
            ++m.defined;
        } else {
            ++m.undefined;
        }
    }
    if (m.defined == 0) throw std::domain_error("mean_ap: no category has a defined AP");
    m.value /= static_cast<double>(m.defined);
    return m;
}

/// N x K probabilities with matching multi-hot labels, row-major.
struct Predictions {
    std::size_t samples = 0;
    std::size_t classes = 0;
    std::vector<double> probs;
    std::vector<std::uint8_t> labels;

    double prob(std::size_t n, std::size_t k) const { return probs[n * classes + k]; }
    bool label(std::size_t n, std::size_t k) const { return labels[n * classes + k] != 0; }

    void validate() const {
        if (probs.size() != samples * classes || labels.size() != samples * classes)
            throw std::invalid_argument("predictions: table sizes do not match " + std::to_string(samples) + "x" +
                                        std::to_string(classes));
    }
};

/// Per-category AP over all samples, or over the samples whose entry in
/// `include` (N x K, nonzero = evaluated) is set.
inline std::vector<std::optional<double>> per_category_ap(const Predictions& p,
                                                          const std::vector<std::uint8_t>* include = nullptr) {
    p.validate();
    if (include && include->size() != p.samples * p.classes)
        throw std::invalid_argument("per_category_ap: mask size mismatch");
    std::vector<std::optional<double>> out(p.classes);
    std::vector<ScoredLabel> column;
    for (std::size_t k = 0; k < p.classes; ++k) {
        column.clear();
        for (std::size_t n = 0; n < p.samples; ++n)
            if (!include || (*include)[n * p.classes + k]) column.push_back({p.prob(n, k), p.label(n, k)});
        out[k] = average_precision(column);
    }
    return out;
}

struct EvalCounters {
    std::vector<std::size_t> correct;    // M_c: true positives per category
    std::vector<std::size_t> predicted;  // M_p: predicted positives per category
    std::vector<std::size_t> truth;      // M_g: ground-truth positives per category
};

struct ThresholdMode {
    double threshold = 0.5;
};
struct TopKMode {
    std::size_t k = 3;
};
using EvalMode = std::variant<ThresholdMode, TopKMode>;

struct ThresholdReport {
    double overall_precision = 0, overall_recall = 0, overall_f1 = 0;
    double class_precision = 0, class_recall = 0, class_f1 = 0;
    EvalCounters counters;
    std::size_t categories_without_predictions = 0;  // contribute precision 0 to CP
    std::size_t categories_without_truth = 0;        // contribute recall 0 to CR
};

inline double harmonic_mean(double a, double b) { return a + b > 0 ? 2.0 * a * b / (a + b) : 0.0; }

/// OP/OR/OF1 and CP/CR/CF1 from per-category counters.
inline ThresholdReport summarize_counters(EvalCounters c) {
    const std::size_t classes = c.correct.size();
    if (classes == 0 || c.predicted.size() != classes || c.truth.size() != classes)
        throw std::invalid_argument("summarize_counters: inconsistent counter lengths");
    ThresholdReport r;
    std::size_t sc = 0, sp = 0, sg = 0;
    double cp = 0, cr = 0;
    for (std::size_t i = 0; i < classes; ++i) {
        if (c.correct[i] > std::min(c.predicted[i], c.truth[i]))
            throw std::invalid_argument("summarize_counters: M_c exceeds M_p or M_g");
        sc += c.correct[i];
        sp += c.predicted[i];
        sg += c.truth[i];
        if (c.predicted[i] > 0)
            cp += static_cast<double>(c.correct[i]) / static_cast<double>(c.predicted[i]);
        else
            ++r.categories_without_predictions;
        if (c.truth[i] > 0)
            cr += static_cast<double>(c.correct[i]) / static_cast<double>(c.truth[i]);
        else
            ++r.categories_without_truth;
    }
    r.overall_precision = sp > 0 ? static_cast<double>(sc) / static_cast<double>(sp) : 0.0;
    r.overall_recall = sg > 0 ? static_cast<double>(sc) / static_cast<double>(sg) : 0.0;
    r.overall_f1 = harmonic_mean(r.overall_precision, r.overall_recall);
    r.class_precision = cp / static_cast<double>(classes);
    r.class_recall = cr / static_cast<double>(classes);
    r.class_f1 = harmonic_mean(r.class_precision, r.class_recall);
    r.counters = std::move(c);
    return r;
}

/// Binarizes predictions (p > threshold, or the k highest-scoring categories
/// per sample with ties broken by lower category index) and reports the
/// overall and per-category precision/recall/F1 suite.
inline ThresholdReport threshold_metrics(const Predictions& p, const EvalMode& mode) {
    p.validate();
    if (p.classes == 0) throw std::invalid_argument("threshold_metrics: no categories");
    if (const auto* t = std::get_if<ThresholdMode>(&mode); t && !(t->threshold > 0.0 && t->threshold < 1.0))
        throw std::invalid_argument("threshold_metrics: threshold must lie in (0, 1)");
    if (const auto* t = std::get_if<TopKMode>(&mode); t && (t->k < 1 || t->k > p.classes))
        throw std::invalid_argument("threshold_metrics: top-k must lie in [1, K]");

    EvalCounters c{std::vector<std::size_t>(p.classes, 0), std::vector<std::size_t>(p.classes, 0),
                   std::vector<std::size_t>(p.classes, 0)};
    std::vector<std::uint8_t> pred(p.classes);
    std::vector<std::size_t> order(p.classes);
    for (std::size_t n = 0; n < p.samples; ++n) {
        if (const auto* t = std::get_if<ThresholdMode>(&mode)) {
            for (std::size_t k = 0; k < p.classes; ++k) pred[k] = p.prob(n, k) > t->threshold;
        } else {
            const std::size_t top = std::get<TopKMode>(mode).k;
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::stable_sort(order.begin(), order.end(),
                             [&](std::size_t a, std::size_t b) { return p.prob(n, a) > p.prob(n, b); });
            std::fill(pred.begin(), pred.end(), 0);
            for (std::size_t i = 0; i < top; ++i) pred[order[i]] = 1;
        }
        for (std::size_t k = 0; k < p.classes; ++k) {
            const bool truth = p.label(n, k);
            c.predicted[k] += pred[k];
            c.truth[k] += truth;
            c.correct[k] += (pred[k] && truth);
        }
    }
    return summarize_counters(std::move(c));
}

}  // namespace q2l
