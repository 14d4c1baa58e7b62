#pragma once

// Prediction files and evaluation reports.

#include <json.hpp>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "q2l/data/size_buckets.hpp"
#include "q2l/metrics.hpp"

namespace q2l::app {

/// Category indices predicted positive for one sample under `mode`.
inline std::vector<std::size_t> predicted_labels(std::span<const double> probs, const EvalMode& mode) {
    std::vector<std::size_t> out;
    if (const auto* t = std::get_if<ThresholdMode>(&mode)) {
        for (std::size_t k = 0; k < probs.size(); ++k)
            if (probs[k] > t->threshold) out.push_back(k);
        return out;
    }
    const std::size_t top = std::get<TopKMode>(mode).k;
    std::vector<std::size_t> idx(probs.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
    idx.resize(std::min(top, idx.size()));
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// One JSON object per line: {"id", "probs", "predicted"}.
inline void write_predictions(const std::filesystem::path& path, const std::vector<std::size_t>& ids,
                              const Predictions& p, const EvalMode& mode) {
    p.validate();
    if (ids.size() != p.samples) throw std::invalid_argument("write_predictions: id count mismatch");
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    for (std::size_t n = 0; n < p.samples; ++n) {
        const std::span<const double> row(p.probs.data() + n * p.classes, p.classes);
        nlohmann::ordered_json j;
        j["id"] = ids[n];
        j["probs"] = std::vector<double>(row.begin(), row.end());
        j["predicted"] = predicted_labels(row, mode);
        os << j.dump() << '\n';
    }
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

/// Reads a predictions file and aligns it with `samples` by id. Every sample
/// needs exactly one line.
inline Predictions read_predictions(const std::filesystem::path& path, std::span<const data::SampleRecord> samples,
                                    std::size_t classes) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open predictions file " + path.string());
    std::map<std::size_t, std::size_t> row_of;
    for (std::size_t n = 0; n < samples.size(); ++n) row_of[samples[n].id] = n;
    Predictions p{samples.size(), classes, std::vector<double>(samples.size() * classes),
                  std::vector<std::uint8_t>(samples.size() * classes)};
    std::vector<std::uint8_t> seen(samples.size(), 0);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(line_no);
        std::size_t id = 0;
        std::vector<double> probs;
        try {
            const auto j = nlohmann::json::parse(line);
            id = j.at("id").get<std::size_t>();
            probs = j.at("probs").get<std::vector<double>>();
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(where + ": " + e.what());
        }
        const auto it = row_of.find(id);
        if (it == row_of.end()) throw std::runtime_error(where + ": unknown sample id " + std::to_string(id));
        if (seen[it->second]) throw std::runtime_error(where + ": duplicate sample id " + std::to_string(id));
        if (probs.size() != classes)
            throw std::runtime_error(where + ": expected " + std::to_string(classes) + " probabilities, got " +
                                     std::to_string(probs.size()));
        seen[it->second] = 1;
        std::copy(probs.begin(), probs.end(), p.probs.begin() + static_cast<std::ptrdiff_t>(it->second * classes));
    }
    for (std::size_t n = 0; n < samples.size(); ++n) {
        if (!seen[n])
            throw std::runtime_error(path.string() + ": no prediction for sample id " + std::to_string(samples[n].id));
        for (std::size_t k = 0; k < classes; ++k) p.labels[n * classes + k] = samples[n].labels.at(k);
    }
    return p;
}

struct BucketResult {
    std::array<double, 3> map{};  // NaN when no category is defined in the bucket
    std::array<std::size_t, 3> positive_pairs{};
    std::size_t total_positive_pairs = 0;
    double small_medium_map = 0;
};

struct EvalReport {
    std::vector<std::optional<double>> ap;
    std::vector<std::size_t> positives;
    MeanAp map;
    double threshold = 0.5;
    ThresholdReport at_threshold;
    std::optional<std::size_t> top_k;
    ThresholdReport at_top_k;
    std::optional<BucketResult> buckets;
};

inline double map_or_nan(const std::vector<std::optional<double>>& aps) {
    for (const auto& a : aps)
        if (a) return mean_ap(aps).value;
    return std::nan("");
}

inline BucketResult bucket_metrics(const Predictions& p, const data::BucketViews& v) {
    BucketResult r;
    for (std::size_t b = 0; b < 3; ++b) {
        r.map[b] = map_or_nan(per_category_ap(p, &v.include[b]));
        r.positive_pairs[b] = v.positive_pairs[b];
    }
    r.total_positive_pairs = v.total_positive_pairs;
    const auto sm = v.combined({data::SizeBucket::small, data::SizeBucket::medium});
    r.small_medium_map = map_or_nan(per_category_ap(p, &sm));
    return r;
}

inline EvalReport evaluate(const Predictions& p, double threshold, std::optional<std::size_t> top_k,
                           const data::BucketViews* views = nullptr) {
    EvalReport r;
    r.ap = per_category_ap(p);
    r.positives.assign(p.classes, 0);
    for (std::size_t n = 0; n < p.samples; ++n)
        for (std::size_t k = 0; k < p.classes; ++k) r.positives[k] += p.label(n, k);
    r.map = mean_ap(r.ap);
    r.threshold = threshold;
    r.at_threshold = threshold_metrics(p, ThresholdMode{threshold});
    if (top_k) {
        r.top_k = top_k;
        r.at_top_k = threshold_metrics(p, TopKMode{*top_k});
    }
    if (views) r.buckets = bucket_metrics(p, *views);
    return r;
}

inline void put_suite(std::ostream& os, const std::string& prefix, const ThresholdReport& t) {
    os << prefix << "CP=" << t.class_precision << '\n'
       << prefix << "CR=" << t.class_recall << '\n'
       << prefix << "CF1=" << t.class_f1 << '\n'
       << prefix << "OP=" << t.overall_precision << '\n'
       << prefix << "OR=" << t.overall_recall << '\n'
       << prefix << "OF1=" << t.overall_f1 << '\n';
}

/// key=value lines, fixed order.
inline std::string format_report(const EvalReport& r, std::size_t samples) {
    std::ostringstream os;
    os << std::setprecision(6) << std::fixed;
    os << "samples=" << samples << '\n'
       << "classes=" << r.ap.size() << '\n'
       << "mAP=" << r.map.value << '\n'
       << "undefined_ap=" << r.map.undefined << '\n'
       << "threshold=" << r.threshold << '\n';
    put_suite(os, "", r.at_threshold);
    if (r.top_k) {
        os << "top_k=" << *r.top_k << '\n';
        put_suite(os, "top" + std::to_string(*r.top_k) + "_", r.at_top_k);
    }
    if (r.buckets) {
        static constexpr std::array<const char*, 3> names{"small", "medium", "large"};
        for (std::size_t b = 0; b < 3; ++b) os << "mAP_" << names[b] << '=' << r.buckets->map[b] << '\n';
        os << "mAP_small_medium=" << r.buckets->small_medium_map << '\n';
        for (std::size_t b = 0; b < 3; ++b)
            os << "positives_" << names[b] << '=' << r.buckets->positive_pairs[b] << '\n';
        os << "positives_total=" << r.buckets->total_positive_pairs << '\n';
    }
    return os.str();
}

/// category,ap,positives; undefined AP is written as nan.
inline std::string format_ap_csv(const EvalReport& r) {
    std::ostringstream os;
    os << std::setprecision(6) << std::fixed << "category,ap,positives\n";
    for (std::size_t k = 0; k < r.ap.size(); ++k) {
        os << k << ',';
        if (r.ap[k])
            os << *r.ap[k];
        else
            os << "nan";
        os << ',' << r.positives[k] << '\n';
    }
    return os.str();
}

/// Parses key=value lines back into a map.
inline std::map<std::string, std::string> parse_report(std::istream& is) {
    std::map<std::string, std::string> out;
    std::string line;
    while (std::getline(is, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        out[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return out;
}

}  // namespace q2l::app
