#include "vitssp/metrics.hpp"

#include <algorithm>
#include <cstdio>

#include "json.hpp"

namespace vitssp {

std::vector<int64_t> confusion_matrix(const std::vector<int>& labels,
                                      const std::vector<int>& preds, int64_t k) {
    if (labels.size() != preds.size())
        throw ShapeError("confusion: " + std::to_string(labels.size()) + " labels vs " +
                         std::to_string(preds.size()) + " predictions");
    std::vector<int64_t> m(static_cast<size_t>(k * k), 0);
    for (size_t i = 0; i < labels.size(); ++i) {
        const int t = labels[i], p = preds[i];
        if (t < 0 || t >= k)
            throw DataError("confusion: label " + std::to_string(t) + " at index " +
                            std::to_string(i) + " out of range");
        if (p < 0 || p >= k)
            throw DataError("confusion: prediction " + std::to_string(p) + " at index " +
                            std::to_string(i) + " out of range");
        m[static_cast<size_t>(t * k + p)]++;
    }
    return m;
}

namespace {
double safe_div(double num, double den) { return den == 0.0 ? 0.0 : num / den; }
}  // namespace

MacroScores macro_scores(const std::vector<int64_t>& confusion, int64_t k) {
    if (static_cast<int64_t>(confusion.size()) != k * k)
        throw ShapeError("macro_scores: matrix is not " + std::to_string(k) + "x" +
                         std::to_string(k));
    MacroScores s;
    int64_t total = 0, trace = 0;
    for (int64_t i = 0; i < k; ++i) {
        for (int64_t j = 0; j < k; ++j) total += confusion[static_cast<size_t>(i * k + j)];
        trace += confusion[static_cast<size_t>(i * k + i)];
    }
    s.accuracy = safe_div(static_cast<double>(trace), static_cast<double>(total));
    for (int64_t c = 0; c < k; ++c) {
        int64_t col = 0, row = 0;
        for (int64_t i = 0; i < k; ++i) {
            col += confusion[static_cast<size_t>(i * k + c)];
            row += confusion[static_cast<size_t>(c * k + i)];
        }
        const double diag = static_cast<double>(confusion[static_cast<size_t>(c * k + c)]);
        const double p = safe_div(diag, static_cast<double>(col));
        const double r = safe_div(diag, static_cast<double>(row));
        s.per_class_precision.push_back(p);
        s.per_class_recall.push_back(r);
        s.per_class_f1.push_back(safe_div(2.0 * p * r, p + r));
    }
    for (int64_t c = 0; c < k; ++c) {
        s.precision += s.per_class_precision[static_cast<size_t>(c)];
        s.recall += s.per_class_recall[static_cast<size_t>(c)];
        s.f1 += s.per_class_f1[static_cast<size_t>(c)];
    }
    s.precision /= static_cast<double>(k);
    s.recall /= static_cast<double>(k);
    s.f1 /= static_cast<double>(k);
    return s;
}

AucResult roc_auc_ovr(const std::vector<double>& scores, int64_t n, int64_t k,
                      const std::vector<int>& labels) {
    if (static_cast<int64_t>(scores.size()) != n * k)
        throw ShapeError("auc: score matrix is not [n,k]");
    if (static_cast<int64_t>(labels.size()) != n) throw ShapeError("auc: label count");
    AucResult res;
    res.per_class.assign(static_cast<size_t>(k), 0.0);
    res.defined.assign(static_cast<size_t>(k), false);
    res.roc.resize(static_cast<size_t>(k));
    double sum = 0.0;
    int64_t defined = 0;
    for (int64_t c = 0; c < k; ++c) {
        int64_t pos = 0;
        for (const int l : labels) pos += l == c ? 1 : 0;
        const int64_t neg = n - pos;
        if (pos == 0 || neg == 0) {
            res.warnings.push_back("class " + std::to_string(c) +
                                   (pos == 0 ? " absent from labels" : " is every label") +
                                   "; AUC undefined, excluded from mAUC");
            res.roc[static_cast<size_t>(c)] = {{0.0, 0.0}, {1.0, 1.0}};
            continue;
        }
        // Sort one-vs-rest scores descending and sweep tie groups; each group
        // contributes a single ROC vertex, and wins + half-ties accumulate
        // the Mann-Whitney statistic.
        std::vector<std::pair<double, int>> rows(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i)
            rows[static_cast<size_t>(i)] = {scores[static_cast<size_t>(i * k + c)],
                                            labels[static_cast<size_t>(i)] == c ? 1 : 0};
        std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second > b.second;
        });
        auto& curve = res.roc[static_cast<size_t>(c)];
        curve.push_back({0.0, 0.0});
        double u = 0.0;
        int64_t seen_pos = 0, seen_neg = 0;
        size_t i = 0;
        while (i < rows.size()) {
            size_t j = i;
            int64_t gp = 0, gn = 0;
            while (j < rows.size() && rows[j].first == rows[i].first) {
                gp += rows[j].second;
                gn += 1 - rows[j].second;
                ++j;
            }
            // positives in this group beat all negatives below, tie with the
            // group's negatives
            u += static_cast<double>(gp) *
                     (static_cast<double>(neg - seen_neg - gn)) +
                 0.5 * static_cast<double>(gp) * static_cast<double>(gn);
            seen_pos += gp;
            seen_neg += gn;
            curve.push_back({static_cast<double>(seen_neg) / static_cast<double>(neg),
                             static_cast<double>(seen_pos) / static_cast<double>(pos)});
            i = j;
        }
        const double auc = u / (static_cast<double>(pos) * static_cast<double>(neg));
        res.per_class[static_cast<size_t>(c)] = auc;
        res.defined[static_cast<size_t>(c)] = true;
        sum += auc;
        ++defined;
    }
    res.mauc = defined > 0 ? sum / static_cast<double>(defined) : 0.0;
    return res;
}

MetricsReport compute_report(const std::vector<double>& scores, int64_t n, int64_t k,
                             const std::vector<int>& labels) {
    MetricsReport report;
    report.k = k;
    report.n = n;
    std::vector<int> preds(static_cast<size_t>(n), 0);
    for (int64_t i = 0; i < n; ++i) {
        int best = 0;
        for (int64_t c = 1; c < k; ++c)
            if (scores[static_cast<size_t>(i * k + c)] >
                scores[static_cast<size_t>(i * k + best)])
                best = static_cast<int>(c);
        preds[static_cast<size_t>(i)] = best;
    }
    report.confusion = confusion_matrix(labels, preds, k);
    report.scores = macro_scores(report.confusion, k);
    report.auc = roc_auc_ovr(scores, n, k, labels);
    return report;
}

std::string report_json(const MetricsReport& report) {
    nlohmann::json j;
    j["classes"] = report.k;
    j["samples"] = report.n;
    nlohmann::json conf = nlohmann::json::array();
    for (int64_t i = 0; i < report.k; ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int64_t c = 0; c < report.k; ++c)
            row.push_back(report.confusion[static_cast<size_t>(i * report.k + c)]);
        conf.push_back(row);
    }
    j["confusion"] = conf;
    j["accuracy"] = report.scores.accuracy;
    j["macro_precision"] = report.scores.precision;
    j["macro_recall"] = report.scores.recall;
    j["macro_f1"] = report.scores.f1;
    j["mauc"] = report.auc.mauc;
    nlohmann::json per_class = nlohmann::json::array();
    for (int64_t c = 0; c < report.k; ++c) {
        nlohmann::json e;
        e["class"] = c;
        e["defined"] = static_cast<bool>(report.auc.defined[static_cast<size_t>(c)]);
        e["auc"] = report.auc.per_class[static_cast<size_t>(c)];
        nlohmann::json pts = nlohmann::json::array();
        for (const auto& pt : report.auc.roc[static_cast<size_t>(c)])
            pts.push_back({pt.fpr, pt.tpr});
        e["roc"] = pts;
        per_class.push_back(e);
    }
    j["per_class"] = per_class;
    j["warnings"] = report.auc.warnings;
    return j.dump(2) + "\n";
}

namespace {
std::string fmt6(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}
}  // namespace

std::string report_csv(const MetricsReport& report) {
    std::string out = "model,mAUC,Accuracy,Precision,F1-Score,Recall\n";
    out += "this_run," + fmt6(report.auc.mauc) + "," + fmt6(report.scores.accuracy) +
           "," + fmt6(report.scores.precision) + "," + fmt6(report.scores.f1) + "," +
           fmt6(report.scores.recall) + "\n";
    // Static literature baseline row, for eyeballing only; never computed.
    out += "reference,0.930,0.77,0.81,0.76,0.75\n";
    return out;
}

std::string roc_points_csv(const MetricsReport& report) {
    std::string out = "class,fpr,tpr\n";
    for (int64_t c = 0; c < report.k; ++c)
        for (const auto& pt : report.auc.roc[static_cast<size_t>(c)])
            out += std::to_string(c) + "," + fmt6(pt.fpr) + "," + fmt6(pt.tpr) + "\n";
    return out;
}

std::string confusion_csv(const MetricsReport& report) {
    std::string out = "true\\pred";
    for (int64_t c = 0; c < report.k; ++c) out += "," + std::to_string(c);
    out += "\n";
    for (int64_t i = 0; i < report.k; ++i) {
        out += std::to_string(i);
        for (int64_t c = 0; c < report.k; ++c)
            out += "," + std::to_string(report.confusion[static_cast<size_t>(i * report.k + c)]);
        out += "\n";
    }
    return out;
}

}  // namespace vitssp
