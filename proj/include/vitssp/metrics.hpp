#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vitssp/error.hpp"

namespace vitssp {

struct RocPoint {
    double fpr = 0.0, tpr = 0.0;
};

struct MacroScores {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::vector<double> per_class_precision, per_class_recall, per_class_f1;
};

struct AucResult {
    std::vector<double> per_class;  // 0 placeholder where !defined
    std::vector<bool> defined;
    double mauc = 0.0;
    std::vector<std::vector<RocPoint>> roc;  // per class, (0,0) .. (1,1)
    std::vector<std::string> warnings;
};

struct MetricsReport {
    int64_t k = 0;
    int64_t n = 0;
    std::vector<int64_t> confusion;  // [k, k]; rows true, cols predicted
    MacroScores scores;
    AucResult auc;
};

// Entry (i,j) counts samples with true class i predicted j.
std::vector<int64_t> confusion_matrix(const std::vector<int>& labels,
                                      const std::vector<int>& preds, int64_t k);

// Accuracy = trace/total; per-class precision/recall from columns/rows; macro
// means are unweighted; every 0/0 is defined as 0.
MacroScores macro_scores(const std::vector<int64_t>& confusion, int64_t k);

// One-vs-rest AUC per class from the rank statistic with half credit for
// ties, plus the tie-grouped ROC polyline whose trapezoid integral equals the
// rank value. Classes absent from `labels` are excluded from the mean.
AucResult roc_auc_ovr(const std::vector<double>& scores, int64_t n, int64_t k,
                      const std::vector<int>& labels);

MetricsReport compute_report(const std::vector<double>& scores, int64_t n, int64_t k,
                             const std::vector<int>& labels);

std::string report_json(const MetricsReport& report);
// Header plus the run row and a fixed literature reference row; columns
// mAUC, Accuracy, Precision, F1-Score, Recall.
std::string report_csv(const MetricsReport& report);
std::string roc_points_csv(const MetricsReport& report);
std::string confusion_csv(const MetricsReport& report);

}  // namespace vitssp
