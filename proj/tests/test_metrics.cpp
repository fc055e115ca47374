#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"
#include "vitssp/metrics.hpp"
#include "vitssp/rng.hpp"

using namespace vitssp;

namespace {

double trapezoid(const std::vector<RocPoint>& curve) {
    double area = 0.0;
    for (size_t i = 1; i < curve.size(); ++i)
        area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) / 2.0;
    return area;
}

std::vector<std::string> split_lines(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string line;
    while (std::getline(ss, line)) out.push_back(line);
    return out;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
}

}  // namespace

TEST_CASE("confusion matrix counts true rows against predicted columns") {
    const auto ident = confusion_matrix({0, 1, 2, 2}, {0, 1, 2, 2}, 3);
    CHECK(ident == std::vector<int64_t>{1, 0, 0, 0, 1, 0, 0, 0, 2});

    const auto m = confusion_matrix({0, 1, 2, 2}, {0, 1, 1, 2}, 3);
    CHECK(m == std::vector<int64_t>{1, 0, 0, 0, 1, 0, 0, 1, 1});

    CHECK(confusion_matrix({}, {}, 2) == std::vector<int64_t>{0, 0, 0, 0});

    CHECK_THROWS_AS(confusion_matrix({0, 1}, {0}, 2), ShapeError);
    try {
        confusion_matrix({0, 3}, {0, 0}, 2);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("label 3") != std::string::npos);
        CHECK(msg.find("index 1") != std::string::npos);
    }
    CHECK_THROWS_AS(confusion_matrix({0, 0}, {0, -1}, 2), DataError);
}

TEST_CASE("macro scores match the hand-worked example") {
    const auto m = confusion_matrix({0, 1, 2, 2}, {0, 1, 1, 2}, 3);
    const MacroScores s = macro_scores(m, 3);
    CHECK(s.accuracy == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(s.precision == doctest::Approx((1.0 + 0.5 + 1.0) / 3.0).epsilon(1e-12));
    CHECK(s.recall == doctest::Approx((1.0 + 1.0 + 0.5) / 3.0).epsilon(1e-12));
    CHECK(s.f1 == doctest::Approx((1.0 + 2.0 / 3.0 + 2.0 / 3.0) / 3.0).epsilon(1e-12));
    CHECK(s.per_class_precision == std::vector<double>{1.0, 0.5, 1.0});
    CHECK(s.per_class_recall == std::vector<double>{1.0, 1.0, 0.5});
}

TEST_CASE("macro scores: perfect prediction and empty denominators") {
    const MacroScores perfect = macro_scores({5, 0, 0, 7}, 2);
    CHECK(perfect.accuracy == 1.0);
    CHECK(perfect.precision == 1.0);
    CHECK(perfect.recall == 1.0);
    CHECK(perfect.f1 == 1.0);

    // Everything predicted as class 1, no true class-1 rows: every 0/0 is 0.
    const MacroScores degenerate = macro_scores({0, 2, 0, 0}, 2);
    CHECK(degenerate.accuracy == 0.0);
    CHECK(degenerate.per_class_precision == std::vector<double>{0.0, 0.0});
    CHECK(degenerate.per_class_recall == std::vector<double>{0.0, 0.0});
    CHECK(degenerate.f1 == 0.0);

    CHECK_THROWS_AS(macro_scores({1, 2, 3}, 2), ShapeError);
}

TEST_CASE("auc extremes: perfect separation, reversal, and all ties") {
    // Column 1 is the positive-class score; class 1 rows always score higher.
    const std::vector<double> scores = {0.9, 0.1, 0.8, 0.2, 0.3, 0.7, 0.4, 0.6};
    const std::vector<int> labels = {0, 0, 1, 1};
    const AucResult res = roc_auc_ovr(scores, 4, 2, labels);
    CHECK(res.per_class[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(res.per_class[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(res.mauc == doctest::Approx(1.0).epsilon(1e-12));

    const std::vector<int> swapped = {1, 1, 0, 0};
    const AucResult rev = roc_auc_ovr(scores, 4, 2, swapped);
    CHECK(rev.mauc == doctest::Approx(0.0).epsilon(1e-12));

    const std::vector<double> flat(4 * 2, 0.25);
    const AucResult ties = roc_auc_ovr(flat, 4, 2, labels);
    CHECK(ties.per_class[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(ties.per_class[1] == doctest::Approx(0.5).epsilon(1e-12));

    CHECK_THROWS_AS(roc_auc_ovr(scores, 3, 2, labels), ShapeError);
    CHECK_THROWS_AS(roc_auc_ovr(scores, 4, 2, {0, 1}), ShapeError);
}

TEST_CASE("auc agrees with exhaustive pair counting on 1000 random instances") {
    Rng rng(2024);
    for (int trial = 0; trial < 1000; ++trial) {
        const int64_t n = 2 + rng.uniform_int(7);  // 2..8 samples
        const int64_t k = 2 + rng.uniform_int(3);  // 2..4 classes
        std::vector<double> scores(static_cast<size_t>(n * k));
        // Coarse quantization forces frequent ties.
        for (auto& s : scores) s = static_cast<double>(rng.uniform_int(4)) / 4.0;
        std::vector<int> labels(static_cast<size_t>(n));
        for (auto& l : labels) l = static_cast<int>(rng.uniform_int(k));

        const AucResult res = roc_auc_ovr(scores, n, k, labels);
        for (int64_t c = 0; c < k; ++c) {
            int64_t pos = 0;
            for (const int l : labels) pos += l == c ? 1 : 0;
            if (pos == 0 || pos == n) {
                CHECK_FALSE(res.defined[static_cast<size_t>(c)]);
                continue;
            }
            std::vector<double> col(static_cast<size_t>(n));
            std::vector<int> is_pos(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) {
                col[static_cast<size_t>(i)] = scores[static_cast<size_t>(i * k + c)];
                is_pos[static_cast<size_t>(i)] = labels[static_cast<size_t>(i)] == c;
            }
            const double want = oracles::auc_pairwise(col, is_pos);
            CHECK(res.per_class[static_cast<size_t>(c)] ==
                  doctest::Approx(want).epsilon(1e-12));
            // The tie-grouped ROC polyline integrates to the same value.
            const auto& curve = res.roc[static_cast<size_t>(c)];
            CHECK(curve.front().fpr == 0.0);
            CHECK(curve.front().tpr == 0.0);
            CHECK(curve.back().fpr == 1.0);
            CHECK(curve.back().tpr == 1.0);
            CHECK(trapezoid(curve) ==
                  doctest::Approx(res.per_class[static_cast<size_t>(c)]).epsilon(1e-9));
        }
    }
}

TEST_CASE("auc is invariant under strictly increasing score transforms") {
    Rng rng(91);
    const int64_t n = 40, k = 3;
    std::vector<double> scores(static_cast<size_t>(n * k));
    for (auto& s : scores) s = rng.uniform();
    std::vector<int> labels(static_cast<size_t>(n));
    for (auto& l : labels) l = static_cast<int>(rng.uniform_int(k));

    const AucResult base = roc_auc_ovr(scores, n, k, labels);

    std::vector<double> exp_scores = scores, affine_scores = scores;
    for (auto& s : exp_scores) s = std::exp(s);
    for (auto& s : affine_scores) s = 3.0 * s + 7.0;
    const AucResult via_exp = roc_auc_ovr(exp_scores, n, k, labels);
    const AucResult via_affine = roc_auc_ovr(affine_scores, n, k, labels);
    for (int64_t c = 0; c < k; ++c) {
        CHECK(via_exp.per_class[static_cast<size_t>(c)] ==
              doctest::Approx(base.per_class[static_cast<size_t>(c)]).epsilon(1e-12));
        CHECK(via_affine.per_class[static_cast<size_t>(c)] ==
              doctest::Approx(base.per_class[static_cast<size_t>(c)]).epsilon(1e-12));
    }
}

TEST_CASE("auc respects class relabeling") {
    Rng rng(17);
    const int64_t n = 30, k = 3;
    std::vector<double> scores(static_cast<size_t>(n * k));
    for (auto& s : scores) s = rng.uniform();
    std::vector<int> labels(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) labels[static_cast<size_t>(i)] = static_cast<int>(i % k);

    const int perm[3] = {2, 0, 1};  // class c becomes perm[c]
    std::vector<double> pscores(static_cast<size_t>(n * k));
    std::vector<int> plabels(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        plabels[static_cast<size_t>(i)] = perm[labels[static_cast<size_t>(i)]];
        for (int64_t c = 0; c < k; ++c)
            pscores[static_cast<size_t>(i * k + perm[c])] =
                scores[static_cast<size_t>(i * k + c)];
    }
    const AucResult base = roc_auc_ovr(scores, n, k, labels);
    const AucResult perm_res = roc_auc_ovr(pscores, n, k, plabels);
    for (int64_t c = 0; c < k; ++c)
        CHECK(perm_res.per_class[static_cast<size_t>(perm[c])] ==
              doctest::Approx(base.per_class[static_cast<size_t>(c)]).epsilon(1e-12));
    CHECK(perm_res.mauc == doctest::Approx(base.mauc).epsilon(1e-12));
}

TEST_CASE("absent classes are excluded from the mean with a warning") {
    const std::vector<double> scores = {0.9, 0.05, 0.05, 0.2, 0.7, 0.1,
                                        0.3, 0.6, 0.1, 0.8, 0.1, 0.1};
    const std::vector<int> labels = {0, 1, 1, 0};  // class 2 never appears
    const AucResult res = roc_auc_ovr(scores, 4, 3, labels);
    CHECK_FALSE(res.defined[2]);
    CHECK(res.defined[0]);
    CHECK(res.defined[1]);
    REQUIRE(res.warnings.size() == 1);
    CHECK(res.warnings[0].find("class 2") != std::string::npos);
    CHECK(res.mauc == doctest::Approx((res.per_class[0] + res.per_class[1]) / 2.0)
                          .epsilon(1e-12));
    // Placeholder curve still spans the unit square.
    CHECK(res.roc[2].front().fpr == 0.0);
    CHECK(res.roc[2].back().tpr == 1.0);
}

TEST_CASE("compute_report takes argmax predictions with first-index ties") {
    const std::vector<double> scores = {0.5, 0.3, 0.2,   // -> 0
                                        0.2, 0.2, 0.6,   // -> 2
                                        0.4, 0.4, 0.2,   // tie: -> 0
                                        0.1, 0.8, 0.1};  // -> 1
    const std::vector<int> labels = {0, 2, 0, 1};
    const MetricsReport report = compute_report(scores, 4, 3, labels);
    CHECK(report.n == 4);
    CHECK(report.k == 3);
    CHECK(report.scores.accuracy == 1.0);

    // Confusion row sums recover the true class counts.
    std::vector<int64_t> row_sums(3, 0);
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t j = 0; j < 3; ++j)
            row_sums[static_cast<size_t>(i)] +=
                report.confusion[static_cast<size_t>(i * 3 + j)];
    CHECK(row_sums == std::vector<int64_t>{2, 1, 1});
}

TEST_CASE("report csv carries the fixed column order and reference row") {
    Rng rng(5);
    const int64_t n = 20, k = 4;
    std::vector<double> scores(static_cast<size_t>(n * k));
    for (auto& s : scores) s = rng.uniform();
    std::vector<int> labels(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) labels[static_cast<size_t>(i)] = static_cast<int>(i % k);
    const MetricsReport report = compute_report(scores, n, k, labels);

    const std::string csv = report_csv(report);
    const auto lines = split_lines(csv);
    REQUIRE(lines.size() == 3);
    CHECK(lines[0] == "model,mAUC,Accuracy,Precision,F1-Score,Recall");
    CHECK(lines[2] == "reference,0.930,0.77,0.81,0.76,0.75");

    const auto cells = split_csv(lines[1]);
    REQUIRE(cells.size() == 6);
    CHECK(cells[0] == "this_run");
    CHECK(std::stod(cells[1]) == doctest::Approx(report.auc.mauc).epsilon(1e-5));
    CHECK(std::stod(cells[2]) == doctest::Approx(report.scores.accuracy).epsilon(1e-5));
    CHECK(std::stod(cells[3]) == doctest::Approx(report.scores.precision).epsilon(1e-5));
    CHECK(std::stod(cells[4]) == doctest::Approx(report.scores.f1).epsilon(1e-5));
    CHECK(std::stod(cells[5]) == doctest::Approx(report.scores.recall).epsilon(1e-5));
}

TEST_CASE("report json parses and mirrors the computed values") {
    Rng rng(6);
    const int64_t n = 12, k = 3;
    std::vector<double> scores(static_cast<size_t>(n * k));
    for (auto& s : scores) s = rng.uniform();
    std::vector<int> labels(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) labels[static_cast<size_t>(i)] = static_cast<int>(i % k);
    const MetricsReport report = compute_report(scores, n, k, labels);

    const nlohmann::json j = nlohmann::json::parse(report_json(report));
    CHECK(j["classes"].get<int64_t>() == k);
    CHECK(j["samples"].get<int64_t>() == n);
    CHECK(j["accuracy"].get<double>() == doctest::Approx(report.scores.accuracy));
    CHECK(j["mauc"].get<double>() == doctest::Approx(report.auc.mauc));
    CHECK(j["confusion"].size() == static_cast<size_t>(k));
    CHECK(j["confusion"][0].size() == static_cast<size_t>(k));
    CHECK(j["per_class"].size() == static_cast<size_t>(k));
    for (int64_t c = 0; c < k; ++c) {
        CHECK(j["per_class"][static_cast<size_t>(c)]["defined"].get<bool>());
        CHECK(j["per_class"][static_cast<size_t>(c)]["auc"].get<double>() ==
              doctest::Approx(report.auc.per_class[static_cast<size_t>(c)]));
    }

    const std::string conf_csv = confusion_csv(report);
    const auto conf_lines = split_lines(conf_csv);
    REQUIRE(conf_lines.size() == static_cast<size_t>(k + 1));
    CHECK(conf_lines[0].rfind("true\\pred", 0) == 0);

    const auto roc_lines = split_lines(roc_points_csv(report));
    size_t expect = 1;
    for (const auto& curve : report.auc.roc) expect += curve.size();
    CHECK(roc_lines.size() == expect);
    CHECK(roc_lines[0] == "class,fpr,tpr");
}
