// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "echoloc/types.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace echoloc {

/// Rows are true classes, columns are predicted classes.
struct ConfusionMatrix {
    Eigen::MatrixXi counts;

    int classes() const { return static_cast<int>(counts.rows()); }
    int total() const { return counts.sum(); }
    int tp(int c) const { return counts(c, c); }
    int fp(int c) const { return counts.col(c).sum() - counts(c, c); }
    int fn(int c) const { return counts.row(c).sum() - counts(c, c); }
};

struct ClassMetrics {
    std::vector<double> precision;  // per class
    std::vector<double> recall;
    std::vector<double> f1;
    std::vector<bool> degenerate;  // zero-denominator convention applied
    double macro_precision = 0.0;  // classes absent from preds and truths excluded
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    double micro_precision = 0.0;
    double micro_recall = 0.0;
    double micro_f1 = 0.0;
};

struct LeniencyCurve {
    std::vector<double> radii;     // meters, ascending
    std::vector<double> accuracy;  // fraction of distances within each radius
};

struct RegressionError {
    double mse = 0.0;  // averaged over samples and both coordinates
    std::vector<double> distances;
};

struct CvSummary {
    double mean_precision = 0.0, std_precision = 0.0;
    double mean_recall = 0.0, std_recall = 0.0;
    double mean_f1 = 0.0, std_f1 = 0.0;
};

ConfusionMatrix confusion(const std::vector<int>& preds,
                          const std::vector<int>& truths, int classes);

/// Per-class precision/recall/F1 with macro and micro averages. Classes with a
/// zero denominator score 0 and are flagged; classes absent from both preds
/// and truths are excluded from the macro average.
ClassMetrics metrics(const ConfusionMatrix& cm);

RegressionError regression_error(const std::vector<Eigen::Vector2d>& preds,
                                 const std::vector<Eigen::Vector2d>& truths);

LeniencyCurve leniency_curve(const std::vector<double>& distances,
                             const std::vector<double>& radii);

/// Smallest listed radius whose accuracy reaches `target`, or the last radius.
double radius_at_accuracy(const LeniencyCurve& curve, double target);

/// Mean and sample (n-1) standard deviation of the macro metrics across folds.
CvSummary cv_summary(const std::vector<ClassMetrics>& folds);

// Report writers.
void write_confusion_csv(const ConfusionMatrix& cm,
                         const std::vector<std::string>& labels,
                         const std::string& path);
void write_metrics_csv(const ClassMetrics& m,
                       const std::vector<std::string>& labels,
                       const std::string& path);
void write_leniency_csv(const LeniencyCurve& curve, const std::string& path);
void write_leniency_svg(const LeniencyCurve& curve, const std::string& path);

}  // namespace echoloc
