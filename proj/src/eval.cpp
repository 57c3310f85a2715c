// SPDX-License-Identifier: Apache-2.0
#include "echoloc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace echoloc {

ConfusionMatrix confusion(const std::vector<int>& preds,
                          const std::vector<int>& truths, int classes) {
    if (preds.size() != truths.size())
        throw UserError("prediction/truth length mismatch");
    if (classes <= 0) throw UserError("class count must be positive");
    ConfusionMatrix cm;
    cm.counts = Eigen::MatrixXi::Zero(classes, classes);
    for (size_t i = 0; i < preds.size(); ++i) {
        const int t = truths[i];
        const int p = preds[i];
        if (t < 0 || t >= classes || p < 0 || p >= classes)
            throw UserError("label out of range");
        cm.counts(t, p) += 1;
    }
    return cm;
}

ClassMetrics metrics(const ConfusionMatrix& cm) {
    if (cm.total() <= 0) throw UserError("empty confusion matrix");
    ClassMetrics m;
    const int n = cm.classes();
    long tp_sum = 0, fp_sum = 0, fn_sum = 0;
    int macro_count = 0;
    for (int c = 0; c < n; ++c) {
        const int tp = cm.tp(c), fp = cm.fp(c), fn = cm.fn(c);
        tp_sum += tp;
        fp_sum += fp;
        fn_sum += fn;
        const bool degenerate = (tp + fp == 0) || (tp + fn == 0);
        const double precision = tp + fp > 0 ? double(tp) / (tp + fp) : 0.0;
        const double recall = tp + fn > 0 ? double(tp) / (tp + fn) : 0.0;
        // Count form of 2PR/(P+R); exact when the counts are exact.
        const double f1 =
            2 * tp + fp + fn > 0 ? 2.0 * tp / (2 * tp + fp + fn) : 0.0;
        m.precision.push_back(precision);
        m.recall.push_back(recall);
        m.f1.push_back(f1);
        m.degenerate.push_back(degenerate);
        if (tp + fp == 0 && tp + fn == 0) continue;  // class never appears
        m.macro_precision += precision;
        m.macro_recall += recall;
        m.macro_f1 += f1;
        ++macro_count;
    }
    if (macro_count > 0) {
        m.macro_precision /= macro_count;
        m.macro_recall /= macro_count;
        m.macro_f1 /= macro_count;
    }
    m.micro_precision = tp_sum + fp_sum > 0 ? double(tp_sum) / (tp_sum + fp_sum) : 0.0;
    m.micro_recall = tp_sum + fn_sum > 0 ? double(tp_sum) / (tp_sum + fn_sum) : 0.0;
    m.micro_f1 = m.micro_precision + m.micro_recall > 0.0
                     ? 2.0 * m.micro_precision * m.micro_recall /
                           (m.micro_precision + m.micro_recall)
                     : 0.0;
    return m;
}

RegressionError regression_error(const std::vector<Eigen::Vector2d>& preds,
                                 const std::vector<Eigen::Vector2d>& truths) {
    if (preds.size() != truths.size())
        throw UserError("prediction/truth length mismatch");
    if (preds.empty()) throw UserError("no regression samples");
    RegressionError out;
    double total = 0.0;
    for (size_t i = 0; i < preds.size(); ++i) {
        const Eigen::Vector2d d = preds[i] - truths[i];
        out.distances.push_back(d.norm());
        total += d.squaredNorm();
    }
    out.mse = total / (2.0 * static_cast<double>(preds.size()));
    return out;
}

LeniencyCurve leniency_curve(const std::vector<double>& distances,
                             const std::vector<double>& radii) {
    if (distances.empty()) throw UserError("no distances");
    if (radii.empty()) throw UserError("no leniency radii");
    for (size_t i = 0; i < radii.size(); ++i) {
        if (radii[i] < 0.0) throw UserError("negative leniency radius");
        if (i > 0 && radii[i] < radii[i - 1])
            throw UserError("leniency radii must be ascending");
    }
    LeniencyCurve curve;
    curve.radii = radii;
    for (double r : radii) {
        size_t hits = 0;
        for (double d : distances)
            if (d <= r) ++hits;
        curve.accuracy.push_back(static_cast<double>(hits) / distances.size());
    }
    return curve;
}

double radius_at_accuracy(const LeniencyCurve& curve, double target) {
    if (curve.radii.empty()) throw UserError("empty leniency curve");
    for (size_t i = 0; i < curve.radii.size(); ++i)
        if (curve.accuracy[i] >= target) return curve.radii[i];
    return curve.radii.back();
}

CvSummary cv_summary(const std::vector<ClassMetrics>& folds) {
    if (folds.size() < 2) throw UserError("cross-validation needs at least 2 folds");
    const auto k = static_cast<double>(folds.size());
    auto mean_std = [&](auto select, double& mean, double& std_dev) {
        mean = 0.0;
        for (const ClassMetrics& f : folds) mean += select(f);
        mean /= k;
        double ss = 0.0;
        for (const ClassMetrics& f : folds) {
            const double d = select(f) - mean;
            ss += d * d;
        }
        std_dev = std::sqrt(ss / (k - 1.0));
    };
    CvSummary s;
    mean_std([](const ClassMetrics& f) { return f.macro_precision; },
             s.mean_precision, s.std_precision);
    mean_std([](const ClassMetrics& f) { return f.macro_recall; },
             s.mean_recall, s.std_recall);
    mean_std([](const ClassMetrics& f) { return f.macro_f1; }, s.mean_f1,
             s.std_f1);
    return s;
}

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path);
    if (!os) throw UserError("cannot write: " + path);
    return os;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string quoted = "\"";
    for (char c : s) {
        if (c == '"') quoted += '"';
        quoted += c;
    }
    return quoted + "\"";
}

}  // namespace

void write_confusion_csv(const ConfusionMatrix& cm,
                         const std::vector<std::string>& labels,
                         const std::string& path) {
    if (static_cast<int>(labels.size()) != cm.classes())
        throw UserError("label count does not match confusion matrix");
    auto os = open_out(path);
    os << "true\\pred";
    for (const std::string& l : labels) os << ',' << csv_field(l);
    os << '\n';
    for (int r = 0; r < cm.classes(); ++r) {
        os << csv_field(labels[static_cast<size_t>(r)]);
        for (int c = 0; c < cm.classes(); ++c) os << ',' << cm.counts(r, c);
        os << '\n';
    }
}

void write_metrics_csv(const ClassMetrics& m,
                       const std::vector<std::string>& labels,
                       const std::string& path) {
    if (labels.size() != m.precision.size())
        throw UserError("label count does not match metrics");
    auto os = open_out(path);
    os << std::setprecision(10);
    os << "class,precision,recall,f1,degenerate\n";
    for (size_t c = 0; c < labels.size(); ++c)
        os << csv_field(labels[c]) << ',' << m.precision[c] << ','
           << m.recall[c] << ',' << m.f1[c] << ','
           << (m.degenerate[c] ? 1 : 0) << '\n';
    os << "macro," << m.macro_precision << ',' << m.macro_recall << ','
       << m.macro_f1 << ",0\n";
    os << "micro," << m.micro_precision << ',' << m.micro_recall << ','
       << m.micro_f1 << ",0\n";
}

void write_leniency_csv(const LeniencyCurve& curve, const std::string& path) {
    auto os = open_out(path);
    os << std::setprecision(10);
    os << "radius_m,accuracy\n";
    for (size_t i = 0; i < curve.radii.size(); ++i)
        os << curve.radii[i] << ',' << curve.accuracy[i] << '\n';
}

void write_leniency_svg(const LeniencyCurve& curve, const std::string& path) {
    if (curve.radii.empty()) throw UserError("empty leniency curve");
    const double width = 640, height = 480;
    const double ml = 60, mr = 20, mt = 20, mb = 50;
    const double pw = width - ml - mr, ph = height - mt - mb;
    const double rmax = std::max(curve.radii.back(), 1e-9);

    auto px = [&](double r) { return ml + pw * r / rmax; };
    auto py = [&](double a) { return mt + ph * (1.0 - a); };

    auto os = open_out(path);
    os << std::setprecision(6);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
       << "\" height=\"" << height << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    // axes
    os << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw
       << "\" y2=\"" << mt + ph << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
       << "\" y2=\"" << mt + ph << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double a = i / 5.0;
        os << "<text x=\"" << ml - 8 << "\" y=\"" << py(a) + 4
           << "\" font-size=\"12\" text-anchor=\"end\">" << a << "</text>\n";
        const double r = rmax * a;
        os << "<text x=\"" << px(r) << "\" y=\"" << mt + ph + 18
           << "\" font-size=\"12\" text-anchor=\"middle\">" << r << "</text>\n";
    }
    os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << height - 12
       << "\" font-size=\"13\" text-anchor=\"middle\">leniency radius (m)"
          "</text>\n";
    os << "<text x=\"16\" y=\"" << mt + ph / 2
       << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
       << mt + ph / 2 << ")\">accuracy</text>\n";
    os << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" "
          "points=\"";
    for (size_t i = 0; i < curve.radii.size(); ++i)
        os << px(curve.radii[i]) << ',' << py(curve.accuracy[i]) << ' ';
    os << "\"/>\n</svg>\n";
}

}  // namespace echoloc
