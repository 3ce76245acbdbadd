#include "aptrack/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace aptrack {

namespace {

void check_lengths(const char* op, std::size_t a, std::size_t b) {
  if (a != b)
    throw std::runtime_error(std::string("evalkit: ") + op + " stream length mismatch, " +
                             std::to_string(a) + " vs " + std::to_string(b));
}

MetricsReport curves_from_errors(const std::vector<double>& center_err,
                                 const std::vector<double>& overlaps) {
  MetricsReport r;
  const double n = static_cast<double>(center_err.size());
  r.precision_curve.resize(51);
  for (int t = 0; t <= 50; ++t) {
    std::size_t hit = 0;
    for (double e : center_err)
      if (e <= static_cast<double>(t)) ++hit;
    r.precision_curve[t] = n > 0 ? hit / n : 0.0;
  }
  r.success_curve.resize(21);
  for (int t = 0; t <= 20; ++t) {
    const double thr = t / 20.0;
    std::size_t hit = 0;
    for (double o : overlaps)
      if (o >= thr) ++hit;
    r.success_curve[t] = n > 0 ? hit / n : 0.0;
  }
  r.pr20 = r.precision_curve[20];
  double acc = 0.0;
  for (double v : r.success_curve) acc += v;
  r.auc = acc / r.success_curve.size();
  return r;
}

}  // namespace

MetricsReport precision_success(const std::vector<BBox>& preds, const std::vector<BBox>& gts,
                                const std::vector<int>* visibility) {
  check_lengths("precision_success", preds.size(), gts.size());
  if (visibility) check_lengths("precision_success", preds.size(), visibility->size());
  std::vector<double> center_err, overlaps;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (visibility && (*visibility)[i] == 0) continue;
    center_err.push_back(center_distance(preds[i], gts[i]));
    overlaps.push_back(iou(preds[i], gts[i]));
  }
  return curves_from_errors(center_err, overlaps);
}

MetricsReport mpr_msr(const std::vector<BBox>& preds, const std::vector<BBox>& gt_rgb,
                      const std::vector<BBox>& gt_x, const std::vector<int>* visibility) {
  check_lengths("mpr_msr", preds.size(), gt_rgb.size());
  check_lengths("mpr_msr", preds.size(), gt_x.size());
  if (visibility) check_lengths("mpr_msr", preds.size(), visibility->size());
  std::vector<double> center_err, overlaps;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (visibility && (*visibility)[i] == 0) continue;
    center_err.push_back(
        std::min(center_distance(preds[i], gt_rgb[i]), center_distance(preds[i], gt_x[i])));
    overlaps.push_back(std::max(iou(preds[i], gt_rgb[i]), iou(preds[i], gt_x[i])));
  }
  MetricsReport r = curves_from_errors(center_err, overlaps);
  r.mpr20 = r.pr20;
  r.msr_auc = r.auc;
  return r;
}

FScoreResult f_score(const std::vector<BBox>& preds, const std::vector<double>& confidences,
                     const std::vector<BBox>& gts, const std::vector<int>& visibility,
                     const std::vector<double>& threshold_sweep) {
  check_lengths("f_score", preds.size(), gts.size());
  check_lengths("f_score", preds.size(), confidences.size());
  check_lengths("f_score", preds.size(), visibility.size());
  std::size_t n_visible = 0;
  for (int v : visibility)
    if (v) ++n_visible;
  if (n_visible == 0) throw std::runtime_error("evalkit: f_score with no visible frames");

  FScoreResult best;
  bool first = true;
  for (double thr : threshold_sweep) {
    double pr_sum = 0.0, re_sum = 0.0;
    std::size_t n_made = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const bool made = confidences[i] >= thr;
      const double overlap = visibility[i] ? iou(preds[i], gts[i]) : 0.0;
      if (made) {
        ++n_made;
        pr_sum += overlap;
      }
      if (visibility[i]) re_sum += made ? overlap : 0.0;
    }
    const double pr = n_made > 0 ? pr_sum / static_cast<double>(n_made) : 0.0;
    const double re = re_sum / static_cast<double>(n_visible);
    const double f = (pr + re) > 0.0 ? 2.0 * re * pr / (re + pr) : 0.0;
    if (first || f > best.f) {
      best = {pr, re, f, thr};
      first = false;
    }
  }
  return best;
}

std::vector<double> default_confidence_sweep() {
  std::vector<double> sweep;
  for (int i = 0; i <= 20; ++i) sweep.push_back(i / 20.0);
  return sweep;
}

void save_predictions(const std::string& path, const std::vector<BBox>& boxes) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("evalkit: cannot open '" + path + "'");
  char line[160];
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const BBox& b = boxes[i];
    std::snprintf(line, sizeof(line), "%zu,%.4f,%.4f,%.4f,%.4f,%.6f\n", i, b.x, b.y, b.w, b.h,
                  b.score.value_or(0.0));
    out << line;
  }
}

std::vector<BBox> load_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("evalkit: cannot open '" + path + "'");
  std::vector<BBox> boxes;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tok;
    std::vector<double> vals;
    while (std::getline(ls, tok, ',')) vals.push_back(std::stod(tok));
    if (vals.size() != 6)
      throw std::runtime_error("evalkit: malformed prediction line '" + line + "'");
    BBox b{vals[1], vals[2], vals[3], vals[4], vals[5]};
    boxes.push_back(b);
  }
  return boxes;
}

void save_report(const MetricsReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("evalkit: cannot open '" + path + "'");
  char buf[64];
  auto line = [&](const char* key, double v) {
    std::snprintf(buf, sizeof(buf), "%s: %.6f\n", key, v);
    out << buf;
  };
  line("pr20", report.pr20);
  line("auc", report.auc);
  if (report.mpr20) line("mpr20", *report.mpr20);
  if (report.msr_auc) line("msr_auc", *report.msr_auc);
  if (report.f_score) line("f_score", *report.f_score);
  if (report.f_precision) line("f_precision", *report.f_precision);
  if (report.f_recall) line("f_recall", *report.f_recall);

  auto curve = [&](const std::string& suffix, const std::vector<double>& values, double step) {
    std::ofstream c(path + suffix);
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.2f,%.6f\n", i * step, values[i]);
      c << buf;
    }
  };
  curve(".precision.csv", report.precision_curve, 1.0);
  curve(".success.csv", report.success_curve, 0.05);
}

}  // namespace aptrack
