#pragma once

#include "aptrack/head.hpp"

#include <optional>
#include <string>
#include <vector>

namespace aptrack {

/// Benchmark metrics. Precision is sampled at center-error thresholds
/// 0..50 px step 1; success at IoU thresholds 0..1 step 0.05. AUC is the
/// mean of the success curve.
struct MetricsReport {
  std::vector<double> precision_curve;  // 51 entries
  std::vector<double> success_curve;    // 21 entries
  double pr20 = 0.0;
  double auc = 0.0;
  std::optional<double> mpr20;
  std::optional<double> msr_auc;
  std::optional<double> f_score;
  std::optional<double> f_precision;
  std::optional<double> f_recall;
};

/// Center-error / IoU-overlap protocol. Frames with visibility 0 are
/// excluded.
MetricsReport precision_success(const std::vector<BBox>& preds, const std::vector<BBox>& gts,
                                const std::vector<int>* visibility = nullptr);

/// RGBT234-style protocol: per frame the smaller center distance and the
/// larger IoU over the two per-modality ground truths.
MetricsReport mpr_msr(const std::vector<BBox>& preds, const std::vector<BBox>& gt_rgb,
                      const std::vector<BBox>& gt_x,
                      const std::vector<int>* visibility = nullptr);

struct FScoreResult {
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
  double threshold = 0.0;
};

/// Long-term protocol: a prediction counts as made when its confidence
/// reaches the threshold; precision averages IoU over made predictions,
/// recall over visible frames. The reported triple maximizes
/// f = 2*Re*Pr/(Re+Pr) over the threshold sweep.
FScoreResult f_score(const std::vector<BBox>& preds, const std::vector<double>& confidences,
                     const std::vector<BBox>& gts, const std::vector<int>& visibility,
                     const std::vector<double>& threshold_sweep);

std::vector<double> default_confidence_sweep();

// Prediction file: "frame_index,x,y,w,h,score" lines.
void save_predictions(const std::string& path, const std::vector<BBox>& boxes);
std::vector<BBox> load_predictions(const std::string& path);

// Report: "key: value" lines plus "threshold,value" curve tables alongside.
void save_report(const MetricsReport& report, const std::string& path);

}  // namespace aptrack
