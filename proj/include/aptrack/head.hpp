#pragma once

#include "aptrack/tensor.hpp"

#include <optional>

namespace aptrack {

/// Axis-aligned box, center (x, y) and extents (w, h) in pixels.
struct BBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;
  std::optional<double> score;

  double x1() const { return x - w / 2.0; }
  double y1() const { return y - h / 2.0; }
  double x2() const { return x + w / 2.0; }
  double y2() const { return y + h / 2.0; }
  double area() const { return w * h; }
};

double iou(const BBox& a, const BBox& b);
double center_distance(const BBox& a, const BBox& b);

/// Per-location prediction stacks over the channel-spliced search features.
struct HeadParams {
  Tensor cls_w1, cls_b1, cls_w2, cls_b2;    // 2C -> hidden -> 1
  Tensor off_w1, off_b1, off_w2, off_b2;    // 2C -> hidden -> 2
  Tensor size_w1, size_b1, size_w2, size_b2;  // 2C -> hidden -> 2
};

/// Dense predictions over the search grid. score: G^2 x 1 in (0,1);
/// offset: G^2 x 2 in cell units within [0,1); extent: G^2 x 2 in cell
/// units within (0, G). Cell index is row-major (y * G + x).
struct HeadOutput {
  Tensor score;
  Tensor offset;
  Tensor extent;
  std::size_t grid = 0;
};

/// Channel-concatenates the two modality search grids and applies the
/// three stacks.
HeadOutput predict(const Tensor& search_r, const Tensor& search_x, const HeadParams& hp,
                   std::size_t grid);

/// Reads the argmax cell of the score map (row-major ties pick the lowest
/// index) and assembles the box in search-crop pixels.
BBox decode_box(const HeadOutput& ho, std::size_t stride);

/// Gaussian-smoothed target heatmap with exactly one cell equal to 1.
/// sigma is one third of the box footprint radius in cells.
Tensor make_target_heatmap(const BBox& gt_in_crop, std::size_t grid, std::size_t stride);

/// Center-point focal loss with alpha=2, beta=4: -(1-p)^2 log p at peak
/// cells, -(1-t)^4 p^2 log(1-p) elsewhere, averaged over the positive
/// count. Scores are clamped to [1e-7, 1-1e-7].
Tensor focal_loss(const Tensor& score, const Tensor& target);

double giou(const BBox& a, const BBox& b);

/// 1 - GIoU, in [0, 2].
double giou_loss(const BBox& pred, const BBox& gt);

/// Differentiable 1 - GIoU over 1x1 component tensors (center/extent in
/// pixels).
Tensor giou_loss_t(const Tensor& cx, const Tensor& cy, const Tensor& w, const Tensor& h,
                   const BBox& gt);

/// Eq.-11 composite: focal + 5 * L1(normalized box at the ground-truth
/// cell) + 2 * GIoU.
Tensor total_loss(const HeadOutput& ho, const BBox& gt_in_crop, std::size_t stride,
                  double lambda_l1 = 5.0, double lambda_giou = 2.0);

}  // namespace aptrack
