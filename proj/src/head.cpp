#include "aptrack/head.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace aptrack {

namespace {

// corner-consistent area so identical boxes give IoU exactly 1
double corner_area(const BBox& b) { return (b.x2() - b.x1()) * (b.y2() - b.y1()); }

}  // namespace

double iou(const BBox& a, const BBox& b) {
  const double ix = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
  const double iy = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
  const double inter = ix * iy;
  const double uni = corner_area(a) + corner_area(b) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double center_distance(const BBox& a, const BBox& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

HeadOutput predict(const Tensor& search_r, const Tensor& search_x, const HeadParams& hp,
                   std::size_t grid) {
  if (search_r.shape() != search_x.shape())
    throw std::runtime_error("head: modality grids differ in shape");
  if (search_r.rows() != grid * grid)
    throw std::runtime_error("head: expected " + std::to_string(grid * grid) +
                             " search tokens, got " + std::to_string(search_r.rows()));
  Tensor feat = concat_cols(search_r, search_x);  // G^2 x 2C

  auto stack = [&feat](const Tensor& w1, const Tensor& b1, const Tensor& w2, const Tensor& b2) {
    return affine(gelu(affine(feat, w1, b1)), w2, b2);
  };
  HeadOutput ho;
  ho.grid = grid;
  ho.score = sigmoid(stack(hp.cls_w1, hp.cls_b1, hp.cls_w2, hp.cls_b2));
  ho.offset = sigmoid(stack(hp.off_w1, hp.off_b1, hp.off_w2, hp.off_b2));
  ho.extent = scale(sigmoid(stack(hp.size_w1, hp.size_b1, hp.size_w2, hp.size_b2)),
                    static_cast<double>(grid));
  return ho;
}

namespace {

std::size_t argmax_cell(const Tensor& score) {
  const auto& v = score.data();
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace

BBox decode_box(const HeadOutput& ho, std::size_t stride) {
  const std::size_t cell = argmax_cell(ho.score);
  const std::size_t xd = cell % ho.grid;
  const std::size_t yd = cell / ho.grid;
  BBox out;
  out.x = (static_cast<double>(xd) + ho.offset.at(cell, 0)) * static_cast<double>(stride);
  out.y = (static_cast<double>(yd) + ho.offset.at(cell, 1)) * static_cast<double>(stride);
  out.w = ho.extent.at(cell, 0) * static_cast<double>(stride);
  out.h = ho.extent.at(cell, 1) * static_cast<double>(stride);
  out.score = ho.score.data()[cell];
  return out;
}

Tensor make_target_heatmap(const BBox& gt, std::size_t grid, std::size_t stride) {
  const double gx = gt.x / static_cast<double>(stride);
  const double gy = gt.y / static_cast<double>(stride);
  const long cx = std::min<long>(static_cast<long>(grid) - 1,
                                 std::max<long>(0, static_cast<long>(std::floor(gx))));
  const long cy = std::min<long>(static_cast<long>(grid) - 1,
                                 std::max<long>(0, static_cast<long>(std::floor(gy))));
  // footprint radius = circumscribed circle of the box, in cells
  const double radius =
      std::max(1.0, 0.5 * std::hypot(gt.w, gt.h) / static_cast<double>(stride));
  const double sigma = radius / 3.0;
  std::vector<double> t(grid * grid, 0.0);
  for (std::size_t y = 0; y < grid; ++y) {
    for (std::size_t x = 0; x < grid; ++x) {
      const double dx = static_cast<double>(x) - static_cast<double>(cx);
      const double dy = static_cast<double>(y) - static_cast<double>(cy);
      t[y * grid + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
    }
  }
  t[static_cast<std::size_t>(cy) * grid + static_cast<std::size_t>(cx)] = 1.0;
  return Tensor({grid * grid, 1}, std::move(t));
}

Tensor focal_loss(const Tensor& score, const Tensor& target) {
  if (score.shape() != target.shape())
    throw std::runtime_error("head: focal_loss shape mismatch");
  const auto& tv = target.data();
  std::size_t n_pos = 0;
  std::vector<double> pos_mask(tv.size(), 0.0), neg_weight(tv.size(), 0.0);
  for (std::size_t i = 0; i < tv.size(); ++i) {
    if (tv[i] >= 1.0) {
      pos_mask[i] = 1.0;
      ++n_pos;
    } else {
      const double q = 1.0 - tv[i];
      neg_weight[i] = q * q * q * q;  // beta = 4
    }
  }
  if (n_pos == 0) throw std::runtime_error("head: focal_loss target has no positive cell");

  Tensor p = clamp(score, 1e-7, 1.0 - 1e-7);
  Tensor one = Tensor::full(p.shape(), 1.0);
  Tensor q = sub(one, p);
  Tensor pos_term = mul(mul(q, q), vlog(p));  // alpha = 2
  Tensor neg_term = mul(mul(p, p), vlog(q));
  Tensor weighted = add(mul(Tensor(p.shape(), std::move(pos_mask)), pos_term),
                        mul(Tensor(p.shape(), std::move(neg_weight)), neg_term));
  return scale(sum(weighted), -1.0 / static_cast<double>(n_pos));
}

double giou(const BBox& a, const BBox& b) {
  const double ix = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
  const double iy = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
  const double inter = ix * iy;
  const double uni = corner_area(a) + corner_area(b) - inter;
  const double cw = std::max(a.x2(), b.x2()) - std::min(a.x1(), b.x1());
  const double ch = std::max(a.y2(), b.y2()) - std::min(a.y1(), b.y1());
  const double enclosure = cw * ch;
  const double iou_v = uni > 0.0 ? inter / uni : 0.0;
  return enclosure > 0.0 ? iou_v - (enclosure - uni) / enclosure : iou_v;
}

double giou_loss(const BBox& pred, const BBox& gt) { return 1.0 - giou(pred, gt); }

Tensor giou_loss_t(const Tensor& cx, const Tensor& cy, const Tensor& w, const Tensor& h,
                   const BBox& gt) {
  const auto& shp = cx.shape();
  Tensor half = Tensor::full(shp, 0.5);
  Tensor ax1 = sub(cx, mul(w, half));
  Tensor ax2 = add(cx, mul(w, half));
  Tensor ay1 = sub(cy, mul(h, half));
  Tensor ay2 = add(cy, mul(h, half));
  Tensor bx1 = Tensor::full(shp, gt.x1());
  Tensor bx2 = Tensor::full(shp, gt.x2());
  Tensor by1 = Tensor::full(shp, gt.y1());
  Tensor by2 = Tensor::full(shp, gt.y2());
  Tensor zero = Tensor::full(shp, 0.0);

  Tensor iw = vmax(zero, sub(vmin(ax2, bx2), vmax(ax1, bx1)));
  Tensor ih = vmax(zero, sub(vmin(ay2, by2), vmax(ay1, by1)));
  Tensor inter = mul(iw, ih);
  Tensor area_a = mul(sub(ax2, ax1), sub(ay2, ay1));
  Tensor area_b = Tensor::full(shp, (gt.x2() - gt.x1()) * (gt.y2() - gt.y1()));
  Tensor uni = sub(add(area_a, area_b), inter);
  Tensor cw = sub(vmax(ax2, bx2), vmin(ax1, bx1));
  Tensor ch = sub(vmax(ay2, by2), vmin(ay1, by1));
  Tensor enclosure = mul(cw, ch);
  Tensor iou_v = div(inter, uni);
  Tensor g = sub(iou_v, div(sub(enclosure, uni), enclosure));
  return sub(Tensor::full(shp, 1.0), g);
}

Tensor total_loss(const HeadOutput& ho, const BBox& gt, std::size_t stride, double lambda_l1,
                  double lambda_giou) {
  const std::size_t grid = ho.grid;
  const double strided = static_cast<double>(stride);
  const double span = strided * static_cast<double>(grid);  // search crop side in px
  const double gx = gt.x / strided;
  const double gy = gt.y / strided;
  const long cxl = std::min<long>(static_cast<long>(grid) - 1,
                                  std::max<long>(0, static_cast<long>(std::floor(gx))));
  const long cyl = std::min<long>(static_cast<long>(grid) - 1,
                                  std::max<long>(0, static_cast<long>(std::floor(gy))));
  const std::size_t cell =
      static_cast<std::size_t>(cyl) * grid + static_cast<std::size_t>(cxl);

  Tensor cls = focal_loss(ho.score, make_target_heatmap(gt, grid, stride));

  // decoded box at the ground-truth cell
  Tensor off_row = slice_rows(ho.offset, cell, cell + 1);
  Tensor ext_row = slice_rows(ho.extent, cell, cell + 1);
  Tensor ox = slice_cols(off_row, 0, 1);
  Tensor oy = slice_cols(off_row, 1, 2);
  Tensor ew = slice_cols(ext_row, 0, 1);
  Tensor eh = slice_cols(ext_row, 1, 2);
  Tensor px = scale(add(ox, Tensor::full({1, 1}, static_cast<double>(cxl))), strided);
  Tensor py = scale(add(oy, Tensor::full({1, 1}, static_cast<double>(cyl))), strided);
  Tensor pw = scale(ew, strided);
  Tensor ph = scale(eh, strided);

  // L1 on box coordinates normalized by the crop side
  Tensor diff = concat_cols(concat_cols(sub(px, Tensor::full({1, 1}, gt.x)),
                                        sub(py, Tensor::full({1, 1}, gt.y))),
                            concat_cols(sub(pw, Tensor::full({1, 1}, gt.w)),
                                        sub(ph, Tensor::full({1, 1}, gt.h))));
  Tensor l1 = mean(vabs(scale(diff, 1.0 / span)));

  Tensor g = sum(giou_loss_t(px, py, pw, ph, gt));  // 1x1 -> scalar

  return add(cls, add(scale(l1, lambda_l1), scale(g, lambda_giou)));
}

}  // namespace aptrack
