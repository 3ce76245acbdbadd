#include "aptrack/tracker.hpp"

#include "aptrack/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace aptrack {

namespace {

double clamped_side(const BBox& bb, double factor) {
  const double w = std::max(2.0, bb.w);
  const double h = std::max(2.0, bb.h);
  return factor * std::max(w, h);
}

struct Crop {
  Image image;
  double origin_x = 0.0;
  double origin_y = 0.0;
  double scale = 1.0;  // output px per frame px

  BBox to_crop(const BBox& frame_box) const {
    return {(frame_box.x - origin_x) * scale, (frame_box.y - origin_y) * scale,
            frame_box.w * scale, frame_box.h * scale, frame_box.score};
  }
  BBox to_frame(const BBox& crop_box) const {
    return {origin_x + crop_box.x / scale, origin_y + crop_box.y / scale, crop_box.w / scale,
            crop_box.h / scale, crop_box.score};
  }
};

Crop make_crop(const Image& src, double cx, double cy, double side, std::size_t out_size) {
  Crop c;
  c.image = crop_resize(src, cx, cy, side, out_size);
  c.origin_x = cx - side / 2.0;
  c.origin_y = cy - side / 2.0;
  c.scale = static_cast<double>(out_size) / side;
  return c;
}

void check_box_in_frame(const BBox& bb, const Image& frame) {
  if (bb.x < 0.0 || bb.y < 0.0 || bb.x >= static_cast<double>(frame.w) ||
      bb.y >= static_cast<double>(frame.h))
    throw std::runtime_error("tracker: initial box center outside the frame");
}

}  // namespace

TrackState tracker_init(const Model& model, const FramePair& fp, const BBox& bb) {
  check_box_in_frame(bb, fp.rgb);
  NoGradGuard no_grad;
  const TrackerConfig& cfg = model.cfg;
  const double side = clamped_side(bb, cfg.template_crop_factor);
  Image t_r = crop_resize(fp.rgb, bb.x, bb.y, side, cfg.template_size);
  Image t_x = crop_resize(fp.x, bb.x, bb.y, side, cfg.template_size);

  TrackState st;
  st.tmpl_init_r = project_patches(t_r, model.embed);
  st.tmpl_init_x = project_patches(t_x, model.embed);
  st.tmpl_dyn_r = st.tmpl_init_r;
  st.tmpl_dyn_x = st.tmpl_init_x;
  st.last_box = bb;
  st.frames_since_update = 0;
  return st;
}

void maybe_update_template(const Model& model, TrackState& st, double score, const BBox& bb,
                           const FramePair& fp) {
  st.frames_since_update += 1;
  if (st.frames_since_update >= model.cfg.update_interval &&
      score > model.cfg.update_threshold) {
    NoGradGuard no_grad;
    const double side = clamped_side(bb, model.cfg.template_crop_factor);
    Image t_r = crop_resize(fp.rgb, bb.x, bb.y, side, model.cfg.template_size);
    Image t_x = crop_resize(fp.x, bb.x, bb.y, side, model.cfg.template_size);
    st.tmpl_dyn_r = project_patches(t_r, model.embed);
    st.tmpl_dyn_x = project_patches(t_x, model.embed);
    st.frames_since_update = 0;
  }
}

BBox track_step(const Model& model, TrackState& st, const FramePair& fp,
                const TrackHooks& hooks) {
  NoGradGuard no_grad;
  const TrackerConfig& cfg = model.cfg;
  const double side = clamped_side(st.last_box, cfg.search_crop_factor);
  // half-cell alignment: an even grid would otherwise place a perfectly
  // re-centered target exactly on a cell boundary every frame
  const double align = 0.5 * side / static_cast<double>(cfg.grid_size());
  const double ccx = st.last_box.x + align;
  const double ccy = st.last_box.y + align;
  Crop crop_r = make_crop(fp.rgb, ccx, ccy, side, cfg.search_size);
  Crop crop_x = make_crop(fp.x, ccx, ccy, side, cfg.search_size);

  Tensor tmpl_r = concat_rows(st.tmpl_init_r, st.tmpl_dyn_r);
  Tensor tmpl_x = concat_rows(st.tmpl_init_x, st.tmpl_dyn_x);
  HeadOutput ho =
      model.forward_tokens(tmpl_r, tmpl_x, crop_r.image, crop_x.image, hooks.ami_audit);
  BBox in_crop = decode_box(ho, cfg.patch_size);
  BBox out = crop_r.to_frame(in_crop);
  out.w = std::max(2.0, out.w);
  out.h = std::max(2.0, out.h);

  st.last_box = out;
  maybe_update_template(model, st, out.score.value_or(0.0), out, fp);
  return out;
}

std::vector<BBox> track_sequence(const Model& model, const SequenceDataset& ds,
                                 const TrackHooks& hooks) {
  if (ds.size() == 0) throw std::runtime_error("tracker: empty sequence");
  TrackState st = tracker_init(model, ds.frames[0], ds.gt[0]);
  std::vector<BBox> preds;
  preds.reserve(ds.size());
  BBox first = ds.gt[0];
  first.score = 1.0;
  preds.push_back(first);
  for (std::size_t f = 1; f < ds.size(); ++f) preds.push_back(track_step(model, st, ds.frames[f], hooks));
  return preds;
}

// ---------------------------------------------------------------------------
// training

Tensor training_sample_loss(const Model& model, const SequenceDataset& ds, std::size_t t_init,
                            std::size_t t_dyn, std::size_t t_search, double jitter_dx,
                            double jitter_dy, double jitter_scale) {
  const TrackerConfig& cfg = model.cfg;
  const BBox& gt_init = ds.gt[t_init];
  const BBox& gt_dyn = ds.gt[t_dyn];
  const BBox& gt_search = ds.gt[t_search];

  const double t_side_i = clamped_side(gt_init, cfg.template_crop_factor);
  const double t_side_d = clamped_side(gt_dyn, cfg.template_crop_factor);
  const double s_side = clamped_side(gt_search, cfg.search_crop_factor) * jitter_scale;
  const double cx = gt_search.x + jitter_dx * s_side;
  const double cy = gt_search.y + jitter_dy * s_side;

  auto crop_pair = [&](const FramePair& fp, double ccx, double ccy, double side,
                       std::size_t out_size) {
    return std::pair<Crop, Crop>{make_crop(fp.rgb, ccx, ccy, side, out_size),
                                 make_crop(fp.x, ccx, ccy, side, out_size)};
  };
  auto [ti_r, ti_x] = crop_pair(ds.frames[t_init], gt_init.x, gt_init.y, t_side_i,
                                cfg.template_size);
  auto [td_r, td_x] = crop_pair(ds.frames[t_dyn], gt_dyn.x, gt_dyn.y, t_side_d,
                                cfg.template_size);
  auto [s_r, s_x] = crop_pair(ds.frames[t_search], cx, cy, s_side, cfg.search_size);

  HeadOutput ho =
      model.forward(ti_r.image, td_r.image, s_r.image, ti_x.image, td_x.image, s_x.image);
  BBox gt_in_crop = s_r.to_crop(gt_search);
  return total_loss(ho, gt_in_crop, cfg.patch_size);
}

namespace {

struct AdamWState {
  std::map<std::string, std::vector<double>> m1, m2;
  std::size_t t = 0;
};

void adamw_step(Params& params, AdamWState& state, double lr_ami, double lr_rest,
                double weight_decay) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (auto& [name, entry] : params.entries) {
    if (!entry.trainable) continue;
    const double lr = name.rfind("ami", 0) == 0 ? lr_ami : lr_rest;
    auto& value = entry.tensor.data();
    const auto& grad = entry.tensor.grad();
    auto& m1 = state.m1[name];
    auto& m2 = state.m2[name];
    if (m1.size() != value.size()) m1.assign(value.size(), 0.0);
    if (m2.size() != value.size()) m2.assign(value.size(), 0.0);
    for (std::size_t i = 0; i < value.size(); ++i) {
      m1[i] = beta1 * m1[i] + (1.0 - beta1) * grad[i];
      m2[i] = beta2 * m2[i] + (1.0 - beta2) * grad[i] * grad[i];
      const double mh = m1[i] / bc1;
      const double vh = m2[i] / bc2;
      value[i] -= lr * (mh / (std::sqrt(vh) + eps) + weight_decay * value[i]);
    }
  }
}

std::size_t pick_visible_frame(const SequenceDataset& ds, Rng& rng, std::size_t lo,
                               std::size_t hi) {
  // [lo, hi] clamped; falls back to any frame if the window is invisible
  for (int tries = 0; tries < 64; ++tries) {
    std::size_t f = lo + rng.integer(hi - lo + 1);
    if (ds.visibility[f]) return f;
  }
  return lo;
}

}  // namespace

TrainResult train(Model& model, const std::vector<SequenceDataset>& datasets,
                  const TrackerConfig& cfg, const TrainCallback& callback) {
  if (datasets.empty()) throw std::runtime_error("tracker: train with empty dataset list");
  for (const auto& ds : datasets)
    if (ds.size() == 0) throw std::runtime_error("tracker: train with empty sequence");

  Rng rng(mix_seed(cfg.seed, 0x7124));
  AdamWState opt;
  TrainResult result;
  const std::size_t steps_per_epoch =
      std::max<std::size_t>(1, cfg.samples_per_epoch / cfg.batch_size);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double decay = epoch >= cfg.decay_epoch ? 0.1 : 1.0;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      model.params.zero_grad();
      Tensor batch_loss;
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        const SequenceDataset& ds = datasets[rng.integer(datasets.size())];
        const std::size_t n = ds.size();
        const std::size_t t_search = pick_visible_frame(ds, rng, 0, n - 1);
        const std::size_t lo =
            t_search > cfg.max_frame_gap ? t_search - cfg.max_frame_gap : 0;
        const std::size_t hi = std::min(n - 1, t_search + cfg.max_frame_gap);
        const std::size_t t_init = pick_visible_frame(ds, rng, lo, hi);
        const std::size_t t_dyn = pick_visible_frame(ds, rng, lo, hi);
        const double jdx = rng.uniform(-cfg.jitter_translate, cfg.jitter_translate);
        const double jdy = rng.uniform(-cfg.jitter_translate, cfg.jitter_translate);
        const double jscale = std::exp(rng.uniform(-cfg.jitter_scale, cfg.jitter_scale));
        Tensor sample =
            training_sample_loss(model, ds, t_init, t_dyn, t_search, jdx, jdy, jscale);
        batch_loss = b == 0 ? sample : add(batch_loss, sample);
      }
      Tensor loss = scale(batch_loss, 1.0 / static_cast<double>(cfg.batch_size));
      const double loss_value = loss.value();
      if (!std::isfinite(loss_value))
        throw std::runtime_error("tracker: non-finite loss in batch at epoch " +
                                 std::to_string(epoch) + " step " + std::to_string(step));
      backward(loss);
      adamw_step(model.params, opt, cfg.lr_ami * decay, cfg.lr_rest * decay,
                 cfg.weight_decay);
      result.loss_trace.push_back(loss_value);
      if (callback) callback(result.loss_trace.size() - 1, loss_value);
    }
  }
  return result;
}

}  // namespace aptrack
