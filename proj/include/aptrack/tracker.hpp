#pragma once

#include "aptrack/model.hpp"
#include "aptrack/synthgen.hpp"

#include <functional>
#include <vector>

namespace aptrack {

/// Mutable tracking state. The initial template tokens never change after
/// init; the dynamic template is refreshed by the update rule.
struct TrackState {
  Tensor tmpl_init_r, tmpl_init_x;  // project_patches outputs; frozen
  Tensor tmpl_dyn_r, tmpl_dyn_x;
  BBox last_box;
  std::size_t frames_since_update = 0;
};

struct TrackHooks {
  AmiAudit* ami_audit = nullptr;
};

/// Crops both templates around the initial box; counter starts at 0.
TrackState tracker_init(const Model& model, const FramePair& fp, const BBox& bb);

/// One tracking step: crop the search region around the previous box, run
/// the network, decode, map back to frame coordinates, then apply the
/// template update rule.
BBox track_step(const Model& model, TrackState& st, const FramePair& fp,
                const TrackHooks& hooks = {});

/// Dynamic-template rule: the counter increments every call and the
/// template refreshes iff counter >= update_interval and
/// score > update_threshold.
void maybe_update_template(const Model& model, TrackState& st, double score, const BBox& bb,
                           const FramePair& fp);

/// Tracks a whole sequence starting from its first ground-truth box.
std::vector<BBox> track_sequence(const Model& model, const SequenceDataset& ds,
                                 const TrackHooks& hooks = {});

struct TrainResult {
  std::vector<double> loss_trace;  // one entry per step
};

using TrainCallback = std::function<void(std::size_t step, double loss)>;

/// AdamW with two parameter groups (AMI vs rest) and a x0.1 decay at the
/// configured epoch. Deterministic given the config seed.
TrainResult train(Model& model, const std::vector<SequenceDataset>& datasets,
                  const TrackerConfig& cfg, const TrainCallback& callback = nullptr);

/// Total loss of one sampled training triplet; exposed for the gradient
/// checks.
Tensor training_sample_loss(const Model& model, const SequenceDataset& ds, std::size_t t_init,
                            std::size_t t_dyn, std::size_t t_search, double jitter_dx,
                            double jitter_dy, double jitter_scale);

}  // namespace aptrack
