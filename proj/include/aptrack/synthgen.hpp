#pragma once

#include "aptrack/embed.hpp"
#include "aptrack/head.hpp"
#include "aptrack/image.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace aptrack {

enum class DegradeMode { kBlackout, kNoise, kBlur, kOccluder };
enum class Modality { kRgb, kX };

struct DegradeEvent {
  Modality modality = Modality::kRgb;
  std::size_t first_frame = 0;
  std::size_t last_frame = 0;  // inclusive
  DegradeMode mode = DegradeMode::kBlackout;
  double noise_sigma = 0.0;
  std::size_t blur_kernel = 3;
  double occluder_fraction = 0.7;
};

enum class MotionModel { kLinear, kSine, kWalk };
enum class TargetShape { kBox, kDisc };

/// Scripted scene: one target, optional distractors, per-modality
/// degradation events.
struct SceneSpec {
  std::size_t frames = 60;
  std::size_t canvas = 128;
  TargetShape target_shape = TargetShape::kBox;
  double target_w = 20.0;
  double target_h = 20.0;
  double rgb_target_intensity = 0.2;  // scene is inverted for the x modality
  double rgb_background = 0.7;
  double texture_amplitude = 0.08;
  std::uint64_t texture_seed = 1;
  MotionModel motion = MotionModel::kLinear;
  double motion_speed = 1.2;      // px/frame (linear), max step (walk)
  double motion_amplitude = 30.0; // sine
  double motion_period = 40.0;    // sine, frames
  std::size_t distractors = 2;
  double distractor_intensity = 0.45;
  double alignment_jitter = 0.0;  // px, per-modality ground-truth offset
  std::vector<DegradeEvent> events;

  void validate() const;
};

struct SequenceDataset {
  std::vector<FramePair> frames;
  std::vector<BBox> gt;
  std::optional<std::vector<BBox>> gt_x;  // per-modality ground truth, MPR/MSR protocol
  std::vector<int> visibility;

  std::size_t size() const { return frames.size(); }
};

/// Deterministic rendering of the scripted scene. Ground truth equals the
/// rendered target's true box each frame; images are already on the 8-bit
/// grid of the on-disk format.
SequenceDataset generate_sequence(const SceneSpec& spec, std::uint64_t seed);

/// Applies one degradation event to the named modality only; ground truth
/// and visibility are untouched.
SequenceDataset degrade(const SequenceDataset& ds, const DegradeEvent& event);

// Dataset directory layout: rgb/%06d.ppm, x/%06d.ppm, groundtruth.txt,
// optional groundtruth_x.txt, visibility.txt, spec.txt.
void save_dataset(const SequenceDataset& ds, const std::string& dir,
                  const SceneSpec* spec = nullptr);
SequenceDataset load_dataset(const std::string& dir);

void save_scene_spec(const SceneSpec& spec, const std::string& path);
SceneSpec load_scene_spec(const std::string& path);

std::string to_string(DegradeMode m);
std::string to_string(Modality m);

}  // namespace aptrack
