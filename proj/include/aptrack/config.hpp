#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace aptrack {

enum class AmiVariant { kFull, kNone, kGmpOnly, kLtOnly };

std::string to_string(AmiVariant v);
AmiVariant ami_variant_from_string(const std::string& s);

/// Flat configuration for the whole pipeline. Every field is addressable
/// in the "key = value" config file and via --set overrides; unknown keys
/// are rejected.
struct TrackerConfig {
  // geometry
  std::size_t patch_size = 8;
  std::size_t template_size = 32;
  std::size_t search_size = 64;
  std::size_t embed_dim = 64;
  std::size_t n_layers = 6;
  std::size_t heads = 2;
  std::size_t perceptor_heads = 1;
  std::size_t n_tokens = 32;
  std::vector<int> ami_layers = {2, 4};
  AmiVariant ami_variant = AmiVariant::kFull;

  // optimizer
  double lr_ami = 1e-3;
  double lr_rest = 1e-4;
  double weight_decay = 1e-4;
  std::size_t decay_epoch = 10;
  std::size_t epochs = 20;
  std::size_t batch_size = 8;
  std::size_t samples_per_epoch = 2000;
  std::size_t max_frame_gap = 50;
  double jitter_translate = 0.1;  // fraction of search crop side
  double jitter_scale = 0.15;

  // crops
  double template_crop_factor = 2.0;
  double search_crop_factor = 4.0;

  // template update rule
  std::size_t update_interval = 5;
  double update_threshold = 0.65;

  std::uint64_t seed = 0;

  // synthetic scene defaults (used by the synth/ablate subcommands)
  std::size_t scene_sequences = 4;
  std::size_t scene_frames = 60;
  std::size_t scene_canvas = 128;
  std::size_t scene_distractors = 2;
  double scene_target_size = 20.0;
  std::string scene_target_shape = "box";  // box | disc
  std::string scene_motion = "mixed";      // linear | sine | walk | mixed
  std::string scene_degrade = "none";      // none | alternating_blackout | noise | blur | occluder
  double scene_alignment_jitter = 0.0;

  void validate() const;
  std::size_t grid_size() const { return search_size / patch_size; }
  std::size_t tokens_per_template() const {
    return (template_size / patch_size) * (template_size / patch_size);
  }
  std::size_t tokens_per_search() const { return grid_size() * grid_size(); }
  std::size_t n_template_tokens() const { return 2 * tokens_per_template(); }
  std::size_t n_total_tokens() const { return n_template_tokens() + tokens_per_search(); }
};

TrackerConfig load_config(const std::string& path);
void apply_override(TrackerConfig& cfg, const std::string& key, const std::string& value);
void save_config(const TrackerConfig& cfg, const std::string& path);

}  // namespace aptrack
