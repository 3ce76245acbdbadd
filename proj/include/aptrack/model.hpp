#pragma once

#include "aptrack/config.hpp"
#include "aptrack/embed.hpp"
#include "aptrack/encoder.hpp"
#include "aptrack/head.hpp"
#include "aptrack/tensor.hpp"

#include <map>
#include <vector>

namespace aptrack {

/// The full network: shared embedding, shared transformer blocks with AMI
/// insertions, and the prediction head. Typed views share storage with the
/// named parameter set.
struct Model {
  TrackerConfig cfg;
  Params params;
  EmbedParams embed;
  std::vector<BlockParams> blocks;
  std::map<int, AmiParams> ami;
  HeadParams head;

  static Model init(const TrackerConfig& cfg, std::uint64_t seed);

  /// Rebuilds a model from a checkpointed parameter set (shapes must match
  /// the config).
  static Model from_params(const TrackerConfig& cfg, Params loaded);

  EncoderConfig encoder_config() const;

  /// Full forward pass from raw crops to head predictions.
  HeadOutput forward(const Image& t_init_r, const Image& t_dyn_r, const Image& search_r,
                     const Image& t_init_x, const Image& t_dyn_x, const Image& search_x,
                     AmiAudit* audit = nullptr) const;

  /// Forward from cached template tokens (project_patches outputs, the
  /// positional embedding is added here); search images are embedded on the
  /// fly.
  HeadOutput forward_tokens(const Tensor& tmpl_r, const Tensor& tmpl_x, const Image& search_r,
                            const Image& search_x, AmiAudit* audit = nullptr) const;
};

}  // namespace aptrack
