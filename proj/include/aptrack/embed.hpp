#pragma once

#include "aptrack/image.hpp"
#include "aptrack/tensor.hpp"

namespace aptrack {

/// Aligned frame of both modality streams. The x image is the non-RGB
/// modality already rendered to 3 channels by the dataset layer.
struct FramePair {
  Image rgb;
  Image x;
  int frame_index = 0;
};

/// Token matrix with its template/search partition.
struct TokenSeq {
  Tensor tokens;  // N x C
  std::size_t n_template = 0;
  std::size_t n_search = 0;

  std::size_t total() const { return n_template + n_search; }
};

/// Shared patch projection and positional embedding; one instance serves
/// both modalities.
struct EmbedParams {
  Tensor proj;  // (3*P^2) x D
  Tensor pos;   // N x D
  std::size_t patch_size = 0;
};

/// Splits an image into non-overlapping P x P patches, row-major, each row
/// the flattened P x P x 3 patch.
Tensor patchify(const Image& img, std::size_t patch_size);

/// Tokenizes [initial template; dynamic template; search] with the shared
/// projection and adds the positional embedding.
TokenSeq embed_modality(const Image& t_init, const Image& t_dyn, const Image& search,
                        const EmbedParams& ep);

/// Partial embedding of one image with the positional rows starting at
/// `pos_row`; embed_modality is the concatenation of three of these.
Tensor embed_part(const Image& img, const EmbedParams& ep, std::size_t pos_row);

/// Projection without the positional embedding, for cached template tokens.
Tensor project_patches(const Image& img, const EmbedParams& ep);

}  // namespace aptrack
