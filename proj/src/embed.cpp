#include "aptrack/embed.hpp"

#include <stdexcept>
#include <string>

namespace aptrack {

Tensor patchify(const Image& img, std::size_t patch_size) {
  if (patch_size == 0) throw std::runtime_error("embed: patch size must be positive");
  if (img.h % patch_size != 0)
    throw std::runtime_error("embed: image height " + std::to_string(img.h) +
                             " not divisible by patch size " + std::to_string(patch_size));
  if (img.w % patch_size != 0)
    throw std::runtime_error("embed: image width " + std::to_string(img.w) +
                             " not divisible by patch size " + std::to_string(patch_size));
  const std::size_t gy = img.h / patch_size;
  const std::size_t gx = img.w / patch_size;
  const std::size_t cols = 3 * patch_size * patch_size;
  std::vector<double> out(gy * gx * cols);
  std::size_t row = 0;
  for (std::size_t py = 0; py < gy; ++py) {
    for (std::size_t px = 0; px < gx; ++px) {
      double* dst = out.data() + row * cols;
      for (std::size_t y = 0; y < patch_size; ++y)
        for (std::size_t x = 0; x < patch_size; ++x)
          for (std::size_t c = 0; c < 3; ++c)
            *dst++ = img.at(py * patch_size + y, px * patch_size + x, c);
      ++row;
    }
  }
  return Tensor({gy * gx, cols}, std::move(out));
}

Tensor project_patches(const Image& img, const EmbedParams& ep) {
  return matmul(patchify(img, ep.patch_size), ep.proj);
}

Tensor embed_part(const Image& img, const EmbedParams& ep, std::size_t pos_row) {
  Tensor projected = project_patches(img, ep);
  const std::size_t n = projected.rows();
  if (pos_row + n > ep.pos.rows())
    throw std::runtime_error("embed: positional embedding has " + std::to_string(ep.pos.rows()) +
                             " rows, need rows [" + std::to_string(pos_row) + "," +
                             std::to_string(pos_row + n) + ")");
  return add(projected, slice_rows(ep.pos, pos_row, pos_row + n));
}

TokenSeq embed_modality(const Image& t_init, const Image& t_dyn, const Image& search,
                        const EmbedParams& ep) {
  Tensor a = embed_part(t_init, ep, 0);
  Tensor b = embed_part(t_dyn, ep, a.rows());
  Tensor c = embed_part(search, ep, a.rows() + b.rows());
  const std::size_t n_template = a.rows() + b.rows();
  const std::size_t n_search = c.rows();
  if (n_template + n_search != ep.pos.rows())
    throw std::runtime_error("embed: positional embedding length " +
                             std::to_string(ep.pos.rows()) + " does not match token count " +
                             std::to_string(n_template + n_search));
  TokenSeq seq;
  seq.tokens = concat_rows(concat_rows(a, b), c);
  seq.n_template = n_template;
  seq.n_search = n_search;
  return seq;
}

}  // namespace aptrack
