#include "aptrack/encoder.hpp"

#include <algorithm>
#include <stdexcept>

namespace aptrack {

Tensor block_forward(const Tensor& h, const BlockParams& bp) {
  if (h.cols() != bp.wq.rows())
    throw std::runtime_error("encoder: token dim " + std::to_string(h.cols()) +
                             " does not match block dim " + std::to_string(bp.wq.rows()));
  Tensor normed = layer_norm(h, bp.ln1_gamma, bp.ln1_beta);
  Tensor q = affine(normed, bp.wq, bp.bq);
  Tensor k = affine(normed, bp.wk, bp.bk);
  Tensor v = affine(normed, bp.wv, bp.bv);
  Tensor msa = affine(attention(q, k, v, bp.heads), bp.wo, bp.bo);
  Tensor mid = add(h, msa);

  Tensor normed2 = layer_norm(mid, bp.ln2_gamma, bp.ln2_beta);
  Tensor mlp = affine(gelu(affine(normed2, bp.mlp_w1, bp.mlp_b1)), bp.mlp_w2, bp.mlp_b2);
  return add(mid, mlp);
}

std::pair<TokenSeq, TokenSeq> encode_pair(const TokenSeq& h_r, const TokenSeq& h_x,
                                          const EncoderConfig& ec,
                                          const std::vector<BlockParams>& blocks,
                                          const std::map<int, AmiParams>& ami,
                                          AmiAudit* audit) {
  if (h_r.tokens.shape() != h_x.tokens.shape())
    throw std::runtime_error("encoder: modality streams differ in shape");
  if (blocks.size() != ec.n_layers)
    throw std::runtime_error("encoder: expected " + std::to_string(ec.n_layers) +
                             " blocks, got " + std::to_string(blocks.size()));

  Tensor r = h_r.tokens;
  Tensor x = h_x.tokens;
  for (std::size_t l = 1; l <= ec.n_layers; ++l) {
    const BlockParams& bp = blocks[l - 1];
    r = block_forward(r, bp);
    x = block_forward(x, bp);
    if (std::find(ec.ami_layers.begin(), ec.ami_layers.end(), static_cast<int>(l)) !=
        ec.ami_layers.end()) {
      auto it = ami.find(static_cast<int>(l));
      if (it == ami.end())
        throw std::runtime_error("encoder: no AMI parameters for layer " + std::to_string(l));
      // simultaneous update: both deltas read the pre-update streams
      Tensor dr = ami_forward(r, x, it->second, audit, static_cast<int>(l), 0);
      Tensor dx = ami_forward(x, r, it->second, audit, static_cast<int>(l), 1);
      r = add(r, dr);
      x = add(x, dx);
    }
  }
  TokenSeq out_r{r, h_r.n_template, h_r.n_search};
  TokenSeq out_x{x, h_x.n_template, h_x.n_search};
  return {out_r, out_x};
}

}  // namespace aptrack
