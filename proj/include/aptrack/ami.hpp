#pragma once

#include "aptrack/config.hpp"
#include "aptrack/tensor.hpp"

#include <vector>

namespace aptrack {

/// Parameters of one adaptive modality interaction module. A single
/// instance serves both call directions; the module is symmetric in the
/// two streams.
struct AmiParams {
  // token learning: affine C -> N_t whose columns drive the per-token
  // spatial softmax
  Tensor alpha_w;
  Tensor alpha_b;
  // global modal perceptor projections, shared by the Q- and KV-attention
  Tensor wq, bq;
  Tensor wk, bk;
  Tensor wv, bv;
  // output fusion, 2C -> C
  Tensor fuse_w;
  Tensor fuse_b;
  // token embedding: affine C -> N_t driving the per-location softmax
  Tensor bw_w;
  Tensor bw_b;

  std::size_t n_tokens = 0;
  std::size_t heads = 1;
  AmiVariant variant = AmiVariant::kFull;
};

/// Captured interaction weights of one ami_forward call, for the attention
/// export and the normalization checks.
struct AmiCapture {
  int layer = 0;
  int direction = 0;  // 0: first-stream input, 1: second-stream input
  Tensor token_weights;    // A, N x N_t
  Tensor spatial_weights;  // B_w, N x N_t
};

struct AmiAudit {
  std::vector<AmiCapture> captures;
};

/// Eq.-7 style compression: A = softmax over the token axis of X*alpha,
/// F = A^T X. Every learned token is a convex combination of input rows.
Tensor learn_tokens(const Tensor& x, const AmiParams& ap, Tensor* weights_out = nullptr);

/// Cross-modal exchange between the two streams' learned tokens: mean-merged
/// queries attend to the own modality, own queries attend to the merged
/// key/value pool, and the two results are fused back onto the input tokens.
Tensor global_modal_perceptor(const Tensor& f_in, const Tensor& f_other, const AmiParams& ap);

/// Spreads learned tokens back to every spatial location: B_w = softmax over
/// the N_t axis of H*bw, delta = B_w * F.
Tensor embed_tokens(const Tensor& h, const Tensor& f, const AmiParams& ap,
                    Tensor* weights_out = nullptr);

/// Full interaction delta for one direction. The caller applies the
/// residual addition exactly once.
Tensor ami_forward(const Tensor& h_in, const Tensor& h_other, const AmiParams& ap,
                   AmiAudit* audit = nullptr, int layer = 0, int direction = 0);

}  // namespace aptrack
