#include "aptrack/ami.hpp"

#include <stdexcept>

namespace aptrack {

namespace {

void check_pair(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::runtime_error(std::string("ami: ") + op + " stream shape mismatch");
}

}  // namespace

Tensor learn_tokens(const Tensor& x, const AmiParams& ap, Tensor* weights_out) {
  if (x.cols() != ap.alpha_w.rows())
    throw std::runtime_error("ami: learn_tokens channel mismatch, tokens have " +
                             std::to_string(x.cols()) + " channels, alpha expects " +
                             std::to_string(ap.alpha_w.rows()));
  Tensor logits = affine(x, ap.alpha_w, ap.alpha_b);  // N x N_t
  Tensor a = softmax(logits, 0);                      // each column sums to 1 over N
  if (weights_out) *weights_out = a;
  return matmul(transpose(a), x);                     // N_t x C
}

Tensor global_modal_perceptor(const Tensor& f_in, const Tensor& f_other, const AmiParams& ap) {
  check_pair("global_modal_perceptor", f_in, f_other);
  Tensor q_in = affine(f_in, ap.wq, ap.bq);
  Tensor k_in = affine(f_in, ap.wk, ap.bk);
  Tensor v_in = affine(f_in, ap.wv, ap.bv);
  Tensor q_other = affine(f_other, ap.wq, ap.bq);
  Tensor k_other = affine(f_other, ap.wk, ap.bk);
  Tensor v_other = affine(f_other, ap.wv, ap.bv);

  Tensor q_merged = scale(add(q_in, q_other), 0.5);
  Tensor k_merged = concat_rows(k_in, k_other);
  Tensor v_merged = concat_rows(v_in, v_other);

  Tensor wq_out = attention(q_merged, k_in, v_in, ap.heads);
  Tensor wkv_out = attention(q_in, k_merged, v_merged, ap.heads);
  Tensor fused = affine(concat_cols(wq_out, wkv_out), ap.fuse_w, ap.fuse_b);
  return add(f_in, fused);
}

Tensor embed_tokens(const Tensor& h, const Tensor& f, const AmiParams& ap, Tensor* weights_out) {
  if (h.cols() != f.cols())
    throw std::runtime_error("ami: embed_tokens channel mismatch");
  if (f.rows() != static_cast<std::size_t>(ap.bw_w.cols()))
    throw std::runtime_error("ami: embed_tokens expects " + std::to_string(ap.bw_w.cols()) +
                             " learned tokens, got " + std::to_string(f.rows()));
  Tensor logits = affine(h, ap.bw_w, ap.bw_b);  // N x N_t
  Tensor bw = softmax(logits, 1);               // each row sums to 1 over N_t
  if (weights_out) *weights_out = bw;
  return matmul(bw, f);                         // N x C
}

Tensor ami_forward(const Tensor& h_in, const Tensor& h_other, const AmiParams& ap,
                   AmiAudit* audit, int layer, int direction) {
  check_pair("ami_forward", h_in, h_other);
  AmiCapture capture;
  capture.layer = layer;
  capture.direction = direction;

  Tensor delta;
  switch (ap.variant) {
    case AmiVariant::kNone:
      throw std::runtime_error("ami: ami_forward called with variant 'none'");
    case AmiVariant::kGmpOnly: {
      // direct feature interaction: the full sequences act as the token set
      Tensor q_in = affine(h_in, ap.wq, ap.bq);
      Tensor k_in = affine(h_in, ap.wk, ap.bk);
      Tensor v_in = affine(h_in, ap.wv, ap.bv);
      Tensor q_other = affine(h_other, ap.wq, ap.bq);
      Tensor k_other = affine(h_other, ap.wk, ap.bk);
      Tensor v_other = affine(h_other, ap.wv, ap.bv);
      Tensor q_merged = scale(add(q_in, q_other), 0.5);
      Tensor wq_out = attention(q_merged, k_in, v_in, ap.heads);
      Tensor wkv_out =
          attention(q_in, concat_rows(k_in, k_other), concat_rows(v_in, v_other), ap.heads);
      delta = affine(concat_cols(wq_out, wkv_out), ap.fuse_w, ap.fuse_b);
      break;
    }
    case AmiVariant::kLtOnly: {
      // learned tokens of the other stream are embedded directly; no
      // perceptor between the token sets
      Tensor f_other = learn_tokens(h_other, ap, &capture.token_weights);
      delta = embed_tokens(h_in, f_other, ap, &capture.spatial_weights);
      break;
    }
    case AmiVariant::kFull: {
      Tensor f_in = learn_tokens(h_in, ap, &capture.token_weights);
      Tensor f_other = learn_tokens(h_other, ap, nullptr);
      Tensor f_out = global_modal_perceptor(f_in, f_other, ap);
      delta = embed_tokens(h_in, f_out, ap, &capture.spatial_weights);
      break;
    }
  }
  if (audit) audit->captures.push_back(std::move(capture));
  return delta;
}

}  // namespace aptrack
