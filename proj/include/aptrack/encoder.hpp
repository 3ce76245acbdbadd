#pragma once

#include "aptrack/ami.hpp"
#include "aptrack/embed.hpp"
#include "aptrack/tensor.hpp"

#include <map>
#include <vector>

namespace aptrack {

/// One pre-norm transformer block; a single parameter set serves both
/// modality streams.
struct BlockParams {
  Tensor ln1_gamma, ln1_beta;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_gamma, ln2_beta;
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  std::size_t heads = 1;
};

struct EncoderConfig {
  std::size_t n_layers = 6;
  std::vector<int> ami_layers = {2, 4};  // 1-based, AMI runs after these layers
};

/// H + MSA(LN(H)) followed by + MLP(LN(.)); shape preserved.
Tensor block_forward(const Tensor& h, const BlockParams& bp);

/// Runs the shared blocks on both streams, inserting the modality
/// interaction after the configured layers. Both interaction deltas are
/// computed from the pre-update streams, so exchanging the inputs
/// exchanges the outputs exactly.
std::pair<TokenSeq, TokenSeq> encode_pair(const TokenSeq& h_r, const TokenSeq& h_x,
                                          const EncoderConfig& ec,
                                          const std::vector<BlockParams>& blocks,
                                          const std::map<int, AmiParams>& ami,
                                          AmiAudit* audit = nullptr);

}  // namespace aptrack
