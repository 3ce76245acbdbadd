#include "aptrack/model.hpp"

#include "aptrack/rng.hpp"

#include <stdexcept>

namespace aptrack {

namespace {

Tensor normal_tensor(Rng& rng, std::vector<std::size_t> shape, double stddev) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  std::vector<double> data(n);
  for (double& v : data) v = rng.normal(0.0, stddev);
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

Model Model::init(const TrackerConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  Rng rng(mix_seed(seed, 0xA11C));
  const std::size_t d = cfg.embed_dim;
  const std::size_t patch_dim = 3 * cfg.patch_size * cfg.patch_size;
  const std::size_t n_total = cfg.n_total_tokens();
  const double w_std = 0.02;

  auto param = [&m](const std::string& name, Tensor t) -> Tensor {
    return m.params.add(name, std::move(t));
  };

  m.embed.patch_size = cfg.patch_size;
  m.embed.proj = param("embed.proj", normal_tensor(rng, {patch_dim, d}, w_std));
  m.embed.pos = param("embed.pos", normal_tensor(rng, {n_total, d}, w_std));

  m.blocks.resize(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "encoder.block" + std::to_string(l + 1) + ".";
    BlockParams& bp = m.blocks[l];
    bp.heads = cfg.heads;
    bp.ln1_gamma = param(p + "ln1.gamma", Tensor::full({d}, 1.0));
    bp.ln1_beta = param(p + "ln1.beta", Tensor::zeros({d}));
    bp.wq = param(p + "msa.wq", normal_tensor(rng, {d, d}, w_std));
    bp.bq = param(p + "msa.bq", Tensor::zeros({d}));
    bp.wk = param(p + "msa.wk", normal_tensor(rng, {d, d}, w_std));
    bp.bk = param(p + "msa.bk", Tensor::zeros({d}));
    bp.wv = param(p + "msa.wv", normal_tensor(rng, {d, d}, w_std));
    bp.bv = param(p + "msa.bv", Tensor::zeros({d}));
    // residual branches start at zero so every block begins as the identity
    bp.wo = param(p + "msa.wo", Tensor::zeros({d, d}));
    bp.bo = param(p + "msa.bo", Tensor::zeros({d}));
    bp.ln2_gamma = param(p + "ln2.gamma", Tensor::full({d}, 1.0));
    bp.ln2_beta = param(p + "ln2.beta", Tensor::zeros({d}));
    bp.mlp_w1 = param(p + "mlp.w1", normal_tensor(rng, {d, 4 * d}, w_std));
    bp.mlp_b1 = param(p + "mlp.b1", Tensor::zeros({4 * d}));
    bp.mlp_w2 = param(p + "mlp.w2", Tensor::zeros({4 * d, d}));
    bp.mlp_b2 = param(p + "mlp.b2", Tensor::zeros({d}));
  }

  if (cfg.ami_variant != AmiVariant::kNone) {
    for (int l : cfg.ami_layers) {
      const std::string p = "ami" + std::to_string(l) + ".";
      AmiParams ap;
      ap.variant = cfg.ami_variant;
      ap.heads = cfg.perceptor_heads;
      // the direct-interaction variant needs no compression maps
      ap.n_tokens =
          cfg.ami_variant == AmiVariant::kGmpOnly ? cfg.n_total_tokens() : cfg.n_tokens;
      if (cfg.ami_variant != AmiVariant::kGmpOnly) {
        ap.alpha_w = param(p + "alpha.w", normal_tensor(rng, {d, ap.n_tokens}, w_std));
        ap.alpha_b = param(p + "alpha.b", Tensor::zeros({ap.n_tokens}));
        ap.bw_w = param(p + "bw.w", normal_tensor(rng, {d, ap.n_tokens}, w_std));
        ap.bw_b = param(p + "bw.b", Tensor::zeros({ap.n_tokens}));
      }
      if (cfg.ami_variant != AmiVariant::kLtOnly) {
        ap.wq = param(p + "perceptor.wq", normal_tensor(rng, {d, d}, w_std));
        ap.bq = param(p + "perceptor.bq", Tensor::zeros({d}));
        ap.wk = param(p + "perceptor.wk", normal_tensor(rng, {d, d}, w_std));
        ap.bk = param(p + "perceptor.bk", Tensor::zeros({d}));
        ap.wv = param(p + "perceptor.wv", normal_tensor(rng, {d, d}, w_std));
        ap.bv = param(p + "perceptor.bv", Tensor::zeros({d}));
        // zero fusion: the interaction delta starts at zero
        ap.fuse_w = param(p + "fuse.w", Tensor::zeros({2 * d, d}));
        ap.fuse_b = param(p + "fuse.b", Tensor::zeros({d}));
      }
      m.ami.emplace(l, std::move(ap));
    }
  }

  const std::size_t hidden = 2 * d;
  auto head_stack = [&](const std::string& p, std::size_t out, Tensor& w1, Tensor& b1,
                        Tensor& w2, Tensor& b2, double b2_init) {
    w1 = param(p + ".w1", normal_tensor(rng, {2 * d, hidden}, w_std));
    b1 = param(p + ".b1", Tensor::zeros({hidden}));
    w2 = param(p + ".w2", normal_tensor(rng, {hidden, out}, w_std));
    b2 = param(p + ".b2", Tensor::full({out}, b2_init));
  };
  // classification bias starts low so the initial score map is sparse
  head_stack("head.cls", 1, m.head.cls_w1, m.head.cls_b1, m.head.cls_w2, m.head.cls_b2, 0.0);
  head_stack("head.off", 2, m.head.off_w1, m.head.off_b1, m.head.off_w2, m.head.off_b2, 0.0);
  head_stack("head.size", 2, m.head.size_w1, m.head.size_b1, m.head.size_w2, m.head.size_b2,
             0.0);
  return m;
}

Model Model::from_params(const TrackerConfig& cfg, Params loaded) {
  Model fresh = Model::init(cfg, 0);
  for (auto& [name, entry] : fresh.params.entries) {
    if (!loaded.has(name))
      throw std::runtime_error("model: checkpoint is missing parameter '" + name + "'");
    const Tensor& src = loaded.at(name);
    if (src.shape() != entry.tensor.shape())
      throw std::runtime_error("model: checkpoint shape mismatch for '" + name + "'");
    entry.tensor.data() = src.data();
  }
  for (const auto& [name, entry] : loaded.entries)
    if (!fresh.params.has(name))
      throw std::runtime_error("model: checkpoint has unknown parameter '" + name + "'");
  return fresh;
}

EncoderConfig Model::encoder_config() const {
  EncoderConfig ec;
  ec.n_layers = cfg.n_layers;
  ec.ami_layers = cfg.ami_variant == AmiVariant::kNone ? std::vector<int>{} : cfg.ami_layers;
  return ec;
}

HeadOutput Model::forward(const Image& t_init_r, const Image& t_dyn_r, const Image& search_r,
                          const Image& t_init_x, const Image& t_dyn_x, const Image& search_x,
                          AmiAudit* audit) const {
  TokenSeq h_r = embed_modality(t_init_r, t_dyn_r, search_r, embed);
  TokenSeq h_x = embed_modality(t_init_x, t_dyn_x, search_x, embed);
  auto [e_r, e_x] = encode_pair(h_r, h_x, encoder_config(), blocks, ami, audit);
  Tensor s_r = slice_rows(e_r.tokens, e_r.n_template, e_r.total());
  Tensor s_x = slice_rows(e_x.tokens, e_x.n_template, e_x.total());
  return predict(s_r, s_x, head, cfg.grid_size());
}

HeadOutput Model::forward_tokens(const Tensor& tmpl_r, const Tensor& tmpl_x,
                                 const Image& search_r, const Image& search_x,
                                 AmiAudit* audit) const {
  const std::size_t n1 = cfg.n_template_tokens();
  if (tmpl_r.rows() != n1 || tmpl_x.rows() != n1)
    throw std::runtime_error("model: cached template token count mismatch");
  TokenSeq h_r{add(concat_rows(tmpl_r, project_patches(search_r, embed)), embed.pos), n1,
               cfg.tokens_per_search()};
  TokenSeq h_x{add(concat_rows(tmpl_x, project_patches(search_x, embed)), embed.pos), n1,
               cfg.tokens_per_search()};
  auto [e_r, e_x] = encode_pair(h_r, h_x, encoder_config(), blocks, ami, audit);
  Tensor s_r = slice_rows(e_r.tokens, e_r.n_template, e_r.total());
  Tensor s_x = slice_rows(e_x.tokens, e_x.n_template, e_x.total());
  return predict(s_r, s_x, head, cfg.grid_size());
}

}  // namespace aptrack
