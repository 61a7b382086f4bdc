#include "adavit/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace adavit {

EncoderConfig EncoderConfig::desk() { return {96, 4, 4, 4, {}}; }
EncoderConfig EncoderConfig::base() { return {768, 12, 12, 4, {}}; }
EncoderConfig EncoderConfig::large() { return {1024, 16, 24, 4, {}}; }
EncoderConfig EncoderConfig::huge() { return {1280, 16, 32, 4, {}}; }

EncoderConfig EncoderConfig::preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "base") return base();
  if (name == "large") return large();
  if (name == "huge") return huge();
  throw std::invalid_argument("unknown encoder preset: " + name);
}

void EncoderConfig::validate() const {
  if (embed_dim % num_heads != 0) throw DimensionError("embed_dim must divide by num_heads");
  if (depth == 0) throw DimensionError("encoder depth must be >= 1");
  for (auto t : tap_layers)
    if (t < 1 || t > depth) throw DimensionError("tap layer out of [1, depth]");
}

std::vector<std::size_t> EncoderConfig::effective_taps() const {
  if (!tap_layers.empty()) return tap_layers;
  // UNETR convention: quarter-depth taps.
  std::vector<std::size_t> taps;
  for (std::size_t q = 1; q <= 4; ++q) {
    std::size_t t = std::max<std::size_t>(1, depth * q / 4);
    if (taps.empty() || taps.back() != t) taps.push_back(t);
  }
  return taps;
}

std::size_t EncoderConfig::analytic_param_count() const {
  const std::size_t e = embed_dim, h = mlp_ratio * embed_dim;
  const std::size_t attn = 4 * (e * e + e);
  const std::size_t mlp = e * h + h + h * e + e;
  const std::size_t norms = 4 * e;
  return depth * (attn + mlp + norms);
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                            const Tensor& wo, const Tensor& bo) {
  const std::size_t e = q.extent(1);
  if (e % heads != 0) throw DimensionError("attention: embed_dim % heads != 0");
  const std::size_t dh = e / heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> head_out;
  head_out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
    Tensor att = softmax(scale(matmul(qh, transpose_last2(kh)), inv_sqrt_dh), -1);
    head_out.push_back(matmul(att, vh));
  }
  return linear(heads == 1 ? head_out[0] : concat_cols(head_out), wo, bo);
}

namespace {

std::string blk(const std::string& prefix, std::size_t i, const char* leaf) {
  return prefix + ".blk" + std::to_string(i) + "." + leaf;
}

Tensor block_forward(const EncoderConfig& cfg, const ParamStore& p, const std::string& prefix,
                     std::size_t i, const Tensor& x) {
  Tensor h = layer_norm(x, p.get(blk(prefix, i, "ln1.g")), p.get(blk(prefix, i, "ln1.b")));
  Tensor q = linear(h, p.get(blk(prefix, i, "attn.wq")), p.get(blk(prefix, i, "attn.bq")));
  Tensor k = linear(h, p.get(blk(prefix, i, "attn.wk")), p.get(blk(prefix, i, "attn.bk")));
  Tensor v = linear(h, p.get(blk(prefix, i, "attn.wv")), p.get(blk(prefix, i, "attn.bv")));
  Tensor attn = multi_head_attention(q, k, v, cfg.num_heads, p.get(blk(prefix, i, "attn.wo")),
                                     p.get(blk(prefix, i, "attn.bo")));
  Tensor x1 = add(x, attn);
  Tensor h2 = layer_norm(x1, p.get(blk(prefix, i, "ln2.g")), p.get(blk(prefix, i, "ln2.b")));
  Tensor m = linear(gelu(linear(h2, p.get(blk(prefix, i, "mlp.w1")), p.get(blk(prefix, i, "mlp.b1")))),
                    p.get(blk(prefix, i, "mlp.w2")), p.get(blk(prefix, i, "mlp.b2")));
  return add(x1, m);
}

}  // namespace

void init_encoder_params(const EncoderConfig& cfg, ParamStore& params, const std::string& prefix,
                         Rng& rng) {
  cfg.validate();
  const std::size_t e = cfg.embed_dim, h = cfg.mlp_ratio * cfg.embed_dim;
  const double std_w = 0.02;
  for (std::size_t i = 1; i <= cfg.depth; ++i) {
    params.add(blk(prefix, i, "ln1.g"), Tensor::full({e}, 1.0, true));
    params.add(blk(prefix, i, "ln1.b"), Tensor::zeros({e}, true));
    for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
      params.add(blk(prefix, i, w), Tensor::randn({e, e}, rng, std_w, true));
    for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"})
      params.add(blk(prefix, i, b), Tensor::zeros({e}, true));
    params.add(blk(prefix, i, "ln2.g"), Tensor::full({e}, 1.0, true));
    params.add(blk(prefix, i, "ln2.b"), Tensor::zeros({e}, true));
    params.add(blk(prefix, i, "mlp.w1"), Tensor::randn({e, h}, rng, std_w, true));
    params.add(blk(prefix, i, "mlp.b1"), Tensor::zeros({h}, true));
    params.add(blk(prefix, i, "mlp.w2"), Tensor::randn({h, e}, rng, std_w, true));
    params.add(blk(prefix, i, "mlp.b2"), Tensor::zeros({e}, true));
  }
}

EncoderOutput encode(const EncoderConfig& cfg, const ParamStore& params, const std::string& prefix,
                     const TokenSequence& seq) {
  if (seq.tokens.extent(0) < 1) throw DimensionError("encode: empty token sequence");
  const auto taps = cfg.effective_taps();
  EncoderOutput out;
  out.provenance = seq.provenance;
  Tensor x = seq.tokens;
  for (std::size_t i = 1; i <= cfg.depth; ++i) {
    x = block_forward(cfg, params, prefix, i, x);
    if (std::find(taps.begin(), taps.end(), i) != taps.end()) out.taps[i] = x;
  }
  out.final = x;
  return out;
}

Tensor transformer_forward(const EncoderConfig& cfg, const ParamStore& params,
                           const std::string& prefix, const Tensor& tokens) {
  Tensor x = tokens;
  for (std::size_t i = 1; i <= cfg.depth; ++i) x = block_forward(cfg, params, prefix, i, x);
  return x;
}

}  // namespace adavit
