#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "adavit/modality.hpp"
#include "adavit/tensor.hpp"

namespace adavit {

struct EncoderConfig {
  std::size_t embed_dim = 96;
  std::size_t num_heads = 4;
  std::size_t depth = 4;
  std::size_t mlp_ratio = 4;
  std::vector<std::size_t> tap_layers;  // 1-based; defaults to D/4, D/2, 3D/4, D

  static EncoderConfig desk();
  static EncoderConfig base();   // 768 / 12 / 12
  static EncoderConfig large();  // 1024 / 16 / 24
  static EncoderConfig huge();   // 1280 / 16 / 32
  static EncoderConfig preset(const std::string& name);

  void validate() const;
  std::vector<std::size_t> effective_taps() const;
  // Analytic parameter count of the transformer stack (all blocks).
  std::size_t analytic_param_count() const;
};

struct EncoderOutput {
  Tensor final;  // [T_total, E]
  std::map<std::size_t, Tensor> taps;
  std::vector<std::pair<std::string, std::size_t>> provenance;
};

// Scaled dot-product attention over [T,E] inputs: per-head softmax(QK^T/sqrt(dh))V,
// heads concatenated, output projection applied.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                            const Tensor& wo, const Tensor& bo);

void init_encoder_params(const EncoderConfig& cfg, ParamStore& params, const std::string& prefix,
                         Rng& rng);

// Pre-norm blocks: x + MHA(LN(x)), then x + MLP(LN(x)); full global attention,
// taps captured after each listed block. No top LayerNorm, so taps[D] == final.
EncoderOutput encode(const EncoderConfig& cfg, const ParamStore& params, const std::string& prefix,
                     const TokenSequence& seq);

// Same stack without tap bookkeeping (MAE decoder reuses it).
Tensor transformer_forward(const EncoderConfig& cfg, const ParamStore& params,
                           const std::string& prefix, const Tensor& tokens);

}  // namespace adavit
