#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "adavit/encoder.hpp"
#include "adavit/modality.hpp"
#include "adavit/tensor.hpp"

namespace adavit {

enum class Fusion { Max, Mean };

Fusion fusion_from_string(const std::string& s);
std::string to_string(Fusion f);

struct SegHeadConfig {
  std::size_t num_classes = 1;
  Fusion fusion = Fusion::Max;
  // Channel widths from the patch-grid bottleneck up to full resolution;
  // length must be log2(patch_size) + 1.
  std::vector<std::size_t> widths = {32, 16, 8, 8};
  std::size_t patch_size = 8;
  Shape volume_shape = {32, 32, 32};

  std::size_t levels() const;  // log2(patch_size)
  void validate() const;
};

// Collapse the modality axis: per (patch index, channel) max or mean over all
// tokens tagged with that patch index. Output [E, gx, gy, gz].
Tensor fuse_modalities(const Tensor& tokens,
                       const std::vector<std::pair<std::string, std::size_t>>& provenance,
                       const PatchGrid& grid, Fusion fusion);

void init_seg_params(const SegHeadConfig& cfg, std::size_t embed_dim, std::size_t latent_dim,
                     ParamStore& params, Rng& rng);

// Everything except the modality-adaptive stem (the channel-concat baseline
// supplies its own stem features and only needs the level pyramid).
void init_seg_core_params(const SegHeadConfig& cfg, std::size_t embed_dim, ParamStore& params,
                          Rng& rng);

// Decoder pyramid over already-fused tap grids [E, gx, gy, gz] (one per entry
// of effective_taps, ascending layer order; the last is the bottleneck input)
// and a full-resolution stem feature map [widths.back(), X, Y, Z].
Tensor decode_grids(const SegHeadConfig& cfg, const ParamStore& params,
                    const std::vector<Tensor>& fused_taps, const Tensor& stem);

// UNETR-style head: fused taps enter at successively higher resolutions via
// stride-2 transposed convs; a dynamic per-modality stem conv provides the
// full-resolution skip; 1x1x1 conv then sigmoid (C=1) or channel softmax (C>1).
Tensor segment(const SegHeadConfig& cfg, const EncoderConfig& enc_cfg, const ParamStore& params,
               const ModalityRegistry& registry, const EncoderOutput& enc_out, const Case& c);

}  // namespace adavit
