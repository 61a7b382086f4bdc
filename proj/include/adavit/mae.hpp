#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "adavit/case.hpp"
#include "adavit/encoder.hpp"
#include "adavit/modality.hpp"
#include "adavit/rng.hpp"
#include "adavit/tensor.hpp"

namespace adavit {

// Mask plan for one modality: complementary, sorted index sets over T patches.
struct MaskPlan {
  std::vector<std::size_t> keep;
  std::vector<std::size_t> masked;
};

struct MaeConfig {
  double mask_ratio = 0.7;
  std::size_t dec_dim = 0;      // 0 => embed_dim / 2
  std::size_t dec_depth = 2;
  std::size_t dec_heads = 4;
  bool loss_all_patches = false;

  std::size_t effective_dec_dim(std::size_t embed_dim) const {
    return dec_dim == 0 ? embed_dim / 2 : dec_dim;
  }
  EncoderConfig decoder_config(std::size_t embed_dim) const;
  void validate(std::size_t embed_dim) const;
};

struct MaeOutput {
  Tensor loss;                             // scalar
  std::map<std::string, MaskPlan> plans;   // per modality
  Tensor reconstruction;                   // [T_total, p^3] voxel predictions
  std::vector<std::pair<std::string, std::size_t>> provenance;  // full sequence
};

// |masked| = round(ratio * total), clamped so at least one patch is kept
// (and, for ratio > 0 with total > 0, at least one is masked).
MaskPlan sample_mask(Rng& rng, std::size_t total, double ratio);

// Flattens the patch at `patch` (z-fastest patch order, z-fastest voxels
// inside the patch) to a row of length p^3; rows for all patches => [T, p^3].
Tensor patch_targets(const Tensor& volume, std::size_t patch_size);

// mae.enc2dec.{W,b}, mae.mask, mae.head.{W,b}, maedec.blk<i>.* parameters.
void init_mae_params(const MaeConfig& cfg, std::size_t embed_dim, std::size_t patch_size,
                     ParamStore& params, Rng& rng);

// Full masked-autoencoding pass for one case: mask per modality, tokenize the
// kept patches, encode, project to the decoder width, splice learned mask
// tokens at masked positions, re-add positional+modality embeddings (same
// tables, same indices, mapped through the same enc2dec matrix), run the
// shallow decoder, predict voxels, and take the MSE over masked rows only
// (all rows when cfg.loss_all_patches). mask_ratio == 0 without
// loss_all_patches yields a zero loss.
MaeOutput mae_forward(const MaeConfig& cfg, const EncoderConfig& ecfg, const ParamStore& params,
                      const ModalityRegistry& reg, const Case& c, Rng& mask_rng);

}  // namespace adavit
