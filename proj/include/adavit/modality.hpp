#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "adavit/case.hpp"
#include "adavit/rng.hpp"
#include "adavit/tensor.hpp"

namespace adavit {

// Patch-grid extents of one volume.
struct PatchGrid {
  std::size_t gx = 0, gy = 0, gz = 0;
  std::size_t count() const { return gx * gy * gz; }
  bool operator==(const PatchGrid&) const = default;
};

// Variable-length embedded token sequence; provenance tags each row with
// (modality id, patch index), patch order lexicographic with z fastest.
struct TokenSequence {
  Tensor tokens;  // [T_total, E]
  std::vector<std::pair<std::string, std::size_t>> provenance;
  PatchGrid grid;
};

// Per-modality keep-sets for masked tokenization (absent id => keep all).
using KeepSets = std::map<std::string, std::vector<std::size_t>>;

// Modality registry plus the dynamic-convolution tokenizer state. All
// learnable tensors live in the shared ParamStore under stable names:
//   dct.W, dct.B, dct.proj.P, dct.proj.p0, emb.pos, mod.<id>.m, mod.<id>.emb
class ModalityRegistry {
 public:
  struct Config {
    std::size_t latent_dim = 16;  // modality vector length
    std::size_t embed_dim = 96;
    std::size_t patch_size = 8;
    Shape volume_shape = {32, 32, 32};
    bool encoder_modality_embedding = true;  // also add mod_emb on the encoder path
    bool sinusoidal_pos = false;
  };

  ModalityRegistry(Config cfg, ParamStore& params);

  // Creates dct.W/dct.B/projector/positional table; call once on a fresh store.
  void init_params(Rng& rng);
  // Re-binds to a store that already holds the tensors (checkpoint load).
  void attach_existing(const std::vector<std::string>& ids);

  // m ~ N(0, 0.02^2), mod_emb zero-initialized. Throws on duplicate id.
  Tensor register_modality(const std::string& id, Rng& rng);

  bool has(const std::string& id) const;
  const std::vector<std::string>& ids() const { return ids_; }
  const Config& config() const { return cfg_; }
  PatchGrid grid() const;

  // concat(w_mod, b_mod) = P m + p0, split at E. Zero-init projector gives
  // w_mod = b_mod = 1 (identity scaling) for every modality.
  std::pair<Tensor, Tensor> project_modality(const std::string& id) const;

  Tensor modality_vector(const std::string& id) const;
  Tensor modality_embedding(const std::string& id) const;
  Tensor positional_table() const;

  // W_updated[c] = W[c] * w_mod[c], B_updated[c] = B[c] * b_mod[c], then a
  // stride-p patch conv; output [T, E] with z-fastest patch order.
  Tensor dynamic_tokenize(const Tensor& volume, const std::string& id) const;

  TokenSequence build_case_sequence(const Case& c,
                                    const std::optional<KeepSets>& keep = std::nullopt) const;

 private:
  Config cfg_;
  ParamStore* params_;
  std::vector<std::string> ids_;
};

// Sinusoidal 3D table (non-learnable option): E split in three axis bands.
Tensor sinusoidal_pos_table(const PatchGrid& grid, std::size_t embed_dim);

}  // namespace adavit
