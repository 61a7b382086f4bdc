#include "adavit/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace adavit {

Fusion fusion_from_string(const std::string& s) {
  if (s == "max") return Fusion::Max;
  if (s == "mean") return Fusion::Mean;
  throw std::invalid_argument("unknown fusion: " + s);
}

std::string to_string(Fusion f) { return f == Fusion::Max ? "max" : "mean"; }

std::size_t SegHeadConfig::levels() const {
  std::size_t l = 0, p = patch_size;
  while (p > 1) {
    if (p % 2 != 0) throw DimensionError("patch size must be a power of two");
    p /= 2;
    ++l;
  }
  return l;
}

void SegHeadConfig::validate() const {
  if (num_classes < 1) throw DimensionError("num_classes must be >= 1");
  if (widths.size() != levels() + 1)
    throw DimensionError("decoder widths must have log2(patch_size)+1 entries");
}

Tensor fuse_modalities(const Tensor& tokens,
                       const std::vector<std::pair<std::string, std::size_t>>& provenance,
                       const PatchGrid& grid, Fusion fusion) {
  const std::size_t t = grid.count(), e = tokens.extent(1);
  if (provenance.size() != tokens.extent(0))
    throw DimensionError("fuse_modalities: provenance/token length mismatch");
  std::vector<std::vector<std::size_t>> rows_of(t);
  for (std::size_t r = 0; r < provenance.size(); ++r) {
    if (provenance[r].second >= t) throw DimensionError("patch index out of grid");
    rows_of[provenance[r].second].push_back(r);
  }
  std::size_t n = rows_of[0].size();
  bool uniform = n >= 1;
  for (const auto& rs : rows_of) {
    if (rs.empty()) throw std::runtime_error("fusion coverage error: patch with no tokens");
    if (rs.size() != n) uniform = false;
  }

  Tensor fused;  // [T, E]
  if (uniform) {
    std::vector<std::size_t> idx(n * t);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < n; ++j) idx[j * t + i] = rows_of[i][j];
    Tensor grouped = reshape(gather_rows(tokens, idx), {n, t, e});
    fused = fusion == Fusion::Max ? max_over_axis(grouped, 0) : mean_over_axis(grouped, 0);
  } else {
    std::vector<Tensor> per_patch;
    per_patch.reserve(t);
    for (std::size_t i = 0; i < t; ++i) {
      Tensor rows = gather_rows(tokens, rows_of[i]);
      per_patch.push_back(fusion == Fusion::Max ? max_over_axis(rows, 0)
                                                : mean_over_axis(rows, 0));
    }
    fused = stack(per_patch);
  }
  return reshape(transpose_last2(fused), {e, grid.gx, grid.gy, grid.gz});
}

namespace {

std::string nm(const std::string& leaf) { return "seg." + leaf; }

// Per-modality stem scaling through its own identity-initialized projector.
std::pair<Tensor, Tensor> stem_scaling(const ParamStore& p, const ModalityRegistry& reg,
                                       const std::string& id, std::size_t ws) {
  Tensor m = reshape(reg.modality_vector(id), {1, reg.config().latent_dim});
  Tensor proj = linear(m, p.get(nm("stem.proj.P")), p.get(nm("stem.proj.p0")));
  return {reshape(slice_cols(proj, 0, ws), {ws}), reshape(slice_cols(proj, ws, 2 * ws), {ws})};
}

Tensor reduce_stack(std::vector<Tensor> parts, Fusion fusion) {
  if (parts.size() == 1) return parts[0];
  Tensor s = stack(parts);
  return fusion == Fusion::Max ? max_over_axis(s, 0) : mean_over_axis(s, 0);
}

}  // namespace

void init_seg_params(const SegHeadConfig& cfg, std::size_t embed_dim, std::size_t latent_dim,
                     ParamStore& params, Rng& rng) {
  cfg.validate();
  const std::size_t ws = cfg.widths.back();
  const double std3 = 1.0 / std::sqrt(27.0);
  params.add(nm("stem.W"), Tensor::randn({ws, 1, 3, 3, 3}, rng, std3, true));
  params.add(nm("stem.B"), Tensor::zeros({ws}, true));
  params.add(nm("stem.proj.P"), Tensor::zeros({latent_dim, 2 * ws}, true));
  params.add(nm("stem.proj.p0"), Tensor::full({2 * ws}, 1.0, true));
  init_seg_core_params(cfg, embed_dim, params, rng);
}

void init_seg_core_params(const SegHeadConfig& cfg, std::size_t embed_dim, ParamStore& params,
                          Rng& rng) {
  cfg.validate();
  const std::size_t L = cfg.levels();
  const std::size_t ws = cfg.widths.back();

  auto conv_init = [&](const std::string& name, std::size_t co, std::size_t ci, std::size_t k) {
    params.add(name + ".w",
               Tensor::randn({co, ci, k, k, k}, rng,
                             1.0 / std::sqrt(static_cast<double>(ci * k * k * k)), true));
    params.add(name + ".b", Tensor::zeros({co}, true));
  };
  auto deconv_init = [&](const std::string& name, std::size_t ci, std::size_t co) {
    params.add(name + ".w",
               Tensor::randn({ci, co, 2, 2, 2}, rng, 1.0 / std::sqrt(static_cast<double>(ci)), true));
    params.add(name + ".b", Tensor::zeros({co}, true));
  };

  conv_init(nm("bott"), cfg.widths[0], embed_dim, 1);
  for (std::size_t l = 1; l <= L; ++l) {
    deconv_init(nm("up" + std::to_string(l)), cfg.widths[l - 1], cfg.widths[l]);
    const bool has_tap_skip = true;  // trimmed at segment() if taps run out
    if (has_tap_skip) {
      conv_init(nm("skip" + std::to_string(l) + ".proj"), cfg.widths[l], embed_dim, 1);
      for (std::size_t j = 1; j <= l; ++j)
        deconv_init(nm("skip" + std::to_string(l) + ".up" + std::to_string(j)), cfg.widths[l],
                    cfg.widths[l]);
    }
    const std::size_t cin = cfg.widths[l] * 2 + (l == L ? ws : 0);
    conv_init(nm("fuse" + std::to_string(l)), cfg.widths[l], cin, l == L ? 1 : 3);
  }
  conv_init(nm("head"), cfg.num_classes, cfg.widths.back(), 1);
}

Tensor segment(const SegHeadConfig& cfg, const EncoderConfig& enc_cfg, const ParamStore& params,
               const ModalityRegistry& registry, const EncoderOutput& enc_out, const Case& c) {
  cfg.validate();
  const std::size_t L = cfg.levels();
  const std::size_t ws = cfg.widths.back();
  const auto taps = enc_cfg.effective_taps();
  const PatchGrid grid = registry.grid();

  auto fused = [&](std::size_t tap) {
    return fuse_modalities(enc_out.taps.at(tap), enc_out.provenance, grid, cfg.fusion);
  };

  // Stem: dynamic 3x3x3 conv per modality, fused across modalities.
  std::vector<Tensor> stem_parts;
  for (const auto& id : registry.ids()) {
    const Tensor* vol = c.find(id);
    if (!vol) continue;
    auto [sw, sb] = stem_scaling(params, registry, id, ws);
    Tensor w = scale_rows(params.get(nm("stem.W")), sw);
    Tensor b = mul(params.get(nm("stem.B")), sb);
    Tensor x = reshape(*vol, {1, vol->extent(0), vol->extent(1), vol->extent(2)});
    stem_parts.push_back(conv3d(x, w, b, 1, 1));
  }
  if (stem_parts.empty()) throw std::invalid_argument("segment: case has no registered modality");
  Tensor stem = reduce_stack(std::move(stem_parts), cfg.fusion);

  std::vector<Tensor> fused_taps;
  fused_taps.reserve(taps.size());
  for (auto tap : taps) fused_taps.push_back(fused(tap));
  return decode_grids(cfg, params, fused_taps, stem);
}

Tensor decode_grids(const SegHeadConfig& cfg, const ParamStore& params,
                    const std::vector<Tensor>& fused_taps, const Tensor& stem) {
  cfg.validate();
  const std::size_t L = cfg.levels();

  Tensor x = conv3d(fused_taps.back(), params.get(nm("bott.w")), params.get(nm("bott.b")), 1);
  for (std::size_t l = 1; l <= L; ++l) {
    const std::string sl = std::to_string(l);
    x = transposed_conv3d(x, params.get(nm("up" + sl + ".w")), params.get(nm("up" + sl + ".b")), 2);
    std::vector<Tensor> cat = {x};
    if (l < fused_taps.size()) {
      // Skip from the (last - l)-th tap, lifted to this resolution.
      Tensor s = conv3d(fused_taps[fused_taps.size() - 1 - l], params.get(nm("skip" + sl + ".proj.w")),
                        params.get(nm("skip" + sl + ".proj.b")), 1);
      for (std::size_t j = 1; j <= l; ++j)
        s = transposed_conv3d(s, params.get(nm("skip" + sl + ".up" + std::to_string(j) + ".w")),
                              params.get(nm("skip" + sl + ".up" + std::to_string(j) + ".b")), 2);
      cat.push_back(s);
    } else {
      cat.push_back(x);  // no tap left; duplicate to keep fuse-conv input width
    }
    if (l == L) cat.push_back(stem);
    x = gelu(conv3d(concat_rows(cat), params.get(nm("fuse" + sl + ".w")),
                    params.get(nm("fuse" + sl + ".b")), 1, l == L ? 0 : 1));
  }
  Tensor logits = conv3d(x, params.get(nm("head.w")), params.get(nm("head.b")), 1);
  return cfg.num_classes == 1 ? sigmoid(logits) : softmax(logits, 0);
}

}  // namespace adavit
