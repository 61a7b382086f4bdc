#include "adavit/mae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace adavit {

EncoderConfig MaeConfig::decoder_config(std::size_t embed_dim) const {
  EncoderConfig d;
  d.embed_dim = effective_dec_dim(embed_dim);
  d.num_heads = dec_heads;
  d.depth = dec_depth;
  d.mlp_ratio = 4;
  d.tap_layers = {d.depth};
  return d;
}

void MaeConfig::validate(std::size_t embed_dim) const {
  if (mask_ratio < 0.0 || mask_ratio > 1.0)
    throw std::invalid_argument("mask_ratio must lie in [0, 1]");
  if (dec_depth == 0) throw std::invalid_argument("dec_depth must be positive");
  decoder_config(embed_dim).validate();
}

MaskPlan sample_mask(Rng& rng, std::size_t total, double ratio) {
  if (total == 0) throw std::invalid_argument("sample_mask: total must be positive");
  std::size_t n_masked = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(total)));
  if (n_masked >= total) n_masked = total - 1;  // always keep at least one patch
  MaskPlan plan;
  plan.masked = rng.sample_without_replacement(total, n_masked);
  std::sort(plan.masked.begin(), plan.masked.end());
  std::vector<char> is_masked(total, 0);
  for (auto i : plan.masked) is_masked[i] = 1;
  plan.keep.reserve(total - n_masked);
  for (std::size_t i = 0; i < total; ++i)
    if (!is_masked[i]) plan.keep.push_back(i);
  return plan;
}

Tensor patch_targets(const Tensor& volume, std::size_t patch_size) {
  const Shape& s = volume.shape();
  if (s.size() != 3) throw DimensionError("patch_targets expects a rank-3 volume");
  const std::size_t p = patch_size;
  if (p == 0 || s[0] % p || s[1] % p || s[2] % p)
    throw DimensionError("volume extents must be multiples of the patch size");
  const std::size_t gx = s[0] / p, gy = s[1] / p, gz = s[2] / p;
  const std::size_t t = gx * gy * gz, v = p * p * p;
  std::vector<double> out(t * v);
  const double* d = volume.data().data();
  std::size_t row = 0;
  for (std::size_t px = 0; px < gx; ++px)
    for (std::size_t py = 0; py < gy; ++py)
      for (std::size_t pz = 0; pz < gz; ++pz, ++row)
        for (std::size_t ix = 0; ix < p; ++ix)
          for (std::size_t iy = 0; iy < p; ++iy)
            for (std::size_t iz = 0; iz < p; ++iz) {
              const std::size_t src =
                  ((px * p + ix) * s[1] + (py * p + iy)) * s[2] + (pz * p + iz);
              out[row * v + (ix * p + iy) * p + iz] = d[src];
            }
  return Tensor::from({t, v}, std::move(out));
}

void init_mae_params(const MaeConfig& cfg, std::size_t embed_dim, std::size_t patch_size,
                     ParamStore& params, Rng& rng) {
  cfg.validate(embed_dim);
  const std::size_t ed = cfg.effective_dec_dim(embed_dim);
  const std::size_t vox = patch_size * patch_size * patch_size;
  params.add("mae.enc2dec.W", Tensor::randn({embed_dim, ed}, rng, 0.02, true));
  params.add("mae.enc2dec.b", Tensor::zeros({ed}, true));
  params.add("mae.mask", Tensor::randn({1, ed}, rng, 0.02, true));
  init_encoder_params(cfg.decoder_config(embed_dim), params, "maedec", rng);
  params.add("mae.head.W", Tensor::randn({ed, vox}, rng, 0.02, true));
  params.add("mae.head.b", Tensor::zeros({vox}, true));
}

MaeOutput mae_forward(const MaeConfig& cfg, const EncoderConfig& ecfg, const ParamStore& params,
                      const ModalityRegistry& reg, const Case& c, Rng& mask_rng) {
  const std::size_t t = reg.grid().count();

  // Mask each present modality independently, in registry order so the draw
  // sequence is independent of case insertion order.
  MaeOutput out;
  KeepSets keep;
  std::vector<std::string> present;
  for (const auto& id : reg.ids()) {
    if (!c.find(id)) continue;
    present.push_back(id);
    MaskPlan plan = sample_mask(mask_rng, t, cfg.mask_ratio);
    keep[id] = plan.keep;
    out.plans[id] = std::move(plan);
  }
  if (present.empty()) throw std::invalid_argument("empty case: " + c.case_id);

  TokenSequence seq = reg.build_case_sequence(c, keep);
  EncoderOutput enc = encode(ecfg, params, "enc", seq);
  Tensor h = linear(enc.final, params.get("mae.enc2dec.W"), params.get("mae.enc2dec.b"));

  // Splice the learned mask token at masked positions: the gather source is
  // the kept rows with the mask token appended as the last row.
  const std::size_t kept_total = h.shape()[0];
  std::vector<std::size_t> splice;
  splice.reserve(present.size() * t);
  std::size_t kept_cursor = 0;
  for (const auto& id : present) {
    const MaskPlan& plan = out.plans.at(id);
    std::size_t k = 0;
    for (std::size_t i = 0; i < t; ++i) {
      if (k < plan.keep.size() && plan.keep[k] == i)
        splice.push_back(kept_cursor + k++);
      else
        splice.push_back(kept_total);  // mask token row
      out.provenance.emplace_back(id, i);
    }
    kept_cursor += plan.keep.size();
  }
  Tensor full = gather_rows(concat_rows({h, params.get("mae.mask")}), splice);

  // Re-add positional and modality embeddings for every position, from the
  // same tables at the same indices, mapped into the decoder width through
  // the same enc2dec matrix (bias omitted: it was already applied once).
  Tensor pos = reg.positional_table();
  std::vector<Tensor> emb_parts;
  for (const auto& id : present)
    emb_parts.push_back(add_rowvec(pos, reg.modality_embedding(id)));
  Tensor dec_in =
      add(full, matmul(concat_rows(emb_parts), params.get("mae.enc2dec.W")));

  Tensor dec = transformer_forward(cfg.decoder_config(ecfg.embed_dim), params, "maedec", dec_in);
  out.reconstruction = linear(dec, params.get("mae.head.W"), params.get("mae.head.b"));

  std::vector<Tensor> target_parts;
  std::vector<std::size_t> loss_rows;
  for (std::size_t m = 0; m < present.size(); ++m) {
    target_parts.push_back(patch_targets(*c.find(present[m]), reg.config().patch_size));
    if (cfg.loss_all_patches)
      for (std::size_t i = 0; i < t; ++i) loss_rows.push_back(m * t + i);
    else
      for (auto i : out.plans.at(present[m]).masked) loss_rows.push_back(m * t + i);
  }
  if (loss_rows.empty()) {
    out.loss = Tensor::scalar(0.0);
    return out;
  }
  Tensor target = concat_rows(target_parts);
  out.loss = mean(square(sub(gather_rows(out.reconstruction, loss_rows),
                             gather_rows(target, loss_rows))));
  return out;
}

}  // namespace adavit
