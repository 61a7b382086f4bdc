#include "adavit/modality.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace adavit {

namespace {

std::string m_name(const std::string& id) { return "mod." + id + ".m"; }
std::string emb_name(const std::string& id) { return "mod." + id + ".emb"; }

}  // namespace

ModalityRegistry::ModalityRegistry(Config cfg, ParamStore& params)
    : cfg_(std::move(cfg)), params_(&params) {
  if (cfg_.volume_shape.size() != 3) throw DimensionError("volume shape must be rank 3");
  for (auto e : cfg_.volume_shape)
    if (e % cfg_.patch_size != 0)
      throw DimensionError("patch size must divide volume extents");
}

PatchGrid ModalityRegistry::grid() const {
  const std::size_t p = cfg_.patch_size;
  return {cfg_.volume_shape[0] / p, cfg_.volume_shape[1] / p, cfg_.volume_shape[2] / p};
}

void ModalityRegistry::init_params(Rng& rng) {
  const std::size_t E = cfg_.embed_dim, l = cfg_.latent_dim, p = cfg_.patch_size;
  const double conv_std = 1.0 / std::sqrt(static_cast<double>(p * p * p));
  params_->add("dct.W", Tensor::randn({E, 1, p, p, p}, rng, conv_std, true));
  params_->add("dct.B", Tensor::zeros({E}, true));
  // Zero projector + all-ones offset: every modality starts as identity scaling.
  params_->add("dct.proj.P", Tensor::zeros({l, 2 * E}, true));
  params_->add("dct.proj.p0", Tensor::full({2 * E}, 1.0, true));
  if (cfg_.sinusoidal_pos) {
    params_->add("emb.pos", sinusoidal_pos_table(grid(), E));
  } else {
    params_->add("emb.pos", Tensor::randn({grid().count(), E}, rng, 0.02, true));
  }
}

void ModalityRegistry::attach_existing(const std::vector<std::string>& ids) {
  for (const auto& id : ids)
    if (!params_->contains(m_name(id)))
      throw std::runtime_error("registry attach: missing tensors for modality " + id);
  ids_ = ids;
}

Tensor ModalityRegistry::register_modality(const std::string& id, Rng& rng) {
  if (has(id)) throw std::invalid_argument("duplicate modality id: " + id);
  Tensor m = Tensor::randn({cfg_.latent_dim}, rng, 0.02, true);
  params_->add(m_name(id), m);
  params_->add(emb_name(id), Tensor::zeros({cfg_.embed_dim}, true));
  ids_.push_back(id);
  return m;
}

bool ModalityRegistry::has(const std::string& id) const {
  return std::find(ids_.begin(), ids_.end(), id) != ids_.end();
}

Tensor ModalityRegistry::modality_vector(const std::string& id) const {
  if (!has(id)) throw std::invalid_argument("unknown modality id: " + id);
  return params_->get(m_name(id));
}

Tensor ModalityRegistry::modality_embedding(const std::string& id) const {
  if (!has(id)) throw std::invalid_argument("unknown modality id: " + id);
  return params_->get(emb_name(id));
}

Tensor ModalityRegistry::positional_table() const { return params_->get("emb.pos"); }

std::pair<Tensor, Tensor> ModalityRegistry::project_modality(const std::string& id) const {
  const std::size_t E = cfg_.embed_dim;
  Tensor m = reshape(modality_vector(id), {1, cfg_.latent_dim});
  Tensor proj = linear(m, params_->get("dct.proj.P"), params_->get("dct.proj.p0"));  // [1, 2E]
  Tensor w_mod = reshape(slice_cols(proj, 0, E), {E});
  Tensor b_mod = reshape(slice_cols(proj, E, 2 * E), {E});
  return {w_mod, b_mod};
}

Tensor ModalityRegistry::dynamic_tokenize(const Tensor& volume, const std::string& id) const {
  if (volume.rank() != 3) throw DimensionError("dynamic_tokenize expects a scalar [X,Y,Z] volume");
  const std::size_t p = cfg_.patch_size, E = cfg_.embed_dim;
  for (std::size_t a = 0; a < 3; ++a)
    if (volume.extent(a) % p != 0)
      throw DimensionError("volume extents not divisible by patch size");
  auto [w_mod, b_mod] = project_modality(id);
  Tensor w = scale_rows(params_->get("dct.W"), w_mod);  // per-output-channel scaling
  Tensor b = mul(params_->get("dct.B"), b_mod);
  Tensor x = reshape(volume, {1, volume.extent(0), volume.extent(1), volume.extent(2)});
  Tensor y = conv3d(x, w, b, p);  // [E, gx, gy, gz]
  const std::size_t t = y.size() / E;
  return transpose_last2(reshape(y, {E, t}));  // [T, E], z-fastest patch order
}

TokenSequence ModalityRegistry::build_case_sequence(const Case& c,
                                                    const std::optional<KeepSets>& keep) const {
  if (c.volumes.empty()) throw std::invalid_argument("empty case: " + c.case_id);
  const Shape& vs = c.volumes.front().second.shape();
  for (const auto& [id, vol] : c.volumes) {
    if (!has(id)) throw std::invalid_argument("unregistered modality in case: " + id);
    if (vol.shape() != vs)
      throw DimensionError("heterogeneous volume shapes within case " + c.case_id);
  }
  const PatchGrid g = grid();
  Tensor pos = positional_table();

  std::vector<Tensor> parts;
  std::vector<std::pair<std::string, std::size_t>> provenance;
  // Registry order, so sequence layout is independent of case insertion order.
  for (const auto& id : ids_) {
    const Tensor* vol = c.find(id);
    if (!vol) continue;
    Tensor tok = dynamic_tokenize(*vol, id);  // [T, E]
    std::vector<std::size_t> indices;
    if (keep && keep->count(id)) {
      indices = keep->at(id);
      tok = gather_rows(tok, indices);
    } else {
      indices.resize(g.count());
      for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
    }
    tok = add(tok, gather_rows(pos, indices));
    if (cfg_.encoder_modality_embedding) tok = add_rowvec(tok, modality_embedding(id));
    parts.push_back(tok);
    for (auto i : indices) provenance.emplace_back(id, i);
  }
  return {concat_rows(parts), std::move(provenance), g};
}

Tensor sinusoidal_pos_table(const PatchGrid& grid, std::size_t embed_dim) {
  const std::size_t t = grid.count();
  Tensor table = Tensor::zeros({t, embed_dim});
  auto& d = table.mutable_data();
  const std::size_t band = embed_dim / 3;
  for (std::size_t i = 0; i < t; ++i) {
    const std::size_t ix = i / (grid.gy * grid.gz);
    const std::size_t iy = (i / grid.gz) % grid.gy;
    const std::size_t iz = i % grid.gz;
    const std::size_t coords[3] = {ix, iy, iz};
    for (std::size_t a = 0; a < 3; ++a) {
      const std::size_t o = a * band;
      const std::size_t w = (a == 2) ? embed_dim - 2 * band : band;
      for (std::size_t j = 0; j < w; ++j) {
        const double freq = std::pow(10000.0, -2.0 * (j / 2) / static_cast<double>(w));
        const double v = static_cast<double>(coords[a]) * freq;
        d[i * embed_dim + o + j] = (j % 2 == 0) ? std::sin(v) : std::cos(v);
      }
    }
  }
  return table;
}

}  // namespace adavit
