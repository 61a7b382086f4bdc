#include "adavit/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace adavit {

namespace {

using nlohmann::json;

constexpr char kCkptMagic[7] = {'A', 'C', 'K', 'P', 'T', '1', '\n'};

Shape as_c4(const Shape& s) {
  if (s.size() == 4) return s;
  if (s.size() == 3) return {1, s[0], s[1], s[2]};
  throw DimensionError("expected a rank-3 or rank-4 volume, got " + shape_str(s));
}

}  // namespace

// --- losses, metric, optimizer, schedule -------------------------------------

Tensor dice_loss(const Tensor& pred, const Tensor& target, double eps) {
  const Shape ps = as_c4(pred.shape()), ts = as_c4(target.shape());
  if (ps != ts) throw DimensionError("dice_loss: prediction/target shape mismatch");
  const std::size_t c = ps[0], v = ps[1] * ps[2] * ps[3];
  Tensor p = reshape(pred, {c, v});
  Tensor t = reshape(target, {c, v});
  const double dv = static_cast<double>(v);
  Tensor sum_pt = scale(mean_over_axis(mul(p, t), 1), dv);
  Tensor sum_p = scale(mean_over_axis(p, 1), dv);
  Tensor sum_t = scale(mean_over_axis(t, 1), dv);
  Tensor frac = divide(add_scalar(scale(sum_pt, 2.0), eps), add_scalar(add(sum_p, sum_t), eps));
  return add_scalar(scale(mean(frac), -1.0), 1.0);
}

std::vector<double> dice_metric(const Tensor& pred_bin, const Tensor& target) {
  const Shape ps = as_c4(pred_bin.shape()), ts = as_c4(target.shape());
  if (ps != ts) throw DimensionError("dice_metric: prediction/target shape mismatch");
  const std::size_t c = ps[0], v = ps[1] * ps[2] * ps[3];
  std::vector<double> scores(c);
  for (std::size_t k = 0; k < c; ++k) {
    double inter = 0.0, sp = 0.0, st = 0.0;
    for (std::size_t i = 0; i < v; ++i) {
      const double p = pred_bin.at(k * v + i) >= 0.5 ? 1.0 : 0.0;
      const double t = target.at(k * v + i) >= 0.5 ? 1.0 : 0.0;
      inter += p * t;
      sp += p;
      st += t;
    }
    scores[k] = (sp + st == 0.0) ? 1.0 : 2.0 * inter / (sp + st);
  }
  return scores;
}

double cosine_lr(std::size_t t, std::size_t total, double lr_init, double eta_min) {
  if (total == 0) return lr_init;
  const double frac = static_cast<double>(t) / static_cast<double>(total);
  return eta_min + 0.5 * (lr_init - eta_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

void adam_step(ParamStore& params, AdamState& state, double lr, double beta1, double beta2,
               double eps, double weight_decay) {
  ++state.t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (const auto& name : params.names()) {
    Tensor p = params.get(name);
    if (!p.requires_grad() || !p.has_grad()) continue;
    const auto& g = p.grad();
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) m.assign(g.size(), 0.0);
    if (v.empty()) v.assign(g.size(), 0.0);
    auto& d = p.mutable_data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i]))
        throw std::runtime_error("non-finite gradient in parameter " + name + " at index " +
                                 std::to_string(i));
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      d[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * d[i]);
    }
  }
}

// --- model assembly -----------------------------------------------------------

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.mod.latent_dim = 16;
  c.mod.embed_dim = 96;
  c.mod.patch_size = 8;
  c.mod.volume_shape = {32, 32, 32};
  c.enc = EncoderConfig::desk();
  c.seg.num_classes = 1;
  c.seg.widths = {32, 16, 8, 8};
  c.seg.patch_size = 8;
  c.seg.volume_shape = {32, 32, 32};
  c.mae = MaeConfig{};
  return c;
}

void ModelConfig::validate() const {
  enc.validate();
  seg.validate();
  if (enc.embed_dim != mod.embed_dim)
    throw DimensionError("encoder/tokenizer embed_dim mismatch");
  if (seg.patch_size != mod.patch_size || seg.volume_shape != mod.volume_shape)
    throw DimensionError("decoder/tokenizer geometry mismatch");
  if (with_mae) mae.validate(mod.embed_dim);
}

AdaViTModel AdaViTModel::create(const ModelConfig& cfg, const std::vector<std::string>& modalities,
                                Rng& rng) {
  cfg.validate();
  AdaViTModel m;
  m.cfg = cfg;
  m.params = std::make_unique<ParamStore>();
  m.registry = std::make_unique<ModalityRegistry>(cfg.mod, *m.params);
  m.registry->init_params(rng);
  init_encoder_params(cfg.enc, *m.params, "enc", rng);
  init_seg_params(cfg.seg, cfg.mod.embed_dim, cfg.mod.latent_dim, *m.params, rng);
  if (cfg.with_mae) init_mae_params(cfg.mae, cfg.mod.embed_dim, cfg.mod.patch_size, *m.params, rng);
  for (const auto& id : modalities) m.registry->register_modality(id, rng);
  return m;
}

void AdaViTModel::ensure_modalities(const std::vector<std::string>& ids, Rng& rng) {
  for (const auto& id : ids)
    if (!registry->has(id)) registry->register_modality(id, rng);
}

Tensor AdaViTModel::predict(const Case& c) const {
  TokenSequence seq = registry->build_case_sequence(c);
  EncoderOutput out = encode(cfg.enc, *params, "enc", seq);
  return segment(cfg.seg, cfg.enc, *params, *registry, out, c);
}

Tensor AdaViTModel::supervised_loss(const Case& c) const {
  if (!c.has_label()) throw std::invalid_argument("case " + c.case_id + " has no label");
  return dice_loss(predict(c), c.label);
}

Tensor AdaViTModel::ssl_loss(const Case& c, Rng& mask_rng) const {
  if (!cfg.with_mae) throw std::logic_error("model was created without the MAE head");
  return mae_forward(cfg.mae, cfg.enc, *params, *registry, c, mask_rng).loss;
}

// --- config (de)serialization ---------------------------------------------------

namespace {

json mod_to_json(const ModalityRegistry::Config& c) {
  return {{"latent_dim", c.latent_dim},
          {"embed_dim", c.embed_dim},
          {"patch_size", c.patch_size},
          {"volume_shape", c.volume_shape},
          {"encoder_modality_embedding", c.encoder_modality_embedding},
          {"sinusoidal_pos", c.sinusoidal_pos}};
}

ModalityRegistry::Config mod_from_json(const json& j) {
  ModalityRegistry::Config c;
  c.latent_dim = j.at("latent_dim");
  c.embed_dim = j.at("embed_dim");
  c.patch_size = j.at("patch_size");
  c.volume_shape = j.at("volume_shape").get<Shape>();
  c.encoder_modality_embedding = j.at("encoder_modality_embedding");
  c.sinusoidal_pos = j.at("sinusoidal_pos");
  return c;
}

json enc_to_json(const EncoderConfig& c) {
  return {{"embed_dim", c.embed_dim},
          {"num_heads", c.num_heads},
          {"depth", c.depth},
          {"mlp_ratio", c.mlp_ratio},
          {"tap_layers", c.tap_layers}};
}

EncoderConfig enc_from_json(const json& j) {
  EncoderConfig c;
  c.embed_dim = j.at("embed_dim");
  c.num_heads = j.at("num_heads");
  c.depth = j.at("depth");
  c.mlp_ratio = j.at("mlp_ratio");
  c.tap_layers = j.at("tap_layers").get<std::vector<std::size_t>>();
  return c;
}

json seg_to_json(const SegHeadConfig& c) {
  return {{"num_classes", c.num_classes},
          {"fusion", to_string(c.fusion)},
          {"widths", c.widths},
          {"patch_size", c.patch_size},
          {"volume_shape", c.volume_shape}};
}

SegHeadConfig seg_from_json(const json& j) {
  SegHeadConfig c;
  c.num_classes = j.at("num_classes");
  c.fusion = fusion_from_string(j.at("fusion"));
  c.widths = j.at("widths").get<std::vector<std::size_t>>();
  c.patch_size = j.at("patch_size");
  c.volume_shape = j.at("volume_shape").get<Shape>();
  return c;
}

json mae_to_json(const MaeConfig& c) {
  return {{"mask_ratio", c.mask_ratio},
          {"dec_dim", c.dec_dim},
          {"dec_depth", c.dec_depth},
          {"dec_heads", c.dec_heads},
          {"loss_all_patches", c.loss_all_patches}};
}

MaeConfig mae_from_json(const json& j) {
  MaeConfig c;
  c.mask_ratio = j.at("mask_ratio");
  c.dec_dim = j.at("dec_dim");
  c.dec_depth = j.at("dec_depth");
  c.dec_heads = j.at("dec_heads");
  c.loss_all_patches = j.at("loss_all_patches");
  return c;
}

json model_to_json(const ModelConfig& c) {
  return {{"mod", mod_to_json(c.mod)},
          {"enc", enc_to_json(c.enc)},
          {"seg", seg_to_json(c.seg)},
          {"mae", mae_to_json(c.mae)},
          {"with_mae", c.with_mae}};
}

ModelConfig model_from_json(const json& j) {
  ModelConfig c;
  c.mod = mod_from_json(j.at("mod"));
  c.enc = enc_from_json(j.at("enc"));
  c.seg = seg_from_json(j.at("seg"));
  c.mae = mae_from_json(j.at("mae"));
  c.with_mae = j.at("with_mae");
  return c;
}

}  // namespace

// --- checkpointing (ACKPT1) ----------------------------------------------------

void save_checkpoint(const std::string& path, const AdaViTModel& model, std::uint64_t rng_state,
                     std::size_t epoch, const std::vector<double>& metric_history) {
  json manifest;
  manifest["model"] = model_to_json(model.cfg);
  manifest["modalities"] = model.registry->ids();
  manifest["rng_state"] = rng_state;
  manifest["epoch"] = epoch;
  manifest["metric_history"] = metric_history;
  json tensors = json::array();
  for (const auto& name : model.params->names())
    tensors.push_back({{"name", name},
                       {"shape", model.params->get(name).shape()},
                       {"requires_grad", model.params->get(name).requires_grad()}});
  manifest["tensors"] = std::move(tensors);

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
  os.write(kCkptMagic, sizeof(kCkptMagic));
  const std::string text = manifest.dump();
  std::uint64_t len = text.size();
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(len >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& name : model.params->names())
    write_tensor(os, model.params->get(name), Dtype::f64);
  if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

AdaViTModel load_checkpoint(const std::string& path, Checkpoint* meta) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CkptNotFound("checkpoint not found: " + path);
  char magic[7];
  is.read(magic, 7);
  if (!is || std::memcmp(magic, kCkptMagic, 7) != 0)
    throw std::runtime_error("bad checkpoint magic in " + path);
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  json manifest = json::parse(text);

  AdaViTModel m;
  m.cfg = model_from_json(manifest.at("model"));
  m.params = std::make_unique<ParamStore>();
  for (const auto& entry : manifest.at("tensors")) {
    Tensor t = read_tensor(is);
    if (t.shape() != entry.at("shape").get<Shape>())
      throw std::runtime_error("checkpoint blob shape mismatch for " +
                               entry.at("name").get<std::string>());
    m.params->add(entry.at("name").get<std::string>(),
                  Tensor::from(t.shape(), t.data(), entry.at("requires_grad").get<bool>()));
  }
  if (!is) throw std::runtime_error("truncated checkpoint: " + path);
  const auto ids = manifest.at("modalities").get<std::vector<std::string>>();
  m.registry = std::make_unique<ModalityRegistry>(m.cfg.mod, *m.params);
  m.registry->attach_existing(ids);
  if (meta) {
    meta->cfg = m.cfg;
    meta->modality_ids = ids;
    meta->rng_state = manifest.at("rng_state");
    meta->epoch = manifest.at("epoch");
    meta->metric_history = manifest.at("metric_history").get<std::vector<double>>();
  }
  return m;
}

// --- training loops -------------------------------------------------------------

void TrainConfig::validate() const {
  if (lr_init <= 0.0) throw std::invalid_argument("lr_init must be > 0");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
}

namespace {

using Snapshot = std::map<std::string, std::vector<double>>;

Snapshot take_snapshot(const ParamStore& ps) {
  Snapshot s;
  for (const auto& name : ps.names()) s[name] = ps.get(name).data();
  return s;
}

void restore_snapshot(ParamStore& ps, const Snapshot& s) {
  for (const auto& [name, data] : s) ps.get(name).mutable_data() = data;
}

TrainResult training_loop(ParamStore& ps, const std::vector<Case>& train, const TrainConfig& cfg,
                          const std::function<Tensor(const Case&)>& loss_of,
                          const std::function<double()>& validate) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("empty training split");
  TrainResult result;
  AdamState adam;
  Rng order_rng(cfg.seed);
  Snapshot best;
  bool capped = false;

  for (std::size_t epoch = 0; epoch < cfg.epochs && !capped; ++epoch) {
    const double lr = cosine_lr(epoch, cfg.epochs, cfg.lr_init, cfg.eta_min);
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    order_rng.shuffle(order);

    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t b0 = 0; b0 < order.size() && !capped; b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
      ps.zero_grad();
      for (std::size_t i = b0; i < b1; ++i) {
        Tensor loss = loss_of(train[order[i]]);
        const double lv = loss.item();
        if (!std::isfinite(lv))
          throw std::runtime_error("non-finite training loss on case " +
                                   train[order[i]].case_id);
        scale(loss, 1.0 / static_cast<double>(b1 - b0)).backward();
        epoch_loss += lv;
        ++seen;
      }
      adam_step(ps, adam, lr, 0.9, 0.999, 1e-8, cfg.weight_decay);
      ++result.steps;
      if (cfg.max_steps != 0 && result.steps >= cfg.max_steps) capped = true;
    }
    result.loss_history.push_back(epoch_loss / static_cast<double>(seen));

    if (validate) {
      const double val = validate();
      result.val_history.push_back(val);
      if (best.empty() || val > result.best_val) {
        result.best_val = val;
        best = take_snapshot(ps);
      }
      if (cfg.stop_at_val > 0.0 && val >= cfg.stop_at_val) break;
    }
  }
  if (!best.empty()) restore_snapshot(ps, best);
  return result;
}

}  // namespace

TrainResult train_supervised(AdaViTModel& model, const std::vector<Case>& train,
                             const std::vector<Case>& val, const TrainConfig& cfg) {
  std::function<double()> validate;
  if (!val.empty()) validate = [&] { return evaluate(model, val); };
  return training_loop(*model.params, train, cfg,
                       [&](const Case& c) { return model.supervised_loss(c); }, validate);
}

TrainResult train_ssl(AdaViTModel& model, const std::vector<Case>& train, const TrainConfig& cfg) {
  Rng mask_rng(cfg.seed ^ 0x53534c6d61736bULL);  // independent masking stream
  return training_loop(*model.params, train, cfg,
                       [&](const Case& c) { return model.ssl_loss(c, mask_rng); }, {});
}

double evaluate(const AdaViTModel& model, const std::vector<Case>& cases,
                std::vector<std::pair<std::string, double>>* per_case) {
  if (cases.empty()) throw std::invalid_argument("empty evaluation split");
  double total = 0.0;
  for (const auto& c : cases) {
    const std::vector<double> scores = dice_metric(model.predict(c), c.label);
    double s = 0.0;
    for (double x : scores) s += x;
    s /= static_cast<double>(scores.size());
    total += s;
    if (per_case) per_case->emplace_back(c.case_id, s);
  }
  return total / static_cast<double>(cases.size());
}

// --- channel-concat baseline ----------------------------------------------------

namespace {

Tensor baseline_stack(const BaselineModel& m, const Case& c) {
  // Any modality outside the fixed list, or a missing one without zero-fill,
  // is a first-conv channel mismatch.
  std::vector<std::string> extra;
  for (const auto& [id, v] : c.volumes)
    if (std::find(m.modalities.begin(), m.modalities.end(), id) == m.modalities.end())
      extra.push_back(id);
  std::vector<std::string> missing;
  for (const auto& id : m.modalities)
    if (!c.find(id)) missing.push_back(id);
  if (!extra.empty() || (!missing.empty() && !m.zero_fill)) {
    json report{{"error", "CHANNEL_MISMATCH"},
                {"expected_modalities", m.modalities},
                {"case_modalities", c.modality_ids()},
                {"expected_channels", m.modalities.size()},
                {"case_channels", c.volumes.size()},
                {"remedy",
                 "adjust the first convolutional layer's input channels "
                 "(adapt_first_layer) or enable zero_fill for absent modalities"}};
    throw ChannelMismatch("channel mismatch on case " + c.case_id, report.dump());
  }
  const Shape& vs = m.cfg.mod.volume_shape;
  const std::size_t v = vs[0] * vs[1] * vs[2];
  std::vector<double> data(m.modalities.size() * v, 0.0);
  for (std::size_t k = 0; k < m.modalities.size(); ++k)
    if (const Tensor* vol = c.find(m.modalities[k])) {
      if (vol->shape() != vs) throw DimensionError("baseline volume shape mismatch");
      std::copy(vol->data().begin(), vol->data().end(), data.begin() + k * v);
    }
  return Tensor::from({m.modalities.size(), vs[0], vs[1], vs[2]}, std::move(data));
}

}  // namespace

BaselineModel BaselineModel::create(const ModelConfig& cfg,
                                    const std::vector<std::string>& modalities, Rng& rng) {
  cfg.validate();
  if (modalities.empty()) throw std::invalid_argument("baseline needs a fixed modality list");
  BaselineModel m;
  m.cfg = cfg;
  m.modalities = modalities;
  m.params = std::make_unique<ParamStore>();
  const std::size_t n = modalities.size(), e = cfg.mod.embed_dim, p = cfg.mod.patch_size;
  const Shape& vs = cfg.mod.volume_shape;
  const std::size_t t = (vs[0] / p) * (vs[1] / p) * (vs[2] / p);
  const std::size_t ws = cfg.seg.widths.back();
  m.params->add("bl.patch.W",
                Tensor::randn({e, n, p, p, p}, rng,
                              1.0 / std::sqrt(static_cast<double>(n * p * p * p)), true));
  m.params->add("bl.patch.b", Tensor::zeros({e}, true));
  m.params->add("bl.pos", Tensor::randn({t, e}, rng, 0.02, true));
  m.params->add("bl.stem.w",
                Tensor::randn({ws, n, 3, 3, 3}, rng,
                              1.0 / std::sqrt(static_cast<double>(27 * n)), true));
  m.params->add("bl.stem.b", Tensor::zeros({ws}, true));
  init_encoder_params(cfg.enc, *m.params, "enc", rng);
  init_seg_core_params(cfg.seg, e, *m.params, rng);
  return m;
}

Tensor BaselineModel::predict(const Case& c) const {
  Tensor x = baseline_stack(*this, c);
  const std::size_t p = cfg.mod.patch_size, e = cfg.mod.embed_dim;
  Tensor grid4 = conv3d(x, params->get("bl.patch.W"), params->get("bl.patch.b"), p);
  const PatchGrid grid{grid4.extent(1), grid4.extent(2), grid4.extent(3)};
  Tensor tokens = add(transpose_last2(reshape(grid4, {e, grid.count()})), params->get("bl.pos"));
  TokenSequence seq;
  seq.tokens = tokens;
  seq.grid = grid;
  for (std::size_t i = 0; i < grid.count(); ++i) seq.provenance.emplace_back("concat", i);
  EncoderOutput out = encode(cfg.enc, *params, "enc", seq);
  std::vector<Tensor> fused_taps;
  for (auto tap : cfg.enc.effective_taps())
    fused_taps.push_back(fuse_modalities(out.taps.at(tap), seq.provenance, grid, cfg.seg.fusion));
  Tensor stem = conv3d(x, params->get("bl.stem.w"), params->get("bl.stem.b"), 1, 1);
  return decode_grids(cfg.seg, *params, fused_taps, stem);
}

Tensor BaselineModel::supervised_loss(const Case& c) const {
  if (!c.has_label()) throw std::invalid_argument("case " + c.case_id + " has no label");
  return dice_loss(predict(c), c.label);
}

// Changing the channel count replaces the input-consuming convolutions with
// freshly initialized ones; every other pretrained tensor is kept. This is
// the standard surgery for channel-concat models: the old first layer is not
// transferable to a different channel layout.
void BaselineModel::adapt_first_layer(const std::vector<std::string>& new_modalities, Rng& rng) {
  if (new_modalities.empty()) throw std::invalid_argument("baseline needs a fixed modality list");
  const std::size_t e = cfg.mod.embed_dim, p = cfg.mod.patch_size;
  const std::size_t ws = cfg.seg.widths.back();
  const std::size_t n = new_modalities.size();
  params->get("bl.patch.W") = Tensor::randn(
      {e, n, p, p, p}, rng, 1.0 / std::sqrt(static_cast<double>(n * p * p * p)), true);
  params->get("bl.patch.b") = Tensor::zeros({e}, true);
  params->get("bl.stem.w") =
      Tensor::randn({ws, n, 3, 3, 3}, rng, 1.0 / std::sqrt(static_cast<double>(27 * n)), true);
  params->get("bl.stem.b") = Tensor::zeros({ws}, true);
  modalities = new_modalities;
}

TrainResult train_baseline(BaselineModel& model, const std::vector<Case>& train,
                           const std::vector<Case>& val, const TrainConfig& cfg) {
  std::function<double()> validate;
  if (!val.empty()) validate = [&] { return evaluate_baseline(model, val); };
  return training_loop(*model.params, train, cfg,
                       [&](const Case& c) { return model.supervised_loss(c); }, validate);
}

double evaluate_baseline(const BaselineModel& model, const std::vector<Case>& cases,
                         std::vector<std::pair<std::string, double>>* per_case) {
  if (cases.empty()) throw std::invalid_argument("empty evaluation split");
  double total = 0.0;
  for (const auto& c : cases) {
    const std::vector<double> scores = dice_metric(model.predict(c), c.label);
    double s = 0.0;
    for (double x : scores) s += x;
    s /= static_cast<double>(scores.size());
    total += s;
    if (per_case) per_case->emplace_back(c.case_id, s);
  }
  return total / static_cast<double>(cases.size());
}

// --- experiment protocol ----------------------------------------------------------

void write_report(const ExperimentReport& r, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  json j;
  j["name"] = r.name;
  j["seed"] = r.seed;
  j["config"] = r.config_echo.empty() ? json::object() : json::parse(r.config_echo);
  j["mean_dice"] = r.mean_dice;
  j["per_case_dice"] = json::array();
  for (const auto& [id, d] : r.per_case_dice) j["per_case_dice"].push_back({{"case_id", id}, {"dice", d}});
  j["extras"] = r.extras;
  j["loss_curve"] = r.loss_curve;
  std::ofstream os(out_dir + "/" + r.name + ".json");
  if (!os) throw std::runtime_error("cannot write report in " + out_dir);
  os << j.dump(2) << "\n";
  std::ofstream csv(out_dir + "/" + r.name + ".csv");
  csv << "case_id,dice\n";
  for (const auto& [id, d] : r.per_case_dice) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", d);
    csv << id << "," << buf << "\n";
  }
}

ExperimentReport run_zero_shot(AdaViTModel& model, const std::vector<Case>& test, Rng& rng) {
  std::vector<std::string> ids;
  for (const auto& c : test)
    for (const auto& id : c.modality_ids())
      if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
  model.ensure_modalities(ids, rng);
  ExperimentReport r;
  r.name = "zero_shot";
  r.mean_dice = evaluate(model, test, &r.per_case_dice);
  return r;
}

ExperimentReport run_few_shot(AdaViTModel& model, const std::vector<Case>& fewshot,
                              const std::vector<Case>& test, const TrainConfig& cfg) {
  Rng rng(cfg.seed);
  ExperimentReport zero = run_zero_shot(model, test, rng);
  ExperimentReport r;
  r.name = "few_shot";
  r.seed = cfg.seed;
  r.extras["zero_shot_dice"] = zero.mean_dice;
  r.extras["k"] = static_cast<double>(fewshot.size());
  if (!fewshot.empty()) {
    TrainResult tr = train_supervised(model, fewshot, {}, cfg);
    r.loss_curve = tr.loss_history;
  }
  r.mean_dice = evaluate(model, test, &r.per_case_dice);
  r.extras["delta_vs_zero_shot"] = r.mean_dice - zero.mean_dice;
  return r;
}

ExperimentReport run_backward_transfer(const AdaViTModel& model,
                                       const std::vector<Case>& pretrain_test) {
  ExperimentReport r;
  r.name = "backward_transfer";
  r.mean_dice = evaluate(model, pretrain_test, &r.per_case_dice);
  return r;
}

}  // namespace adavit
