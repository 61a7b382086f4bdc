#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "adavit/case.hpp"
#include "adavit/decoder.hpp"
#include "adavit/encoder.hpp"
#include "adavit/mae.hpp"
#include "adavit/modality.hpp"
#include "adavit/synth.hpp"
#include "adavit/tensor.hpp"

namespace adavit {

// --- losses, metric, optimizer, schedule -------------------------------------

// pred in [0,1] and target in {0,1}, both [C, X, Y, Z] (a rank-3 target is
// treated as C = 1): 1 - mean_c (2 sum(p t) + eps) / (sum p + sum t + eps).
Tensor dice_loss(const Tensor& pred, const Tensor& target, double eps = 1e-5);

// Same overlap formula at eps = 0 on binarized inputs, one score per class;
// empty prediction vs empty target scores 1 by convention.
std::vector<double> dice_metric(const Tensor& pred_bin, const Tensor& target);

double cosine_lr(std::size_t t, std::size_t total, double lr_init, double eta_min);

struct AdamState {
  std::map<std::string, std::vector<double>> m, v;
  std::size_t t = 0;
};

// Bias-corrected Adam with decoupled weight decay (wd * lr * theta), applied
// to every parameter with a gradient. Throws on non-finite gradients.
void adam_step(ParamStore& params, AdamState& state, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8, double weight_decay = 1e-2);

// --- model assembly -----------------------------------------------------------

struct ModelConfig {
  ModalityRegistry::Config mod;
  EncoderConfig enc;
  SegHeadConfig seg;
  MaeConfig mae;
  bool with_mae = false;  // allocate the masked-autoencoder head too

  static ModelConfig desk();  // 32^3 / p=8 / E=96 / 4 blocks
  void validate() const;
};

struct AdaViTModel {
  ModelConfig cfg;
  // Heap-held so the registry's pointer into it survives moves of the model.
  std::unique_ptr<ParamStore> params;
  std::unique_ptr<ModalityRegistry> registry;

  static AdaViTModel create(const ModelConfig& cfg, const std::vector<std::string>& modalities,
                            Rng& rng);
  // Registers ids not seen at creation (identity-scaling start for them).
  void ensure_modalities(const std::vector<std::string>& ids, Rng& rng);

  Tensor predict(const Case& c) const;            // [C, X, Y, Z] probabilities
  Tensor supervised_loss(const Case& c) const;    // dice_loss against c.label
  Tensor ssl_loss(const Case& c, Rng& mask_rng) const;  // masked MSE
};

// --- checkpointing (ACKPT1) ----------------------------------------------------

struct CkptNotFound : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  ModelConfig cfg;
  std::vector<std::string> modality_ids;
  std::uint64_t rng_state = 0;
  std::size_t epoch = 0;
  std::vector<double> metric_history;
};

void save_checkpoint(const std::string& path, const AdaViTModel& model, std::uint64_t rng_state,
                     std::size_t epoch, const std::vector<double>& metric_history);
// Throws CkptNotFound if the file is missing. Returns the model plus metadata.
AdaViTModel load_checkpoint(const std::string& path, Checkpoint* meta = nullptr);

// --- training loops -------------------------------------------------------------

struct TrainConfig {
  double lr_init = 1e-4;  // supervised default; SSL uses 1e-5
  std::size_t epochs = 1;
  std::size_t batch_size = 4;
  double weight_decay = 1e-2;
  double eta_min = 0.0;
  std::uint64_t seed = 0;
  std::size_t max_steps = 0;    // 0 = no cap; steps are optimizer updates
  double stop_at_val = 0.0;     // early-stop once validation Dice reaches this (0 = off)
  void validate() const;
};

struct TrainResult {
  std::vector<double> loss_history;  // one mean loss per epoch
  std::vector<double> val_history;   // one mean Dice per epoch (empty val => absent)
  double best_val = 0.0;
  std::size_t steps = 0;
};

// Per-case forward with gradient accumulation to cfg.batch_size, Adam update,
// cosine learning rate per epoch. With a nonempty validation set the
// best-validation parameters are restored into the model before returning.
TrainResult train_supervised(AdaViTModel& model, const std::vector<Case>& train,
                             const std::vector<Case>& val, const TrainConfig& cfg);

// Same loop over the masked-autoencoding loss (model.cfg.with_mae required).
TrainResult train_ssl(AdaViTModel& model, const std::vector<Case>& train, const TrainConfig& cfg);

// Mean foreground Dice at threshold 0.5, plus the per-case scores.
double evaluate(const AdaViTModel& model, const std::vector<Case>& cases,
                std::vector<std::pair<std::string, double>>* per_case = nullptr);

// --- channel-concat baseline ----------------------------------------------------

// Structured incompatibility error for the concat baseline: carries a JSON
// report mirroring a first-conv channel mismatch.
struct ChannelMismatch : std::runtime_error {
  std::string report_json;
  ChannelMismatch(const std::string& what, std::string report)
      : std::runtime_error(what), report_json(std::move(report)) {}
};

// Standard ViT + decoder over the channel-concatenated volume stack; the
// modality list is fixed at construction.
struct BaselineModel {
  ModelConfig cfg;                      // mod.latent_dim unused
  std::vector<std::string> modalities;  // fixed channel order
  std::unique_ptr<ParamStore> params;
  bool zero_fill = false;  // absent modalities become all-zero channels

  static BaselineModel create(const ModelConfig& cfg, const std::vector<std::string>& modalities,
                              Rng& rng);
  // Rejects cases whose modality set differs from the fixed list (unless
  // zero_fill covers the gap); extra modalities always mismatch.
  Tensor predict(const Case& c) const;
  Tensor supervised_loss(const Case& c) const;
  // First-layer surgery: replaces the input-consuming convolutions with
  // freshly initialized ones for the new channel count; all other pretrained
  // tensors are kept.
  void adapt_first_layer(const std::vector<std::string>& new_modalities, Rng& rng);
};

TrainResult train_baseline(BaselineModel& model, const std::vector<Case>& train,
                           const std::vector<Case>& val, const TrainConfig& cfg);
double evaluate_baseline(const BaselineModel& model, const std::vector<Case>& cases,
                         std::vector<std::pair<std::string, double>>* per_case = nullptr);

// --- experiment protocol ----------------------------------------------------------

struct ExperimentReport {
  std::string name;
  std::uint64_t seed = 0;
  std::string config_echo;  // JSON text
  std::vector<std::pair<std::string, double>> per_case_dice;
  double mean_dice = 0.0;
  std::map<std::string, double> extras;
  std::vector<double> loss_curve;
};

// Writes <out_dir>/<name>.json and <out_dir>/<name>.csv (case_id,dice rows).
void write_report(const ExperimentReport& r, const std::string& out_dir);

ExperimentReport run_zero_shot(AdaViTModel& model, const std::vector<Case>& test, Rng& rng);
// K-case finetune followed by evaluation on `test`; extras carry the
// zero-shot baseline and the delta.
ExperimentReport run_few_shot(AdaViTModel& model, const std::vector<Case>& fewshot,
                              const std::vector<Case>& test, const TrainConfig& cfg);
ExperimentReport run_backward_transfer(const AdaViTModel& model, const std::vector<Case>& pretrain_test);

}  // namespace adavit
