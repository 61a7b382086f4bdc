// adavit: single-binary command-line interface.
//
// Subcommands: synth, train, pretrain-ssl, finetune, eval, experiment,
// gradcheck, ablate. Configuration comes from a JSON file (--config) with
// unknown keys rejected; CLI flags override file values. Errors leave a
// structured JSON object on stderr and a nonzero exit code.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <CLI11.hpp>
#include <json.hpp>

#include "adavit/gradcheck.hpp"
#include "adavit/train.hpp"

using namespace adavit;
using nlohmann::json;

namespace {

// ----------------------------------------------------------------- run config

struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 0;  // 0 = library default
  std::string out_dir = "out";
  std::string preset = "desk";
  std::string fusion = "max";
  double mask_ratio = 0.7;
  bool loss_all_patches = false;
  std::size_t few_shot_k = 8;

  std::string corpus_dir;  // default <out_dir>/corpus
  Shape volume_shape = {32, 32, 32};
  CorpusCounts pretrain{48, 8, 8};
  CorpusCounts finetune{16, 8, 8};
  double drop_prob = 0.5;

  TrainConfig train;      // supervised; lr 1e-4
  TrainConfig ssl;        // lr 1e-5
  std::size_t ssl_steps = 2000;

  std::string resolved_corpus_dir() const {
    return corpus_dir.empty() ? out_dir + "/corpus" : corpus_dir;
  }
};

void reject_unknown(const json& j, const std::vector<std::string>& allowed,
                    const std::string& where) {
  for (const auto& [key, _] : j.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw std::invalid_argument("unknown config key '" + key + "' in " + where);
}

CorpusCounts counts_from_json(const json& j, const std::string& where) {
  reject_unknown(j, {"train", "val", "test"}, where);
  CorpusCounts c;
  c.train = j.value("train", c.train);
  c.val = j.value("val", c.val);
  c.test = j.value("test", c.test);
  return c;
}

void train_from_json(const json& j, TrainConfig& t, const std::string& where) {
  reject_unknown(j, {"lr_init", "epochs", "batch_size", "weight_decay", "eta_min", "max_steps"},
                 where);
  t.lr_init = j.value("lr_init", t.lr_init);
  t.epochs = j.value("epochs", t.epochs);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.weight_decay = j.value("weight_decay", t.weight_decay);
  t.eta_min = j.value("eta_min", t.eta_min);
  t.max_steps = j.value("max_steps", t.max_steps);
}

RunConfig load_run_config(const std::string& path) {
  RunConfig rc;
  rc.train.epochs = 16;
  rc.ssl.lr_init = 1e-5;
  rc.ssl.epochs = 1;
  if (const char* env = std::getenv("ADAVIT_OUT")) rc.out_dir = env;
  if (path.empty()) return rc;

  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot read config file: " + path);
  json j = json::parse(is);
  reject_unknown(j,
                 {"seed", "threads", "out_dir", "preset", "fusion", "mask_ratio",
                  "loss_all_patches", "few_shot_k", "corpus", "train", "ssl", "ssl_steps"},
                 "top level");
  rc.seed = j.value("seed", rc.seed);
  rc.threads = j.value("threads", rc.threads);
  rc.out_dir = j.value("out_dir", rc.out_dir);
  rc.preset = j.value("preset", rc.preset);
  rc.fusion = j.value("fusion", rc.fusion);
  rc.mask_ratio = j.value("mask_ratio", rc.mask_ratio);
  rc.loss_all_patches = j.value("loss_all_patches", rc.loss_all_patches);
  rc.few_shot_k = j.value("few_shot_k", rc.few_shot_k);
  if (j.contains("corpus")) {
    const json& c = j["corpus"];
    reject_unknown(c, {"dir", "volume_shape", "pretrain", "finetune", "drop_prob"}, "corpus");
    rc.corpus_dir = c.value("dir", rc.corpus_dir);
    if (c.contains("volume_shape")) rc.volume_shape = c["volume_shape"].get<Shape>();
    if (c.contains("pretrain")) rc.pretrain = counts_from_json(c["pretrain"], "corpus.pretrain");
    if (c.contains("finetune")) rc.finetune = counts_from_json(c["finetune"], "corpus.finetune");
    rc.drop_prob = c.value("drop_prob", rc.drop_prob);
  }
  if (j.contains("train")) train_from_json(j["train"], rc.train, "train");
  if (j.contains("ssl")) train_from_json(j["ssl"], rc.ssl, "ssl");
  rc.ssl_steps = j.value("ssl_steps", rc.ssl_steps);
  return rc;
}

json echo_config(const RunConfig& rc) {
  return {{"seed", rc.seed},
          {"threads", rc.threads},
          {"out_dir", rc.out_dir},
          {"preset", rc.preset},
          {"fusion", rc.fusion},
          {"mask_ratio", rc.mask_ratio},
          {"loss_all_patches", rc.loss_all_patches},
          {"few_shot_k", rc.few_shot_k},
          {"corpus_dir", rc.resolved_corpus_dir()},
          {"volume_shape", rc.volume_shape},
          {"drop_prob", rc.drop_prob},
          {"train",
           {{"lr_init", rc.train.lr_init},
            {"epochs", rc.train.epochs},
            {"batch_size", rc.train.batch_size},
            {"weight_decay", rc.train.weight_decay},
            {"max_steps", rc.train.max_steps}}},
          {"ssl",
           {{"lr_init", rc.ssl.lr_init},
            {"epochs", rc.ssl.epochs},
            {"batch_size", rc.ssl.batch_size},
            {"max_steps", rc.ssl.max_steps}}},
          {"ssl_steps", rc.ssl_steps}};
}

ModelConfig model_config(const RunConfig& rc, bool with_mae) {
  ModelConfig mc = ModelConfig::desk();
  mc.enc = EncoderConfig::preset(rc.preset);
  mc.mod.embed_dim = mc.enc.embed_dim;
  mc.mod.volume_shape = rc.volume_shape;
  mc.seg.volume_shape = rc.volume_shape;
  mc.seg.fusion = fusion_from_string(rc.fusion);
  mc.mae.mask_ratio = rc.mask_ratio;
  mc.mae.loss_all_patches = rc.loss_all_patches;
  mc.with_mae = with_mae;
  return mc;
}

std::vector<Case> load_split(const CorpusManifest& m, const std::string& tag) {
  std::vector<Case> cases;
  for (const auto& e : m.split(tag)) cases.push_back(load_case(e));
  if (cases.empty()) throw std::invalid_argument("split '" + tag + "' is empty");
  return cases;
}

std::vector<std::string> split_modalities(const std::vector<Case>& cases) {
  std::vector<std::string> ids;
  for (const auto& c : cases)
    for (const auto& id : c.modality_ids())
      if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
  return ids;
}

CorpusManifest open_manifest(const RunConfig& rc) {
  return read_manifest(rc.resolved_corpus_dir() + "/manifest.json");
}

// -------------------------------------------------------------------- commands

int cmd_synth(const RunConfig& rc) {
  CorpusConfig cc;
  cc.out_dir = rc.resolved_corpus_dir();
  cc.spec.volume_shape = rc.volume_shape;
  cc.pretrain = rc.pretrain;
  cc.finetune = rc.finetune;
  cc.drop_prob = rc.drop_prob;
  cc.seed = rc.seed;
  CorpusManifest m = generate_corpus(cc);
  std::cout << "wrote " << m.entries.size() << " cases to " << cc.out_dir << "/manifest.json\n";
  return 0;
}

int cmd_train(const RunConfig& rc) {
  CorpusManifest m = open_manifest(rc);
  std::vector<Case> train = load_split(m, "pretrain-train");
  std::vector<Case> val = load_split(m, "pretrain-val");
  Rng rng(rc.seed);
  AdaViTModel model = AdaViTModel::create(model_config(rc, false), split_modalities(train), rng);
  TrainConfig tc = rc.train;
  tc.seed = rc.seed;
  TrainResult r = train_supervised(model, train, val, tc);
  std::filesystem::create_directories(rc.out_dir);
  save_checkpoint(rc.out_dir + "/supervised.ckpt", model, rng.state(), tc.epochs, r.val_history);
  ExperimentReport rep;
  rep.name = "train";
  rep.seed = rc.seed;
  rep.config_echo = echo_config(rc).dump();
  rep.mean_dice = evaluate(model, val, &rep.per_case_dice);
  rep.loss_curve = r.loss_history;
  rep.extras["best_val_dice"] = r.best_val;
  rep.extras["steps"] = static_cast<double>(r.steps);
  write_report(rep, rc.out_dir);
  std::cout << "train: best val Dice " << r.best_val << " in " << r.steps << " steps; checkpoint "
            << rc.out_dir << "/supervised.ckpt\n";
  return 0;
}

int cmd_pretrain_ssl(const RunConfig& rc) {
  CorpusManifest m = open_manifest(rc);
  std::vector<Case> train = load_split(m, "pretrain-train");
  Rng rng(rc.seed);
  AdaViTModel model = AdaViTModel::create(model_config(rc, true), split_modalities(train), rng);
  TrainConfig tc = rc.ssl;
  tc.seed = rc.seed;
  if (tc.max_steps == 0) tc.max_steps = rc.ssl_steps;
  tc.epochs = std::max<std::size_t>(
      tc.epochs, (tc.max_steps * tc.batch_size + train.size() - 1) / train.size());
  TrainResult r = train_ssl(model, train, tc);
  std::filesystem::create_directories(rc.out_dir);
  save_checkpoint(rc.out_dir + "/ssl.ckpt", model, rng.state(), tc.epochs, r.loss_history);
  ExperimentReport rep;
  rep.name = "pretrain_ssl";
  rep.seed = rc.seed;
  rep.config_echo = echo_config(rc).dump();
  rep.loss_curve = r.loss_history;
  rep.extras["final_loss"] = r.loss_history.back();
  rep.extras["steps"] = static_cast<double>(r.steps);
  write_report(rep, rc.out_dir);
  std::cout << "pretrain-ssl: loss " << r.loss_history.front() << " -> " << r.loss_history.back()
            << " over " << r.steps << " steps; checkpoint " << rc.out_dir << "/ssl.ckpt\n";
  return 0;
}

int cmd_finetune(const RunConfig& rc, const std::string& ckpt) {
  CorpusManifest m = open_manifest(rc);
  std::vector<Case> train = load_split(m, "finetune-train");
  std::vector<Case> val = load_split(m, "finetune-val");
  Rng rng(rc.seed);
  AdaViTModel model = load_checkpoint(ckpt);
  model.ensure_modalities(split_modalities(train), rng);
  TrainConfig tc = rc.train;
  tc.seed = rc.seed;
  TrainResult r = train_supervised(model, train, val, tc);
  std::filesystem::create_directories(rc.out_dir);
  save_checkpoint(rc.out_dir + "/finetuned.ckpt", model, rng.state(), tc.epochs, r.val_history);
  ExperimentReport rep;
  rep.name = "finetune";
  rep.seed = rc.seed;
  rep.config_echo = echo_config(rc).dump();
  rep.mean_dice = evaluate(model, val, &rep.per_case_dice);
  rep.loss_curve = r.loss_history;
  rep.extras["best_val_dice"] = r.best_val;
  write_report(rep, rc.out_dir);
  std::cout << "finetune: best val Dice " << r.best_val << "; checkpoint " << rc.out_dir
            << "/finetuned.ckpt\n";
  return 0;
}

int cmd_eval(const RunConfig& rc, const std::string& ckpt, const std::string& split) {
  CorpusManifest m = open_manifest(rc);
  std::vector<Case> cases = load_split(m, split);
  AdaViTModel model = load_checkpoint(ckpt);
  Rng rng(rc.seed);
  model.ensure_modalities(split_modalities(cases), rng);
  ExperimentReport rep;
  rep.name = "eval";
  rep.seed = rc.seed;
  rep.config_echo = echo_config(rc).dump();
  rep.mean_dice = evaluate(model, cases, &rep.per_case_dice);
  write_report(rep, rc.out_dir);
  std::cout << "eval[" << split << "]: mean Dice " << rep.mean_dice << " over "
            << rep.per_case_dice.size() << " cases\n";
  return 0;
}

int cmd_experiment(const RunConfig& rc, const std::string& ckpt) {
  CorpusManifest m = open_manifest(rc);
  std::vector<Case> pre_train = load_split(m, "pretrain-train");
  std::vector<Case> pre_val = load_split(m, "pretrain-val");
  std::vector<Case> pre_test = load_split(m, "pretrain-test");
  std::vector<Case> fin_train = load_split(m, "finetune-train");
  std::vector<Case> fin_test = load_split(m, "finetune-test");

  Rng rng(rc.seed);
  TrainConfig tc = rc.train;
  tc.seed = rc.seed;

  AdaViTModel model = [&] {
    if (!ckpt.empty()) return load_checkpoint(ckpt);
    AdaViTModel fresh =
        AdaViTModel::create(model_config(rc, false), split_modalities(pre_train), rng);
    train_supervised(fresh, pre_train, pre_val, tc);
    return fresh;
  }();
  std::filesystem::create_directories(rc.out_dir);
  save_checkpoint(rc.out_dir + "/pretrained.ckpt", model, rng.state(), tc.epochs, {});

  const double matched = evaluate(model, pre_test);
  ExperimentReport zs = run_zero_shot(model, fin_test, rng);
  zs.seed = rc.seed;
  zs.config_echo = echo_config(rc).dump();
  zs.extras["matched_dice"] = matched;
  write_report(zs, rc.out_dir);

  std::vector<Case> fewshot(fin_train.begin(),
                            fin_train.begin() + std::min(rc.few_shot_k, fin_train.size()));
  ExperimentReport fs = run_few_shot(model, fewshot, fin_test, tc);
  fs.config_echo = echo_config(rc).dump();
  write_report(fs, rc.out_dir);

  ExperimentReport bt = run_backward_transfer(model, pre_test);
  bt.seed = rc.seed;
  bt.config_echo = echo_config(rc).dump();
  bt.extras["pre_finetune_dice"] = matched;
  write_report(bt, rc.out_dir);
  save_checkpoint(rc.out_dir + "/finetuned.ckpt", model, rng.state(), tc.epochs, {});

  // Channel-concat baseline: pretrain on set A, then first-layer surgery for
  // the extended test set and zero-filled channels for backward transfer.
  Rng blrng(rc.seed);
  BaselineModel bl =
      BaselineModel::create(model_config(rc, false), split_modalities(pre_train), blrng);
  train_baseline(bl, pre_train, pre_val, tc);
  std::string mismatch_report;
  try {
    bl.predict(fin_test.front());
  } catch (const ChannelMismatch& e) {
    mismatch_report = e.report_json;
  }
  bl.adapt_first_layer(split_modalities(fin_test), blrng);
  bl.zero_fill = true;
  ExperimentReport blz;
  blz.name = "baseline_zero_shot";
  blz.seed = rc.seed;
  blz.config_echo = echo_config(rc).dump();
  blz.mean_dice = evaluate_baseline(bl, fin_test, &blz.per_case_dice);
  write_report(blz, rc.out_dir);
  TrainConfig btc = tc;
  TrainResult blr = train_baseline(bl, fewshot, {}, btc);
  ExperimentReport blb;
  blb.name = "baseline_backward";
  blb.seed = rc.seed;
  blb.config_echo = echo_config(rc).dump();
  blb.mean_dice = evaluate_baseline(bl, pre_test, &blb.per_case_dice);
  blb.loss_curve = blr.loss_history;
  write_report(blb, rc.out_dir);

  json summary{{"matched_dice", matched},
               {"zero_shot_dice", zs.mean_dice},
               {"few_shot_dice", fs.mean_dice},
               {"backward_dice", bt.mean_dice},
               {"baseline_zero_shot_dice", blz.mean_dice},
               {"baseline_backward_dice", blb.mean_dice},
               {"baseline_mismatch_report",
                mismatch_report.empty() ? json::object() : json::parse(mismatch_report)}};
  std::ofstream os(rc.out_dir + "/experiment_summary.json");
  os << summary.dump(2) << "\n";
  std::cout << summary.dump(2) << "\n";
  return 0;
}

// Per-op finite-difference table plus the three end-to-end paths.
int cmd_gradcheck() {
  struct Row {
    std::string name;
    double err;
    double tol;
  };
  std::vector<Row> rows;
  Rng rng(12345);

  auto op = [&](const std::string& name, Tensor& input, const std::function<Tensor()>& f,
                double tol = 1e-5) {
    rows.push_back({name, adavit::testing::gradcheck(input, f), tol});
  };

  {
    Tensor a = Tensor::randn({3, 4}, rng, 1.0, true), b = Tensor::randn({3, 4}, rng, 1.0, true);
    op("add", a, [&] { return sum(add(a, b)); });
    op("sub", a, [&] { return sum(square(sub(a, b))); });
    op("mul", a, [&] { return sum(mul(a, b)); });
    op("square", a, [&] { return sum(square(a)); });
    op("scale/add_scalar", a, [&] { return sum(add_scalar(scale(a, 1.7), 0.3)); });
    op("divide", a, [&] { return sum(divide(a, add_scalar(square(b), 1.0))); });
    op("gelu", a, [&] { return sum(gelu(a)); });
    op("sigmoid", a, [&] { return sum(sigmoid(a)); });
    op("reshape", a, [&] { return sum(square(reshape(a, {4, 3}))); });
    op("softmax", a, [&] { return sum(square(softmax(a))); });
    op("mean_over_axis", a, [&] { return sum(square(mean_over_axis(a, 0))); });
    op("max_over_axis", a, [&] { return sum(square(max_over_axis(a, 0))); });
    op("gather/concat_rows", a,
       [&] { return sum(square(concat_rows({gather_rows(a, {2, 0, 2}), b}))); });
    op("slice/concat_cols", a,
       [&] { return sum(square(concat_cols({slice_cols(a, 1, 3), slice_cols(a, 0, 2)}))); });
  }
  {
    Tensor a = Tensor::randn({3, 4}, rng, 1.0, true);
    Tensor w = Tensor::randn({4, 2}, rng, 1.0, true);
    Tensor b = Tensor::randn({2}, rng, 1.0, true);
    Tensor g = Tensor::randn({4}, rng, 0.3, true);
    Tensor be = Tensor::randn({4}, rng, 0.3, true);
    Tensor rv = Tensor::randn({4}, rng, 1.0, true);
    Tensor rs = Tensor::randn({3}, rng, 1.0, true);
    op("matmul", w, [&] { return sum(square(matmul(a, w))); });
    op("linear", b, [&] { return sum(square(linear(a, w, b))); });
    op("layer_norm", g, [&] { return sum(square(add(layer_norm(a, g, be), a))); });
    op("transpose_last2", a, [&] { return sum(square(transpose_last2(a))); });
    op("add_rowvec", rv, [&] { return sum(square(add_rowvec(a, rv))); });
    op("scale_rows", rs, [&] { return sum(square(scale_rows(a, rs))); });
    op("stack/mean", a, [&] { return mean(square(stack({a, square(a)}))); });
  }
  {
    Tensor x = Tensor::randn({2, 4, 4, 4}, rng, 1.0, true);
    Tensor w = Tensor::randn({3, 2, 2, 2, 2}, rng, 0.5, true);
    Tensor b = Tensor::randn({3}, rng, 0.5, true);
    op("conv3d(stride 2)", w, [&] { return sum(square(conv3d(x, w, b, 2))); });
    op("conv3d(pad 1)", x, [&] {
      Tensor w3 = reshape(w, {3, 2, 2, 2, 2});
      return sum(square(conv3d(x, w3, b, 1, 1)));
    });
    Tensor dw = Tensor::randn({2, 3, 2, 2, 2}, rng, 0.5, true);
    op("transposed_conv3d", dw, [&] { return sum(square(transposed_conv3d(x, dw, b, 2))); });
  }

  // End-to-end paths at toy scale; max fusion is piecewise linear, so give the
  // FD a small step to keep both evaluations on one side of argmax ties.
  {
    ModalityRegistry::Config mcfg;
    mcfg.latent_dim = 4;
    mcfg.embed_dim = 8;
    mcfg.patch_size = 8;
    mcfg.volume_shape = {16, 16, 16};
    EncoderConfig ecfg{8, 2, 4, 2, {}};
    PhantomSpec spec;
    spec.volume_shape = {16, 16, 16};
    Case c = generate_case(spec, {"M1", "M2"}, 99);

    for (Fusion fusion : {Fusion::Max, Fusion::Mean}) {
      ParamStore ps;
      Rng prng(606);
      ModalityRegistry reg(mcfg, ps);
      reg.init_params(prng);
      SegHeadConfig scfg;
      scfg.fusion = fusion;
      scfg.widths = {8, 6, 4, 4};
      scfg.patch_size = 8;
      scfg.volume_shape = {16, 16, 16};
      init_encoder_params(ecfg, ps, "enc", prng);
      init_seg_params(scfg, 8, 4, ps, prng);
      reg.register_modality("M1", prng);
      reg.register_modality("M2", prng);
      for (auto& v : ps.get("dct.proj.P").mutable_data()) v = prng.gaussian(0.0, 0.05);
      auto forward = [&] {
        TokenSequence seq = reg.build_case_sequence(c);
        EncoderOutput out = encode(ecfg, ps, "enc", seq);
        return dice_loss(segment(scfg, ecfg, ps, reg, out, c), c.label);
      };
      Rng dir(71);
      rows.push_back({"end-to-end dct->encoder->" + to_string(fusion) + "-fusion->decoder->dice",
                      adavit::testing::directional_gradcheck(ps, forward, dir, 1e-7), 1e-4});
    }
    {
      ParamStore ps;
      Rng prng(606);
      ModalityRegistry reg(mcfg, ps);
      reg.init_params(prng);
      init_encoder_params(ecfg, ps, "enc", prng);
      MaeConfig acfg;
      acfg.mask_ratio = 0.5;
      acfg.dec_depth = 1;
      acfg.dec_heads = 2;
      init_mae_params(acfg, 8, 8, ps, prng);
      reg.register_modality("M1", prng);
      reg.register_modality("M2", prng);
      for (auto& v : ps.get("dct.proj.P").mutable_data()) v = prng.gaussian(0.0, 0.05);
      auto forward = [&] {
        Rng mask(13);
        return mae_forward(acfg, ecfg, ps, reg, c, mask).loss;
      };
      Rng dir(71);
      rows.push_back({"end-to-end masked-autoencoder->masked-mse",
                      adavit::testing::directional_gradcheck(ps, forward, dir), 1e-4});
    }
  }

  bool ok = true;
  std::printf("%-55s %12s %9s  %s\n", "op", "rel_err", "tol", "status");
  for (const auto& r : rows) {
    const bool pass = r.err < r.tol;
    ok = ok && pass;
    std::printf("%-55s %12.3e %9.0e  %s\n", r.name.c_str(), r.err, r.tol,
                pass ? "PASS" : "FAIL");
  }
  return ok ? 0 : 1;
}

int cmd_ablate(const RunConfig& rc) {
  CorpusManifest m = open_manifest(rc);
  std::vector<Case> pre_train = load_split(m, "pretrain-train");
  std::vector<Case> fin_train = load_split(m, "finetune-train");
  std::vector<Case> fin_val = load_split(m, "finetune-val");
  std::filesystem::create_directories(rc.out_dir);

  // Masking-ratio table: SSL pretrain at each ratio, identical finetune.
  json ratio_table = json::array();
  for (double ratio : {0.5, 0.7, 0.9}) {
    RunConfig r2 = rc;
    r2.mask_ratio = ratio;
    Rng rng(rc.seed);
    AdaViTModel model = AdaViTModel::create(model_config(r2, true), split_modalities(pre_train), rng);
    TrainConfig sc = rc.ssl;
    sc.seed = rc.seed;
    if (sc.max_steps == 0) sc.max_steps = rc.ssl_steps;
    TrainResult sr = train_ssl(model, pre_train, sc);
    model.ensure_modalities(split_modalities(fin_train), rng);
    TrainConfig tc = rc.train;
    tc.seed = rc.seed;
    TrainResult fr = train_supervised(model, fin_train, fin_val, tc);
    ratio_table.push_back({{"mask_ratio", ratio},
                           {"ssl_final_loss", sr.loss_history.back()},
                           {"finetune_val_dice", fr.best_val}});
  }

  // Fusion table: identical supervised runs differing only in the fusion flag.
  json fusion_table = json::array();
  for (const std::string& fusion : {std::string("max"), std::string("mean")}) {
    RunConfig r2 = rc;
    r2.fusion = fusion;
    Rng rng(rc.seed);
    AdaViTModel model =
        AdaViTModel::create(model_config(r2, false), split_modalities(fin_train), rng);
    TrainConfig tc = rc.train;
    tc.seed = rc.seed;
    TrainResult fr = train_supervised(model, fin_train, fin_val, tc);
    fusion_table.push_back({{"fusion", fusion}, {"val_dice", fr.best_val}});
  }

  // Encoder presets: construction + analytic parameter counts.
  json preset_table = json::array();
  for (const std::string& name : {std::string("base"), std::string("large"), std::string("huge")}) {
    EncoderConfig e = EncoderConfig::preset(name);
    ParamStore ps;
    Rng rng(1);
    init_encoder_params(e, ps, "enc", rng);
    preset_table.push_back({{"preset", name},
                            {"embed_dim", e.embed_dim},
                            {"heads", e.num_heads},
                            {"depth", e.depth},
                            {"params", ps.total_params()},
                            {"analytic_params", e.analytic_param_count()},
                            {"match", ps.total_params() == e.analytic_param_count()}});
  }

  json out{{"config", echo_config(rc)},
           {"mask_ratio_table", ratio_table},
           {"fusion_table", fusion_table},
           {"preset_table", preset_table}};
  std::ofstream os(rc.out_dir + "/ablations.json");
  os << out.dump(2) << "\n";
  std::cout << out.dump(2) << "\n";
  return 0;
}

std::string error_code(const std::exception& e) {
  if (dynamic_cast<const CkptNotFound*>(&e)) return "CKPT_NOT_FOUND";
  if (dynamic_cast<const ChannelMismatch*>(&e)) return "CHANNEL_MISMATCH";
  if (dynamic_cast<const DimensionError*>(&e)) return "DIMENSION_ERROR";
  if (dynamic_cast<const std::invalid_argument*>(&e)) return "INVALID_ARGUMENT";
  return "RUNTIME_ERROR";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adavit: variable-modality 3D segmentation transformer"};
  app.require_subcommand(1);
  app.fallthrough();  // allow global flags after the subcommand name

  std::string config_path, ckpt, split = "finetune-test";
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> out_dir, fusion, preset;
  std::optional<double> mask_ratio;
  bool loss_all_patches = false;

  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--seed", seed, "RNG seed (overrides config)");
  app.add_option("--threads", threads, "worker threads; 1 forces full determinism");
  app.add_option("--out-dir", out_dir, "output directory (or env ADAVIT_OUT)");
  app.add_option("--ckpt", ckpt, "checkpoint path");
  app.add_option("--fusion", fusion, "modality fusion: max|mean")
      ->check(CLI::IsMember({"max", "mean"}));
  app.add_option("--mask-ratio", mask_ratio, "MAE mask ratio in [0,1]");
  app.add_option("--preset", preset, "encoder preset: desk|base|large|huge")
      ->check(CLI::IsMember({"desk", "base", "large", "huge"}));
  app.add_flag("--loss-all-patches", loss_all_patches, "MAE loss over all patches, not only masked");

  auto* synth = app.add_subcommand("synth", "generate the synthetic corpus");
  auto* train = app.add_subcommand("train", "supervised training on the pretrain split");
  auto* ssl = app.add_subcommand("pretrain-ssl", "masked-autoencoder pretraining");
  auto* finetune = app.add_subcommand("finetune", "finetune a checkpoint on the finetune split");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  eval->add_option("--split", split, "manifest split tag");
  auto* experiment =
      app.add_subcommand("experiment", "pretrain -> zero-shot -> few-shot -> backward transfer");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference table over all ops");
  auto* ablate = app.add_subcommand("ablate", "mask-ratio / fusion / preset ablation tables");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig rc = load_run_config(config_path);
    if (seed) rc.seed = *seed;
    if (threads) rc.threads = *threads;
    if (out_dir) rc.out_dir = *out_dir;
    if (fusion) rc.fusion = *fusion;
    if (preset) rc.preset = *preset;
    if (mask_ratio) rc.mask_ratio = *mask_ratio;
    if (loss_all_patches) rc.loss_all_patches = true;
#ifdef _OPENMP
    if (rc.threads > 0) omp_set_num_threads(rc.threads);
#endif
    if (synth->parsed()) return cmd_synth(rc);
    if (train->parsed()) return cmd_train(rc);
    if (ssl->parsed()) return cmd_pretrain_ssl(rc);
    if (finetune->parsed()) return cmd_finetune(rc, ckpt);
    if (eval->parsed()) return cmd_eval(rc, ckpt, split);
    if (experiment->parsed()) return cmd_experiment(rc, ckpt);
    if (gradcheck->parsed()) return cmd_gradcheck();
    if (ablate->parsed()) return cmd_ablate(rc);
    return 1;
  } catch (const std::exception& e) {
    json err{{"error", error_code(e)}, {"message", e.what()}};
    if (const auto* cm = dynamic_cast<const ChannelMismatch*>(&e))
      err["report"] = json::parse(cm->report_json);
    std::cerr << err.dump() << "\n";
    return 2;
  }
}
