#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <memory>

#include "adavit/mae.hpp"
#include "gradcheck.hpp"

using namespace adavit;

namespace {

struct Fixture {
  ParamStore ps;
  Rng rng{404};
  ModalityRegistry::Config mcfg;
  EncoderConfig ecfg;
  MaeConfig acfg;
  std::unique_ptr<ModalityRegistry> reg;

  Fixture() {
    mcfg.latent_dim = 4;
    mcfg.embed_dim = 8;
    mcfg.patch_size = 8;
    mcfg.volume_shape = {16, 16, 16};
    ecfg = EncoderConfig{8, 2, 2, 2, {}};
    acfg.mask_ratio = 0.5;
    acfg.dec_depth = 1;
    acfg.dec_heads = 2;
    reg = std::make_unique<ModalityRegistry>(mcfg, ps);
    reg->init_params(rng);
    init_encoder_params(ecfg, ps, "enc", rng);
    init_mae_params(acfg, mcfg.embed_dim, mcfg.patch_size, ps, rng);
  }

  Tensor rand_volume() {
    Tensor v = Tensor::zeros({16, 16, 16});
    for (auto& x : v.mutable_data()) x = rng.uniform(0.0, 1.0);
    return v;
  }
};

}  // namespace

TEST_CASE("sample_mask counts, disjointness, and clamping") {
  Rng rng(1);
  MaskPlan p = sample_mask(rng, 64, 0.7);
  CHECK(p.masked.size() == 45);  // round(0.7 * 64)
  CHECK(p.keep.size() == 19);
  CHECK(std::is_sorted(p.keep.begin(), p.keep.end()));
  CHECK(std::is_sorted(p.masked.begin(), p.masked.end()));
  std::vector<std::size_t> all(p.keep);
  all.insert(all.end(), p.masked.begin(), p.masked.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 64; ++i) CHECK(all[i] == i);

  MaskPlan full = sample_mask(rng, 8, 1.0);
  CHECK(full.keep.size() == 1);  // at least one patch always kept
  CHECK(full.masked.size() == 7);
  MaskPlan none = sample_mask(rng, 8, 0.0);
  CHECK(none.keep.size() == 8);
  CHECK(none.masked.empty());
}

TEST_CASE("sample_mask replays bitwise under the same seed") {
  Rng a(99), b(99);
  for (int i = 0; i < 5; ++i) {
    MaskPlan pa = sample_mask(a, 27, 0.7);
    MaskPlan pb = sample_mask(b, 27, 0.7);
    CHECK(pa.keep == pb.keep);
    CHECK(pa.masked == pb.masked);
  }
}

TEST_CASE("patch_targets matches direct voxel lookup and partitions the volume") {
  Rng rng(7);
  Tensor v = Tensor::randn({4, 4, 4}, rng);
  Tensor t = patch_targets(v, 2);
  REQUIRE(t.shape() == Shape{8, 8});
  // Patch row index is z-fastest over the 2x2x2 grid; voxel order inside a
  // patch is z-fastest as well.
  for (std::size_t px = 0; px < 2; ++px)
    for (std::size_t py = 0; py < 2; ++py)
      for (std::size_t pz = 0; pz < 2; ++pz) {
        const std::size_t row = (px * 2 + py) * 2 + pz;
        for (std::size_t ix = 0; ix < 2; ++ix)
          for (std::size_t iy = 0; iy < 2; ++iy)
            for (std::size_t iz = 0; iz < 2; ++iz) {
              const double expect =
                  v.at(((px * 2 + ix) * 4 + (py * 2 + iy)) * 4 + (pz * 2 + iz));
              CHECK(t.at(row * 8 + (ix * 2 + iy) * 2 + iz) == expect);
            }
      }
  double sum_t = 0.0, sum_v = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) sum_t += t.at(i);
  for (std::size_t i = 0; i < v.size(); ++i) sum_v += v.at(i);
  CHECK(sum_t == doctest::Approx(sum_v).epsilon(1e-12));
}

TEST_CASE("token accounting: encoder sees the kept tokens, decoder the full grid") {
  Fixture f;
  f.reg->register_modality("A", f.rng);
  f.reg->register_modality("B", f.rng);
  Case c{"c", {{"A", f.rand_volume()}, {"B", f.rand_volume()}}, {}};

  Rng mask_rng(11);
  MaeOutput out = mae_forward(f.acfg, f.ecfg, f.ps, *f.reg, c, mask_rng);
  // T = 8 patches per modality at 16^3 / p=8; ratio 0.5 keeps 4 per modality.
  CHECK(out.plans.at("A").keep.size() == 4);
  CHECK(out.plans.at("B").keep.size() == 4);
  CHECK(out.reconstruction.shape() == Shape{16, 512});
  REQUIRE(out.provenance.size() == 16);
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(out.provenance[i].first == (i < 8 ? "A" : "B"));
    CHECK(out.provenance[i].second == i % 8);
  }

  // Encoder path only saw the kept tokens.
  KeepSets keep{{"A", out.plans.at("A").keep}, {"B", out.plans.at("B").keep}};
  TokenSequence seq = f.reg->build_case_sequence(c, keep);
  CHECK(seq.tokens.shape() == Shape{8, 8});
}

TEST_CASE("mae_forward is bitwise deterministic under seed replay") {
  Fixture f;
  f.reg->register_modality("A", f.rng);
  Case c{"c", {{"A", f.rand_volume()}}, {}};
  Rng r1(21), r2(21);
  MaeOutput o1 = mae_forward(f.acfg, f.ecfg, f.ps, *f.reg, c, r1);
  MaeOutput o2 = mae_forward(f.acfg, f.ecfg, f.ps, *f.reg, c, r2);
  CHECK(o1.loss.item() == o2.loss.item());
  for (std::size_t i = 0; i < o1.reconstruction.size(); ++i)
    CHECK(o1.reconstruction.at(i) == o2.reconstruction.at(i));
}

TEST_CASE("loss is the MSE over masked rows only") {
  Fixture f;
  f.reg->register_modality("A", f.rng);
  f.reg->register_modality("B", f.rng);
  Case c{"c", {{"A", f.rand_volume()}, {"B", f.rand_volume()}}, {}};
  Rng mask_rng(31);
  MaeOutput out = mae_forward(f.acfg, f.ecfg, f.ps, *f.reg, c, mask_rng);

  // Independent recomputation from the reconstruction and raw volumes.
  Tensor ta = patch_targets(*c.find("A"), 8);
  Tensor tb = patch_targets(*c.find("B"), 8);
  double se = 0.0;
  std::size_t n = 0;
  for (std::size_t m = 0; m < 2; ++m) {
    const Tensor& t = m == 0 ? ta : tb;
    for (auto i : out.plans.at(m == 0 ? "A" : "B").masked)
      for (std::size_t j = 0; j < 512; ++j, ++n) {
        const double d = out.reconstruction.at((m * 8 + i) * 512 + j) - t.at(i * 512 + j);
        se += d * d;
      }
  }
  CHECK(out.loss.item() == doctest::Approx(se / static_cast<double>(n)).epsilon(1e-12));
}

TEST_CASE("zero mask ratio gives zero loss unless all patches contribute") {
  Fixture f;
  f.acfg.mask_ratio = 0.0;
  f.reg->register_modality("A", f.rng);
  Case c{"c", {{"A", f.rand_volume()}}, {}};
  Rng r(5);
  CHECK(mae_forward(f.acfg, f.ecfg, f.ps, *f.reg, c, r).loss.item() == 0.0);
  f.acfg.loss_all_patches = true;
  Rng r2(5);
  CHECK(mae_forward(f.acfg, f.ecfg, f.ps, *f.reg, c, r2).loss.item() > 0.0);
}

TEST_CASE("end-to-end gradcheck through the masked-autoencoding loss") {
  Fixture f;
  f.reg->register_modality("A", f.rng);
  f.reg->register_modality("B", f.rng);
  for (auto& v : f.ps.get("dct.proj.P").mutable_data()) v = f.rng.gaussian(0.0, 0.05);
  Case c{"c", {{"A", f.rand_volume()}, {"B", f.rand_volume()}}, {}};
  auto forward = [&] {
    Rng mask_rng(13);  // fixed plan so the objective is a function of params
    return mae_forward(f.acfg, f.ecfg, f.ps, *f.reg, c, mask_rng).loss;
  };
  Rng dir_rng(71);
  CHECK(adavit::testing::directional_gradcheck(f.ps, forward, dir_rng) < 1e-4);
}

TEST_CASE("plain gradient descent halves the reconstruction loss in 200 steps") {
  Fixture f;
  f.reg->register_modality("A", f.rng);
  Case c{"c", {{"A", f.rand_volume()}}, {}};
  auto loss_fn = [&] {
    Rng mask_rng(17);
    return mae_forward(f.acfg, f.ecfg, f.ps, *f.reg, c, mask_rng).loss;
  };
  const double initial = loss_fn().item();
  const double lr = 1.0;
  for (int step = 0; step < 200; ++step) {
    f.ps.zero_grad();
    Tensor loss = loss_fn();
    loss.backward();
    for (const auto& name : f.ps.names()) {
      Tensor p = f.ps.get(name);
      if (!p.requires_grad()) continue;
      auto& d = p.mutable_data();
      const auto& g = p.grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= lr * g[i];
    }
  }
  const double final = loss_fn().item();
  CHECK(final < 0.5 * initial);
}
