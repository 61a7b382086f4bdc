#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <cmath>

#include "adavit/decoder.hpp"
#include "gradcheck.hpp"

using namespace adavit;

namespace {

struct Fixture {
  ParamStore ps;
  Rng rng{303};
  ModalityRegistry::Config mcfg;
  EncoderConfig ecfg;
  SegHeadConfig scfg;
  std::unique_ptr<ModalityRegistry> reg;

  explicit Fixture(Fusion fusion = Fusion::Max) {
    mcfg.latent_dim = 4;
    mcfg.embed_dim = 8;
    mcfg.patch_size = 8;
    mcfg.volume_shape = {16, 16, 16};
    ecfg = EncoderConfig{8, 2, 4, 2, {}};
    scfg.num_classes = 1;
    scfg.fusion = fusion;
    scfg.widths = {8, 6, 4, 4};
    scfg.patch_size = 8;
    scfg.volume_shape = {16, 16, 16};
    reg = std::make_unique<ModalityRegistry>(mcfg, ps);
    reg->init_params(rng);
    init_encoder_params(ecfg, ps, "enc", rng);
    init_seg_params(scfg, mcfg.embed_dim, mcfg.latent_dim, ps, rng);
  }

  Tensor rand_volume() {
    Tensor v = Tensor::zeros({16, 16, 16});
    for (auto& x : v.mutable_data()) x = rng.uniform(0.0, 1.0);
    return v;
  }

  Tensor run(const Case& c) {
    TokenSequence seq = reg->build_case_sequence(c);
    EncoderOutput out = encode(ecfg, ps, "enc", seq);
    return segment(scfg, ecfg, ps, *reg, out, c);
  }
};

}  // namespace

TEST_CASE("fuse_modalities: single modality is an identity reshape") {
  Tensor tokens = Tensor::from({8, 2}, [] {
    std::vector<double> d(16);
    for (std::size_t i = 0; i < 16; ++i) d[i] = static_cast<double>(i);
    return d;
  }());
  std::vector<std::pair<std::string, std::size_t>> prov;
  for (std::size_t i = 0; i < 8; ++i) prov.emplace_back("A", i);
  Tensor fused = fuse_modalities(tokens, prov, {2, 2, 2}, Fusion::Max);
  CHECK(fused.shape() == Shape{2, 2, 2, 2});
  // channel e, patch i layout: fused[e * 8 + i] == tokens[i * 2 + e]
  for (std::size_t e = 0; e < 2; ++e)
    for (std::size_t i = 0; i < 8; ++i) CHECK(fused.at(e * 8 + i) == tokens.at(i * 2 + e));
}

TEST_CASE("fuse_modalities: elementwise max and mean across two modalities") {
  // patch 0 tokens: [1,5] and [3,2]
  Tensor tokens = Tensor::from({2, 2}, {1, 5, 3, 2});
  std::vector<std::pair<std::string, std::size_t>> prov{{"A", 0}, {"B", 0}};
  Tensor mx = fuse_modalities(tokens, prov, {1, 1, 1}, Fusion::Max);
  CHECK(mx.at(0) == 3.0);
  CHECK(mx.at(1) == 5.0);
  Tensor mn = fuse_modalities(tokens, prov, {1, 1, 1}, Fusion::Mean);
  CHECK(mn.at(0) == 2.0);
  CHECK(mn.at(1) == 3.5);
}

TEST_CASE("fuse_modalities: invariant to provenance order, coverage error") {
  Rng rng(5);
  Tensor tokens = Tensor::randn({16, 3}, rng);
  std::vector<std::pair<std::string, std::size_t>> prov;
  for (const char* id : {"A", "B"})
    for (std::size_t i = 0; i < 8; ++i) prov.emplace_back(id, i);

  Tensor base = fuse_modalities(tokens, prov, {2, 2, 2}, Fusion::Max);

  std::vector<std::size_t> perm(16);
  std::iota(perm.begin(), perm.end(), 0);
  Rng shuffler(9);
  shuffler.shuffle(perm);
  Tensor shuffled_tokens = gather_rows(tokens, perm);
  std::vector<std::pair<std::string, std::size_t>> shuffled_prov;
  for (auto i : perm) shuffled_prov.push_back(prov[i]);
  Tensor shuffled = fuse_modalities(shuffled_tokens, shuffled_prov, {2, 2, 2}, Fusion::Max);
  CHECK(base.data() == shuffled.data());

  // uneven contributor counts still fuse (per-patch fallback)
  auto uneven_prov = prov;
  uneven_prov.resize(12);  // B covers only patches 0..3
  Tensor uneven = fuse_modalities(gather_rows(tokens, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}),
                                  uneven_prov, {2, 2, 2}, Fusion::Max);
  CHECK(uneven.shape() == Shape{3, 2, 2, 2});

  // a patch with zero contributors is a coverage error
  std::vector<std::pair<std::string, std::size_t>> bad{{"A", 0}, {"A", 1}};
  CHECK_THROWS_WITH_AS((void)fuse_modalities(Tensor::randn({2, 3}, rng), bad, {2, 2, 2}, Fusion::Max),
                       doctest::Contains("coverage"), std::runtime_error);
}

TEST_CASE("monotone fusion dominance for max") {
  Rng rng(6);
  Tensor tokens = Tensor::randn({16, 4}, rng);
  std::vector<std::pair<std::string, std::size_t>> prov;
  for (const char* id : {"A", "B"})
    for (std::size_t i = 0; i < 8; ++i) prov.emplace_back(id, i);
  Tensor fused = fuse_modalities(tokens, prov, {2, 2, 2}, Fusion::Max);
  for (std::size_t m = 0; m < 2; ++m)
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t e = 0; e < 4; ++e)
        CHECK(fused.at(e * 8 + i) >= tokens.at((m * 8 + i) * 4 + e));
}

TEST_CASE("segment output shape for N in {1,2,3} with one parameter set") {
  Fixture f;
  for (const char* id : {"A", "B", "C"}) f.reg->register_modality(id, f.rng);
  std::vector<Case> cases = {
      {"n1", {{"A", f.rand_volume()}}, {}},
      {"n2", {{"A", f.rand_volume()}, {"B", f.rand_volume()}}, {}},
      {"n3", {{"A", f.rand_volume()}, {"B", f.rand_volume()}, {"C", f.rand_volume()}}, {}},
  };
  for (const auto& c : cases) {
    Tensor out = f.run(c);
    CHECK(out.shape() == Shape{1, 16, 16, 16});
    for (double v : out.data()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("all-zero parameters give a uniform 0.5 probability map") {
  Fixture f;
  f.reg->register_modality("A", f.rng);
  for (const auto& name : f.ps.names())
    std::fill(f.ps.get(name).mutable_data().begin(), f.ps.get(name).mutable_data().end(), 0.0);
  Case c{"c", {{"A", f.rand_volume()}}, {}};
  Tensor out = f.run(c);
  for (double v : out.data()) CHECK(v == 0.5);
}

TEST_CASE("modality-order invariance of the final segmentation") {
  for (Fusion fusion : {Fusion::Max, Fusion::Mean}) {
    Fixture f(fusion);
    f.reg->register_modality("A", f.rng);
    f.reg->register_modality("B", f.rng);
    for (auto& v : f.ps.get("dct.proj.P").mutable_data()) v = f.rng.gaussian(0.0, 0.1);
    Tensor va = f.rand_volume(), vb = f.rand_volume();
    Case fwd{"c", {{"A", va}, {"B", vb}}, {}};
    Case rev{"c", {{"B", vb}, {"A", va}}, {}};
    Tensor o1 = f.run(fwd);
    Tensor o2 = f.run(rev);
    double max_diff = 0.0;
    for (std::size_t i = 0; i < o1.size(); ++i)
      max_diff = std::max(max_diff, std::abs(o1.at(i) - o2.at(i)));
    if (fusion == Fusion::Max)
      CHECK(max_diff == 0.0);
    else
      CHECK(max_diff < 1e-12);
  }
}

TEST_CASE("end-to-end gradcheck through encoder, max fusion, decoder") {
  Fixture f;
  f.reg->register_modality("A", f.rng);
  f.reg->register_modality("B", f.rng);
  for (auto& v : f.ps.get("dct.proj.P").mutable_data()) v = f.rng.gaussian(0.0, 0.05);
  Case c{"c", {{"A", f.rand_volume()}, {"B", f.rand_volume()}}, {}};
  Tensor target = f.rand_volume();
  auto forward = [&] {
    Tensor pred = f.run(c);
    return mean(square(sub(pred, reshape(target, {1, 16, 16, 16}))));
  };
  Rng dir_rng(77);
  // Max fusion is piecewise linear; the FD step must be small enough that the
  // +/-h evaluations do not straddle an argmax tie.
  CHECK(adavit::testing::directional_gradcheck(f.ps, forward, dir_rng, 1e-7) < 1e-4);
}

TEST_CASE("multi-class output uses channel softmax") {
  Fixture f;
  f.scfg.num_classes = 3;
  // head conv must be re-created for 3 classes
  ParamStore ps2;
  Rng rng2(9);
  auto reg2 = std::make_unique<ModalityRegistry>(f.mcfg, ps2);
  reg2->init_params(rng2);
  init_encoder_params(f.ecfg, ps2, "enc", rng2);
  init_seg_params(f.scfg, f.mcfg.embed_dim, f.mcfg.latent_dim, ps2, rng2);
  reg2->register_modality("A", rng2);
  Case c{"c", {{"A", f.rand_volume()}}, {}};
  TokenSequence seq = reg2->build_case_sequence(c);
  EncoderOutput out = encode(f.ecfg, ps2, "enc", seq);
  Tensor pred = segment(f.scfg, f.ecfg, ps2, *reg2, out, c);
  CHECK(pred.shape() == Shape{3, 16, 16, 16});
  for (std::size_t vox = 0; vox < 16 * 16 * 16; ++vox) {
    double s = 0.0;
    for (std::size_t cch = 0; cch < 3; ++cch) s += pred.at(cch * 16 * 16 * 16 + vox);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
  }
}
