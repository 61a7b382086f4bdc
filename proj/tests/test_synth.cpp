#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>

#include "adavit/synth.hpp"

using namespace adavit;

namespace {

double correlation(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.size();
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a.at(i);
    mb += b.at(i);
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a.at(i) - ma) * (b.at(i) - mb);
    saa += (a.at(i) - ma) * (a.at(i) - ma);
    sbb += (b.at(i) - mb) * (b.at(i) - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

std::string temp_dir(const std::string& tag) {
  auto d = std::filesystem::temp_directory_path() / ("adavit_synth_" + tag);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d.string();
}

}  // namespace

TEST_CASE("same seed and modality set give a bitwise-identical case") {
  PhantomSpec spec;
  Case a = generate_case(spec, {"M1", "M2"}, 42);
  Case b = generate_case(spec, {"M1", "M2"}, 42);
  REQUIRE(a.volumes.size() == 2);
  for (std::size_t m = 0; m < 2; ++m)
    for (std::size_t i = 0; i < a.volumes[m].second.size(); ++i)
      CHECK(a.volumes[m].second.at(i) == b.volumes[m].second.at(i));
  for (std::size_t i = 0; i < a.label.size(); ++i) CHECK(a.label.at(i) == b.label.at(i));
  Case c = generate_case(spec, {"M1", "M2"}, 43);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.label.size() && !any_diff; ++i)
    any_diff = a.label.at(i) != c.label.at(i);
  CHECK(any_diff);
}

TEST_CASE("a modality volume does not depend on which other modalities were requested") {
  PhantomSpec spec;
  Case solo = generate_case(spec, {"M1"}, 7);
  Case trio = generate_case(spec, {"M3", "M1", "M2"}, 7);
  const Tensor& a = *solo.find("M1");
  const Tensor& b = *trio.find("M1");
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.at(i) == b.at(i));
}

TEST_CASE("lesion voxel count matches the analytic ellipsoid volume within 15%") {
  PhantomSpec spec;
  // Pin the geometry so the analytic volume is known: centered sphere of
  // radius 0.2 * 32 = 6.4 voxels (>= 4, where discretization error is small).
  spec.center_lo = spec.center_hi = 0.5;
  spec.radius_lo = spec.radius_hi = 0.2;
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    Case c = generate_case(spec, {"M1"}, seed);
    double count = 0.0;
    for (std::size_t i = 0; i < c.label.size(); ++i) count += c.label.at(i);
    const double r = 0.2 * 32.0;
    const double analytic = 4.0 / 3.0 * std::numbers::pi * r * r * r;
    CHECK(std::abs(count - analytic) / analytic < 0.15);
  }
}

TEST_CASE("modalities share the label but differ in intensity, all within [0,1]") {
  PhantomSpec spec;
  Case c = generate_case(spec, {"M1", "M2", "M3"}, 11);
  CHECK(correlation(*c.find("M1"), *c.find("M2")) < 0.999);
  CHECK(correlation(*c.find("M1"), *c.find("M3")) < 0.999);
  for (const auto& [id, v] : c.volumes)
    for (std::size_t i = 0; i < v.size(); ++i) {
      CHECK(v.at(i) >= 0.0);
      CHECK(v.at(i) <= 1.0);
    }
}

TEST_CASE("contrast polarity: M1 lesion bright, M2 lesion dark, M3 ring bright") {
  PhantomSpec spec;
  for (auto& p : spec.profiles) p.noise_sigma = 0.0;
  Case c = generate_case(spec, {"M1", "M2", "M3"}, 5);
  auto region_mean = [&](const Tensor& v, auto pred) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < v.size(); ++i)
      if (pred(i)) {
        s += v.at(i);
        ++n;
      }
    return s / static_cast<double>(n);
  };
  auto inside = [&](std::size_t i) { return c.label.at(i) == 1.0; };
  auto outside = [&](std::size_t i) { return c.label.at(i) == 0.0; };
  CHECK(region_mean(*c.find("M1"), inside) > region_mean(*c.find("M1"), outside) + 0.2);
  CHECK(region_mean(*c.find("M2"), inside) < region_mean(*c.find("M2"), outside) - 0.2);
  // M3 carries boundary information: brighter just outside the lesion than
  // deep inside it or far away. Proxy: its inside/outside contrast is small
  // while its overall variance is not.
  const double m3_contrast = std::abs(region_mean(*c.find("M3"), inside) -
                                      region_mean(*c.find("M3"), outside));
  CHECK(m3_contrast < 0.45);
  CHECK(correlation(*c.find("M3"), c.label) < correlation(*c.find("M1"), c.label));
}

TEST_CASE("errors: empty modality set, unknown modality, bad geometry") {
  PhantomSpec spec;
  CHECK_THROWS_AS(generate_case(spec, {}, 1), std::invalid_argument);
  CHECK_THROWS_AS(generate_case(spec, {"FLAIR"}, 1), std::invalid_argument);
  PhantomSpec bad = spec;
  bad.radius_hi = 0.6;  // cannot fit at center_lo = 0.35
  CHECK_THROWS_AS(generate_case(bad, {"M1"}, 1), std::invalid_argument);
}

TEST_CASE("volume file round-trip is bitwise identical and the sidecar is valid") {
  const std::string dir = temp_dir("io");
  PhantomSpec spec;
  Case c = generate_case(spec, {"M1"}, 9);
  const std::string path = dir + "/v.avol";
  write_volume(path, *c.find("M1"), c.case_id, "M1");
  Tensor back = read_volume(path);
  REQUIRE(back.shape() == c.find("M1")->shape());
  for (std::size_t i = 0; i < back.size(); ++i) CHECK(back.at(i) == c.find("M1")->at(i));
  CHECK(std::filesystem::exists(path + ".json"));
  CHECK_THROWS(read_volume(dir + "/missing.avol"));
}

TEST_CASE("generate_corpus: exact split sizes, set A vs B, files exist, manifest round-trip") {
  CorpusConfig cfg;
  cfg.out_dir = temp_dir("corpus");
  cfg.spec.volume_shape = {8, 8, 8};
  cfg.pretrain = {4, 2, 2};
  cfg.finetune = {3, 2, 2};
  cfg.drop_prob = 0.0;
  cfg.seed = 1;
  CorpusManifest m = generate_corpus(cfg);
  CHECK(m.split("pretrain-train").size() == 4);
  CHECK(m.split("pretrain-val").size() == 2);
  CHECK(m.split("pretrain-test").size() == 2);
  CHECK(m.split("finetune-train").size() == 3);
  CHECK(m.split("finetune-val").size() == 2);
  CHECK(m.split("finetune-test").size() == 2);
  for (const auto& e : m.entries) {
    const bool pretrain = e.split.starts_with("pretrain");
    CHECK(e.modalities == (pretrain ? cfg.set_a : cfg.set_b));  // q = 0: full sets
    for (const auto& [id, p] : e.volume_paths) CHECK(std::filesystem::exists(p));
    CHECK(std::filesystem::exists(e.label_path));
  }
  CorpusManifest back = read_manifest(cfg.out_dir + "/manifest.json");
  REQUIRE(back.entries.size() == m.entries.size());
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    CHECK(back.entries[i].case_id == m.entries[i].case_id);
    CHECK(back.entries[i].split == m.entries[i].split);
    CHECK(back.entries[i].modalities == m.entries[i].modalities);
    CHECK(back.entries[i].volume_paths == m.entries[i].volume_paths);
    CHECK(back.entries[i].label_path == m.entries[i].label_path);
  }
  Case c = load_case(m.entries.front());
  CHECK(c.volumes.size() == 2);
  CHECK(c.has_label());
}

TEST_CASE("optional-modality drop rate obeys a binomial bound at q = 0.5") {
  CorpusConfig cfg;
  cfg.out_dir = temp_dir("drop");
  cfg.spec.volume_shape = {8, 8, 8};
  cfg.pretrain = {1, 1, 1};
  cfg.finetune = {200, 1, 1};
  cfg.drop_prob = 0.5;
  cfg.seed = 77;
  CorpusManifest m = generate_corpus(cfg);
  const auto train = m.split("finetune-train");
  REQUIRE(train.size() == 200);
  std::size_t with_m3 = 0;
  for (const auto& e : train)
    if (e.volume_paths.count("M3")) ++with_m3;
  const double frac = static_cast<double>(with_m3) / 200.0;
  CHECK(frac > 0.4);
  CHECK(frac < 0.6);
}

TEST_CASE("corpus generation is deterministic across runs") {
  CorpusConfig cfg;
  cfg.spec.volume_shape = {8, 8, 8};
  cfg.pretrain = {2, 1, 1};
  cfg.finetune = {2, 1, 1};
  cfg.drop_prob = 0.5;
  cfg.seed = 5;
  cfg.out_dir = temp_dir("det1");
  CorpusManifest m1 = generate_corpus(cfg);
  cfg.out_dir = temp_dir("det2");
  CorpusManifest m2 = generate_corpus(cfg);
  REQUIRE(m1.entries.size() == m2.entries.size());
  for (std::size_t i = 0; i < m1.entries.size(); ++i) {
    CHECK(m1.entries[i].modalities == m2.entries[i].modalities);
    for (const auto& [id, p] : m1.entries[i].volume_paths) {
      Tensor a = read_volume(p);
      Tensor b = read_volume(m2.entries[i].volume_paths.at(id));
      for (std::size_t k = 0; k < a.size(); ++k) CHECK(a.at(k) == b.at(k));
    }
  }
}
