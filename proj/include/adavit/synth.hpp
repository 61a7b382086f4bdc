#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "adavit/case.hpp"
#include "adavit/rng.hpp"
#include "adavit/tensor.hpp"

namespace adavit {

// One modality's rendering of the shared anatomy: monotone intensity map
// (gamma), lesion contrast polarity and strength, optional boundary-ring
// signal (carries complementary information), and additive noise level.
struct ModalityProfile {
  std::string id;
  double polarity = 1.0;
  double lesion_gain = 0.45;
  double ring_gain = 0.0;
  double gamma = 1.0;
  double noise_sigma = 0.02;
};

struct PhantomSpec {
  Shape volume_shape = {32, 32, 32};
  double center_lo = 0.35, center_hi = 0.65;  // ellipsoid center, fraction of extent
  double radius_lo = 0.15, radius_hi = 0.28;  // ellipsoid radii, fraction of extent
  std::size_t background_waves = 3;
  double background_amp = 0.10;
  double ring_width = 0.25;  // half-width of the boundary ring in normalized radius
  std::vector<ModalityProfile> profiles = default_profiles();

  // M1: lesion bright; M2: lesion dark; M3: lesion-boundary ring only.
  static std::vector<ModalityProfile> default_profiles();
  const ModalityProfile& profile(const std::string& id) const;
  void validate() const;
};

// Renders one latent anatomy (smooth random background + one ellipsoid
// lesion) through each requested modality; label = lesion mask. Deterministic
// given (spec, modality_set, seed); a modality's volume does not depend on
// which other modalities were requested.
Case generate_case(const PhantomSpec& spec, const std::vector<std::string>& modality_set,
                   std::uint64_t seed);

struct CorpusCounts {
  std::size_t train = 1, val = 1, test = 1;
};

struct CorpusConfig {
  std::string out_dir;
  PhantomSpec spec;
  std::vector<std::string> set_a = {"M1", "M2"};
  std::vector<std::string> set_b = {"M1", "M2", "M3"};
  std::string optional_modality = "M3";  // dropped per finetune case with prob q
  double drop_prob = 0.0;
  CorpusCounts pretrain{48, 8, 8};
  CorpusCounts finetune{16, 8, 8};
  std::uint64_t seed = 0;
  void validate() const;
};

struct ManifestEntry {
  std::string case_id;
  std::vector<std::string> modalities;
  std::map<std::string, std::string> volume_paths;  // modality -> file path
  std::string label_path;
  std::string split;  // {pretrain,finetune}-{train,val,test}
};

struct CorpusManifest {
  Shape volume_shape;
  std::vector<ManifestEntry> entries;
  std::vector<ManifestEntry> split(const std::string& tag) const;
  std::vector<std::string> modality_union() const;
};

// Generates all cases (parallel across cases, per-case seeds split from the
// corpus seed), writes volumes/labels/sidecars under cfg.out_dir, and writes
// the manifest to <out_dir>/manifest.json.
CorpusManifest generate_corpus(const CorpusConfig& cfg);

void write_manifest(const CorpusManifest& m, const std::string& path);
CorpusManifest read_manifest(const std::string& path);

// AVOL1: 6-byte magic, u8 dtype (0 = f64), extents u64 x 3, little-endian raw
// voxels; a JSON sidecar {case_id, modality, shape} is written next to it.
void write_volume(const std::string& path, const Tensor& volume, const std::string& case_id,
                  const std::string& modality);
Tensor read_volume(const std::string& path);

Case load_case(const ManifestEntry& entry, bool with_label = true);

}  // namespace adavit
