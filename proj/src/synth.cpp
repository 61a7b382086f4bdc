#include "adavit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

namespace adavit {

namespace {

using nlohmann::json;

constexpr char kVolumeMagic[6] = {'A', 'V', 'O', 'L', '1', '\n'};

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

void minmax_normalize(std::vector<double>& v) {
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it, span = *hi_it - *lo_it;
  if (span <= 0.0) {
    std::fill(v.begin(), v.end(), 0.0);
    return;
  }
  for (auto& x : v) x = (x - lo) / span;
}

void write_u64_le(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64_le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<ModalityProfile> PhantomSpec::default_profiles() {
  return {
      {"M1", +1.0, 0.45, 0.0, 1.0, 0.02},
      {"M2", -1.0, 0.45, 0.0, 1.3, 0.02},
      {"M3", 0.0, 0.0, 0.55, 1.0, 0.02},
  };
}

const ModalityProfile& PhantomSpec::profile(const std::string& id) const {
  for (const auto& p : profiles)
    if (p.id == id) return p;
  throw std::invalid_argument("unknown modality profile: " + id);
}

void PhantomSpec::validate() const {
  if (volume_shape.size() != 3) throw DimensionError("phantom volume must be rank 3");
  if (center_lo - radius_hi < 0.0 || center_hi + radius_hi > 1.0)
    throw std::invalid_argument("ellipsoid radii do not fit inside the volume");
  if (radius_lo <= 0.0 || radius_hi < radius_lo)
    throw std::invalid_argument("invalid radius range");
  for (const auto& p : profiles)
    if (p.noise_sigma < 0.0) throw std::invalid_argument("noise sigma must be >= 0");
}

Case generate_case(const PhantomSpec& spec, const std::vector<std::string>& modality_set,
                   std::uint64_t seed) {
  spec.validate();
  if (modality_set.empty()) throw std::invalid_argument("empty modality set");
  const Shape& s = spec.volume_shape;
  const std::size_t n = s[0] * s[1] * s[2];
  Rng rng(seed);

  double c[3], r[3];
  for (int a = 0; a < 3; ++a)
    c[a] = rng.uniform(spec.center_lo, spec.center_hi) * static_cast<double>(s[a]);
  for (int a = 0; a < 3; ++a)
    r[a] = rng.uniform(spec.radius_lo, spec.radius_hi) * static_cast<double>(s[a]);

  struct Wave {
    double f[3], phase;
  };
  std::vector<Wave> waves(spec.background_waves);
  for (auto& w : waves) {
    for (int a = 0; a < 3; ++a) w.f[a] = rng.uniform(-1.5, 1.5);
    w.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }

  // Shared latent anatomy: normalized ellipsoid radius and background field.
  std::vector<double> rho(n), bg(n);
  std::size_t idx = 0;
  for (std::size_t x = 0; x < s[0]; ++x)
    for (std::size_t y = 0; y < s[1]; ++y)
      for (std::size_t z = 0; z < s[2]; ++z, ++idx) {
        const double pc[3] = {static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5,
                              static_cast<double>(z) + 0.5};
        double q = 0.0;
        for (int a = 0; a < 3; ++a) {
          const double d = (pc[a] - c[a]) / r[a];
          q += d * d;
        }
        rho[idx] = std::sqrt(q);
        double b = 0.5;
        for (const auto& w : waves) {
          double arg = w.phase;
          for (int a = 0; a < 3; ++a)
            arg += 2.0 * std::numbers::pi * w.f[a] * pc[a] / static_cast<double>(s[a]);
          b += spec.background_amp * std::cos(arg) / static_cast<double>(waves.size());
        }
        bg[idx] = b;
      }

  Case out;
  out.case_id = "case" + std::to_string(seed);
  std::vector<double> label(n);
  for (std::size_t i = 0; i < n; ++i) label[i] = rho[i] <= 1.0 ? 1.0 : 0.0;
  out.label = Tensor::from(s, std::move(label));

  for (const auto& id : modality_set) {
    const ModalityProfile& p = spec.profile(id);
    // Per-modality noise stream keyed by seed and id, so a volume is the same
    // whether or not other modalities were requested for the case.
    Rng noise(seed ^ fnv1a(id));
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) {
      double val = bg[i];
      if (rho[i] <= 1.0) val += p.polarity * p.lesion_gain;
      if (p.ring_gain != 0.0 && std::abs(rho[i] - 1.0) <= spec.ring_width) val += p.ring_gain;
      v[i] = val + noise.gaussian(0.0, p.noise_sigma);
    }
    minmax_normalize(v);
    if (p.gamma != 1.0)
      for (auto& x : v) x = std::pow(x, p.gamma);  // monotone, preserves [0,1]
    out.volumes.emplace_back(id, Tensor::from(s, std::move(v)));
  }
  return out;
}

void CorpusConfig::validate() const {
  spec.validate();
  if (out_dir.empty()) throw std::invalid_argument("corpus out_dir is empty");
  for (const auto& counts : {pretrain, finetune})
    if (counts.train == 0 || counts.val == 0 || counts.test == 0)
      throw std::invalid_argument("each split needs at least one case");
  if (drop_prob < 0.0 || drop_prob > 1.0)
    throw std::invalid_argument("drop_prob must lie in [0, 1]");
  for (const auto& id : set_a)
    if (std::find(set_b.begin(), set_b.end(), id) == set_b.end())
      throw std::invalid_argument("set_b must be a superset of set_a");
  for (const auto& id : set_b) spec.profile(id);  // throws on unknown id
}

std::vector<ManifestEntry> CorpusManifest::split(const std::string& tag) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (e.split == tag) out.push_back(e);
  return out;
}

std::vector<std::string> CorpusManifest::modality_union() const {
  std::vector<std::string> ids;
  for (const auto& e : entries)
    for (const auto& m : e.modalities)
      if (std::find(ids.begin(), ids.end(), m) == ids.end()) ids.push_back(m);
  return ids;
}

CorpusManifest generate_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);

  struct Job {
    std::string split;
    std::uint64_t seed;
    std::vector<std::string> modalities;
  };
  std::vector<Job> jobs;
  Rng corpus_rng(cfg.seed);
  auto plan = [&](const std::string& phase, const CorpusCounts& counts,
                  const std::vector<std::string>& base_set, bool optional_drop) {
    const std::pair<const char*, std::size_t> parts[] = {
        {"train", counts.train}, {"val", counts.val}, {"test", counts.test}};
    for (const auto& [tag, count] : parts)
      for (std::size_t i = 0; i < count; ++i) {
        Job j;
        j.split = phase + "-" + tag;
        j.seed = corpus_rng.split(jobs.size()).state();
        j.modalities = base_set;
        if (optional_drop && !cfg.optional_modality.empty()) {
          Rng drop(j.seed ^ fnv1a("drop"));
          if (drop.uniform() < cfg.drop_prob)
            std::erase(j.modalities, cfg.optional_modality);
        }
        jobs.push_back(std::move(j));
      }
  };
  plan("pretrain", cfg.pretrain, cfg.set_a, false);
  plan("finetune", cfg.finetune, cfg.set_b, true);

  CorpusManifest manifest;
  manifest.volume_shape = cfg.spec.volume_shape;
  manifest.entries.resize(jobs.size());

#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t ji = 0; ji < static_cast<std::ptrdiff_t>(jobs.size()); ++ji) {
    const Job& j = jobs[ji];
    Case c = generate_case(cfg.spec, j.modalities, j.seed);
    c.case_id = j.split + "-" + std::to_string(ji);
    ManifestEntry e;
    e.case_id = c.case_id;
    e.split = j.split;
    e.modalities = j.modalities;
    for (const auto& [id, vol] : c.volumes) {
      const std::string path = cfg.out_dir + "/" + c.case_id + "." + id + ".avol";
      write_volume(path, vol, c.case_id, id);
      e.volume_paths[id] = path;
    }
    e.label_path = cfg.out_dir + "/" + c.case_id + ".label.avol";
    write_volume(e.label_path, c.label, c.case_id, "label");
    manifest.entries[ji] = std::move(e);
  }

  write_manifest(manifest, cfg.out_dir + "/manifest.json");
  return manifest;
}

void write_manifest(const CorpusManifest& m, const std::string& path) {
  json j;
  j["volume_shape"] = m.volume_shape;
  j["cases"] = json::array();
  for (const auto& e : m.entries) {
    json c;
    c["case_id"] = e.case_id;
    c["split"] = e.split;
    c["modalities"] = e.modalities;
    c["volumes"] = e.volume_paths;
    c["label"] = e.label_path;
    j["cases"].push_back(std::move(c));
  }
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write manifest: " + path);
  os << j.dump(2) << "\n";
}

CorpusManifest read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read manifest: " + path);
  json j = json::parse(is);
  CorpusManifest m;
  m.volume_shape = j.at("volume_shape").get<Shape>();
  for (const auto& c : j.at("cases")) {
    ManifestEntry e;
    e.case_id = c.at("case_id").get<std::string>();
    e.split = c.at("split").get<std::string>();
    e.modalities = c.at("modalities").get<std::vector<std::string>>();
    e.volume_paths = c.at("volumes").get<std::map<std::string, std::string>>();
    e.label_path = c.at("label").get<std::string>();
    m.entries.push_back(std::move(e));
  }
  return m;
}

void write_volume(const std::string& path, const Tensor& volume, const std::string& case_id,
                  const std::string& modality) {
  if (volume.shape().size() != 3) throw DimensionError("volume files are rank-3");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write volume: " + path);
  os.write(kVolumeMagic, sizeof(kVolumeMagic));
  os.put(0);  // dtype f64
  for (int a = 0; a < 3; ++a) write_u64_le(os, volume.shape()[a]);
  for (double x : volume.data()) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, 8);
    write_u64_le(os, bits);
  }
  json sidecar{{"case_id", case_id}, {"modality", modality}, {"shape", volume.shape()}};
  std::ofstream side(path + ".json");
  side << sidecar.dump(2) << "\n";
}

Tensor read_volume(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read volume: " + path);
  char magic[6];
  is.read(magic, 6);
  if (!is || std::memcmp(magic, kVolumeMagic, 6) != 0)
    throw std::runtime_error("bad volume magic in " + path);
  const int dtype = is.get();
  if (dtype != 0) throw std::runtime_error("unsupported volume dtype in " + path);
  Shape s(3);
  for (int a = 0; a < 3; ++a) s[a] = read_u64_le(is);
  std::vector<double> data(s[0] * s[1] * s[2]);
  for (auto& x : data) {
    const std::uint64_t bits = read_u64_le(is);
    std::memcpy(&x, &bits, 8);
  }
  if (!is) throw std::runtime_error("truncated volume file: " + path);
  return Tensor::from(std::move(s), std::move(data));
}

Case load_case(const ManifestEntry& entry, bool with_label) {
  Case c;
  c.case_id = entry.case_id;
  for (const auto& id : entry.modalities)
    c.volumes.emplace_back(id, read_volume(entry.volume_paths.at(id)));
  if (with_label) c.label = read_volume(entry.label_path);
  return c;
}

}  // namespace adavit
