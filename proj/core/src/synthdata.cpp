#include "grn/synthdata.hpp"

#include <json.hpp>
#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

namespace grn {

namespace {

constexpr int kDistinctRounds = 4;
constexpr double kMinDistinctFraction = 0.10;
constexpr int kMaxSalt = 4096;
constexpr int kBumpsPerChannel = 3;
constexpr double kIidWeight = 0.4;

double coord(std::uint32_t i, std::uint32_t n) {
  return n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.5;
}

TensorD raw_field(std::uint32_t class_id, std::uint32_t salt, const DatasetSpec& spec) {
  Rng rng = Rng(spec.seed).split(streams::data).split(
      mix64((std::uint64_t{class_id} + 1) << 20 | salt));
  const auto& g = spec.grid;
  TensorD out(g.shape());
  const bool bumps = spec.family != Family::gradients;
  const bool ramps = spec.family != Family::bumps;
  for (std::uint32_t c = 0; c < g.channels; ++c) {
    struct Bump {
      double t, y, x, amp, width;
    };
    std::vector<Bump> bs;
    if (bumps) {
      for (int b = 0; b < kBumpsPerChannel; ++b) {
        Bump bump{rng.uniform(), rng.uniform(), rng.uniform(), 3.0 * rng.uniform() - 1.5,
                  0.15 + 0.2 * rng.uniform()};
        bs.push_back(bump);
      }
    }
    double ax = 0, ay = 0, at = 0, off = 0;
    if (ramps) {
      ax = 2.0 * rng.uniform() - 1.0;
      ay = 2.0 * rng.uniform() - 1.0;
      at = rng.uniform() - 0.5;
      off = rng.uniform() - 0.5;
    }
    for (std::uint32_t f = 0; f < g.frames; ++f) {
      for (std::uint32_t h = 0; h < g.height; ++h) {
        for (std::uint32_t w = 0; w < g.width; ++w) {
          const double t = coord(f, g.frames), y = coord(h, g.height), x = coord(w, g.width);
          double v = ax * (2 * x - 1) + ay * (2 * y - 1) + at * (2 * t - 1) + off;
          for (const Bump& b : bs) {
            const double d2 = (x - b.x) * (x - b.x) + (y - b.y) * (y - b.y) +
                              (t - b.t) * (t - b.t);
            v += b.amp * std::exp(-d2 / (2 * b.width * b.width));
          }
          out[((std::size_t{f} * g.height + h) * g.width + w) * g.channels + c] = v;
        }
      }
    }
  }
  return out;
}

std::vector<std::uint16_t> fine_tokens(const TensorD& field) {
  const hbq::IndexMap idx =
      hbq::pack_indices(hbq::quantize(hbq::bound_features(field), kDistinctRounds));
  return idx.values;
}

// Noise-free fields for classes [0, upto].
std::vector<TensorD> prototypes(const DatasetSpec& spec, std::uint32_t upto) {
  std::vector<TensorD> fields;
  std::vector<std::vector<std::uint16_t>> tokens;
  for (std::uint32_t c = 0; c <= upto; ++c) {
    bool placed = false;
    for (int salt = 0; salt < kMaxSalt && !placed; ++salt) {
      TensorD f = raw_field(c, static_cast<std::uint32_t>(salt), spec);
      std::vector<std::uint16_t> tk = fine_tokens(f);
      bool distinct = true;
      for (const auto& other : tokens) {
        std::size_t diff = 0;
        for (std::size_t i = 0; i < tk.size(); ++i) diff += tk[i] != other[i];
        if (static_cast<double>(diff) < kMinDistinctFraction * static_cast<double>(tk.size())) {
          distinct = false;
          break;
        }
      }
      if (distinct) {
        fields.push_back(std::move(f));
        tokens.push_back(std::move(tk));
        placed = true;
      }
    }
    if (!placed) {
      throw ParameterError("could not find a distinct prototype for class " + std::to_string(c));
    }
  }
  return fields;
}

// Additive noise: field + sigma * (iid + shared offset).
TensorD noisy(const TensorD& field, double sigma, Rng& rng) {
  TensorD raw = field;
  if (sigma > 0.0) {
    const double shared = 0.5 * rng.normal();
    for (double& v : raw.values()) v += sigma * (shared + rng.normal());
  }
  return hbq::bound_features(raw);
}

// Mixed family: the field fades out as the noise fades in, so the noisiest
// classes approach a uniform token marginal instead of saturating. Noise is
// mostly shared by the channels of a position; with i.i.d. noise a model
// cannot tell copied tokens from filler and its entropy collapses.
TensorD blended(const TensorD& field, std::uint32_t channels, double level, double sigma,
                Rng& rng) {
  TensorD raw = field;
  if (level > 0.0) {
    const double shared_w = std::sqrt(1.0 - kIidWeight * kIidWeight);
    auto& v = raw.values();
    for (std::size_t p = 0; p < v.size(); p += channels) {
      const double shared = rng.normal();
      for (std::size_t c = 0; c < channels; ++c) {
        const double n = shared_w * shared + kIidWeight * rng.normal();
        v[p + c] = (1.0 - level) * v[p + c] + level * sigma * n;
      }
    }
  }
  return hbq::bound_features(raw);
}

TensorD sample_map(const TensorD& field, std::uint32_t class_id, const DatasetSpec& spec,
                   Rng& rng) {
  if (spec.family == Family::mixed) {
    static constexpr double levels[3] = {0.0, 0.5, 1.0};
    return blended(field, spec.grid.channels, levels[class_id % 3], spec.noise_sigma, rng);
  }
  return noisy(field, spec.class_noise(class_id), rng);
}

Rng sample_rng(const DatasetSpec& spec, std::uint32_t class_id, std::uint32_t index) {
  return Rng(spec.seed).split(streams::data).split(
      mix64(0xda7a000000000000ULL | (std::uint64_t{class_id} << 32) | index));
}

std::uint32_t crc_of(const std::vector<std::uint8_t>& bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

std::string record_name(const Record& r) {
  return "records/" + std::to_string(r.label) + "_" + std::to_string(r.index) + ".hbq";
}

nlohmann::json spec_to_json(const DatasetSpec& s) {
  return {{"n_classes", s.n_classes},
          {"maps_per_class", s.maps_per_class},
          {"grid",
           {{"frames", s.grid.frames},
            {"height", s.grid.height},
            {"width", s.grid.width},
            {"channels", s.grid.channels}}},
          {"rounds", s.rounds},
          {"noise_sigma", s.noise_sigma},
          {"family", to_string(s.family)},
          {"seed", s.seed}};
}

DatasetSpec spec_from_json(const nlohmann::json& j) {
  DatasetSpec s;
  s.n_classes = j.at("n_classes").get<std::uint32_t>();
  s.maps_per_class = j.at("maps_per_class").get<std::uint32_t>();
  const auto& g = j.at("grid");
  s.grid = hbq::Grid{g.at("frames").get<std::uint32_t>(), g.at("height").get<std::uint32_t>(),
                     g.at("width").get<std::uint32_t>(), g.at("channels").get<std::uint32_t>()};
  s.rounds = j.at("rounds").get<int>();
  s.noise_sigma = j.at("noise_sigma").get<double>();
  s.family = family_from_string(j.at("family").get<std::string>());
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

}  // namespace

const char* to_string(Family f) {
  switch (f) {
    case Family::deterministic: return "deterministic";
    case Family::bumps: return "bumps";
    case Family::gradients: return "gradients";
    case Family::mixed: return "mixed";
  }
  return "?";
}

Family family_from_string(const std::string& name) {
  for (Family f : {Family::deterministic, Family::bumps, Family::gradients, Family::mixed}) {
    if (name == to_string(f)) return f;
  }
  throw ConfigError("unknown dataset family '" + name + "'");
}

void DatasetSpec::validate() const {
  if (n_classes < 1 || maps_per_class < 1) {
    throw ParameterError("dataset needs at least one class and one map per class");
  }
  grid.validate();
  if (rounds < 1 || rounds > hbq::kMaxRounds) {
    throw ParameterError("dataset rounds must lie in [1, " + std::to_string(hbq::kMaxRounds) + "]");
  }
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw ParameterError("noise_sigma must be finite and >= 0");
  }
  if (family == Family::deterministic && noise_sigma != 0.0) {
    throw ParameterError("deterministic family requires noise_sigma = 0");
  }
  if (family == Family::mixed && n_classes < 3) {
    throw ParameterError("mixed family needs at least 3 classes");
  }
}

double DatasetSpec::class_noise(std::uint32_t class_id) const {
  switch (family) {
    case Family::deterministic: return 0.0;
    case Family::mixed: {
      static constexpr double levels[3] = {0.0, 0.5, 1.0};
      return levels[class_id % 3] * noise_sigma;
    }
    default: return noise_sigma;
  }
}

std::string dataset_spec_json(const DatasetSpec& spec) { return spec_to_json(spec).dump(); }

DatasetSpec dataset_spec_from_json(const std::string& text) {
  try {
    return spec_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed dataset spec: ") + e.what());
  }
}

TensorD class_field(std::uint32_t class_id, const DatasetSpec& spec) {
  spec.validate();
  if (class_id >= spec.n_classes) throw IndexError("class id out of range");
  return std::move(prototypes(spec, class_id).back());
}

TensorD generate_feature_map(std::uint32_t class_id, const DatasetSpec& spec, Rng& rng) {
  return sample_map(class_field(class_id, spec), class_id, spec, rng);
}

TensorD generate_feature_map(std::uint32_t class_id, std::uint32_t index,
                             const DatasetSpec& spec) {
  Rng rng = sample_rng(spec, class_id, index);
  return generate_feature_map(class_id, spec, rng);
}

std::vector<LabeledMap> Dataset::token_maps(Layout layout) const {
  std::vector<LabeledMap> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({to_token_map(r.planes, layout), r.label});
  return out;
}

double marginal_entropy(const std::vector<const TokenMap*>& maps) {
  if (maps.empty()) return 0.0;
  const TokenMap& first = *maps.front();
  const std::size_t k = first.categories;
  if (k < 2) return 0.0;
  double total = 0.0;
  std::vector<double> counts(k);
  for (std::size_t i = 0; i < first.size(); ++i) {
    std::fill(counts.begin(), counts.end(), 0.0);
    for (const TokenMap* m : maps) counts[m->values[i]] += 1.0;
    double h = 0.0;
    for (double c : counts) {
      if (c > 0) {
        const double p = c / static_cast<double>(maps.size());
        h -= p * std::log2(p);
      }
    }
    total += h / std::log2(static_cast<double>(k));
  }
  return total / static_cast<double>(first.size());
}

Dataset build_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset data;
  data.spec = spec;
  const std::vector<TensorD> fields = prototypes(spec, spec.n_classes - 1);
  data.records.resize(std::size_t{spec.n_classes} * spec.maps_per_class);
  parallel_for(data.records.size(), worker_count(), [&](std::size_t r) {
    const auto c = static_cast<std::uint32_t>(r / spec.maps_per_class);
    const auto i = static_cast<std::uint32_t>(r % spec.maps_per_class);
    Rng rng = sample_rng(spec, c, i);
    Record rec{c, i, hbq::quantize(sample_map(fields[c], c, spec, rng), spec.rounds)};
    rec.planes.validate();
    data.records[r] = std::move(rec);
  });
  std::vector<TokenMap> maps;
  maps.reserve(data.records.size());
  for (const auto& r : data.records) maps.push_back(to_token_map(r.planes, Layout::index));
  for (std::uint32_t c = 0; c < spec.n_classes; ++c) {
    std::vector<const TokenMap*> group;
    for (std::size_t r = 0; r < maps.size(); ++r) {
      if (data.records[r].label == c) group.push_back(&maps[r]);
    }
    data.class_entropy.push_back(marginal_entropy(group));
  }
  return data;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "records", ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : data.records) {
    const std::vector<std::uint8_t> blob = hbq::serialize(r.planes);
    const std::string name = record_name(r);
    std::ofstream out(dir / name, std::ios::binary);
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("failed writing " + (dir / name).string());
    records.push_back({{"file", name}, {"class", r.label}, {"index", r.index},
                       {"bytes", blob.size()}, {"crc32", crc_of(blob)}});
  }
  const nlohmann::json manifest = {{"schema_version", kManifestVersion},
                                   {"spec", spec_to_json(data.spec)},
                                   {"class_entropy", data.class_entropy},
                                   {"records", records}};
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError("failed writing manifest in " + dir.string());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw IoError("cannot open " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(manifest_path.string() + ": malformed manifest", e.byte);
  }
  Dataset data;
  try {
    const int version = manifest.at("schema_version").get<int>();
    if (version != kManifestVersion) {
      throw IoError("unsupported manifest schema_version " + std::to_string(version));
    }
    data.spec = spec_from_json(manifest.at("spec"));
    data.class_entropy = manifest.at("class_entropy").get<std::vector<double>>();
    for (const auto& entry : manifest.at("records")) {
      const auto path = dir / entry.at("file").get<std::string>();
      std::ifstream blob_in(path, std::ios::binary);
      if (!blob_in) throw IoError("missing record " + path.string());
      std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(blob_in)),
                                      std::istreambuf_iterator<char>());
      Record r;
      r.label = entry.at("class").get<std::uint32_t>();
      r.index = entry.at("index").get<std::uint32_t>();
      try {
        r.planes = hbq::deserialize(bytes);
      } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.detail(), e.offset());
      }
      if (crc_of(bytes) != entry.at("crc32").get<std::uint32_t>()) {
        throw IoError("checksum mismatch for " + path.string());
      }
      if (r.planes.grid != data.spec.grid || r.planes.rounds != data.spec.rounds) {
        throw IoError("record " + path.string() + " does not match the manifest grid");
      }
      data.records.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(manifest_path.string() + ": malformed manifest: " + e.what());
  }
  data.spec.validate();
  if (data.records.size() != std::size_t{data.spec.n_classes} * data.spec.maps_per_class) {
    throw IoError("manifest record count does not match the dataset spec");
  }
  return data;
}

}  // namespace grn
