#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "grn/synthdata.hpp"

using namespace grn;
namespace fs = std::filesystem;

namespace {

DatasetSpec small(Family f, double sigma) {
  DatasetSpec s;
  s.n_classes = 4;
  s.maps_per_class = 3;
  s.grid = {1, 4, 4, 2};
  s.rounds = 3;
  s.family = f;
  s.noise_sigma = sigma;
  s.seed = 5;
  return s;
}

fs::path fresh_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST(DatasetSpecTest, Validation) {
  auto s = small(Family::deterministic, 0.0);
  EXPECT_NO_THROW(s.validate());
  s.noise_sigma = 0.1;
  EXPECT_THROW(s.validate(), ParameterError);
  s = small(Family::bumps, -1.0);
  EXPECT_THROW(s.validate(), ParameterError);
  s = small(Family::mixed, 0.5);
  s.n_classes = 2;
  EXPECT_THROW(s.validate(), ParameterError);
  s = small(Family::bumps, 0.1);
  s.maps_per_class = 0;
  EXPECT_THROW(s.validate(), ParameterError);
  s = small(Family::bumps, 0.1);
  s.grid.width = 0;
  EXPECT_THROW(s.validate(), ParameterError);
}

TEST(DatasetSpecTest, JsonRoundTripAndFamilies) {
  const auto s = small(Family::gradients, 0.25);
  EXPECT_EQ(dataset_spec_from_json(dataset_spec_json(s)), s);
  for (auto f : {Family::deterministic, Family::bumps, Family::gradients, Family::mixed}) {
    EXPECT_EQ(family_from_string(to_string(f)), f);
  }
  EXPECT_THROW(family_from_string("plaid"), ConfigError);
  EXPECT_THROW(dataset_spec_from_json("[1,"), ConfigError);
}

TEST(DatasetSpecTest, MixedNoiseLevels) {
  const auto s = small(Family::mixed, 0.8);
  EXPECT_EQ(s.class_noise(0), 0.0);
  EXPECT_DOUBLE_EQ(s.class_noise(1), 0.4);
  EXPECT_DOUBLE_EQ(s.class_noise(2), 0.8);
  EXPECT_EQ(s.class_noise(3), 0.0);
}

TEST(FeatureMaps, BoundedAndDeterministic) {
  for (auto f : {Family::bumps, Family::gradients, Family::mixed}) {
    const auto s = small(f, 0.7);
    for (std::uint32_t c = 0; c < s.n_classes; ++c) {
      const auto a = generate_feature_map(c, 1, s);
      EXPECT_EQ(a.shape(), s.grid.shape());
      for (double v : a.values()) {
        ASSERT_GT(v, -1.0);
        ASSERT_LT(v, 1.0);
      }
      EXPECT_EQ(a, generate_feature_map(c, 1, s));
    }
  }
  EXPECT_THROW(generate_feature_map(4, 0, small(Family::bumps, 0.1)), IndexError);
}

TEST(FeatureMaps, NoiselessClassesRepeat) {
  const auto s = small(Family::deterministic, 0.0);
  EXPECT_EQ(generate_feature_map(2, 0, s), generate_feature_map(2, 7, s));
  const auto n = small(Family::bumps, 0.3);
  EXPECT_NE(generate_feature_map(2, 0, n), generate_feature_map(2, 7, n));
}

TEST(FeatureMaps, ClassesDifferInTenPercentOfTokensAtFourRounds) {
  for (auto f : {Family::deterministic, Family::bumps, Family::gradients, Family::mixed}) {
    DatasetSpec s = small(f, f == Family::deterministic ? 0.0 : 0.3);
    s.n_classes = 10;
    s.grid = {1, 8, 8, 4};
    std::vector<hbq::IndexMap> q;
    for (std::uint32_t c = 0; c < s.n_classes; ++c) {
      q.push_back(hbq::pack_indices(hbq::quantize(hbq::bound_features(class_field(c, s)), 4)));
    }
    for (std::size_t a = 0; a < q.size(); ++a) {
      for (std::size_t b = a + 1; b < q.size(); ++b) {
        std::size_t diff = 0;
        for (std::size_t i = 0; i < q[a].values.size(); ++i) diff += q[a].values[i] != q[b].values[i];
        EXPECT_GE(diff * 10, q[a].values.size()) << to_string(f) << " " << a << " vs " << b;
      }
    }
  }
}

TEST(Build, CountsLabelsAndDeterminism) {
  DatasetSpec s;  // 10 classes x 1 map, 8x8x4, M=2
  const auto d = build_dataset(s);
  ASSERT_EQ(d.records.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(d.records[i].label, i);
    EXPECT_EQ(d.records[i].planes.rounds, 2);
    EXPECT_EQ(d.records[i].planes.grid, s.grid);
  }
  EXPECT_EQ(build_dataset(s), d);
  const auto tm = d.token_maps(Layout::index);
  EXPECT_EQ(tm[0].tokens.categories, 4u);
  EXPECT_EQ(tm[0].tokens.size(), 256u);
  EXPECT_EQ(d.token_maps(Layout::bit)[0].tokens.size(), 512u);
}

TEST(Build, TemporalGridSupported) {
  auto s = small(Family::bumps, 0.2);
  s.grid = {2, 4, 4, 2};
  const auto d = build_dataset(s);
  EXPECT_EQ(d.token_maps(Layout::index)[0].tokens.positions, 32u);
}

TEST(Build, StoredPlanesRoundTripThroughCodecs) {
  const auto d = build_dataset(small(Family::mixed, 0.6));
  for (const auto& r : d.records) {
    EXPECT_EQ(hbq::unpack_indices(hbq::pack_indices(r.planes), r.planes.rounds), r.planes);
    EXPECT_EQ(hbq::unflatten_bits(hbq::flatten_bits(r.planes), r.planes.grid.channels, r.planes.rounds),
              r.planes);
  }
}

TEST(Build, DeterministicClassesHaveZeroMarginalEntropy) {
  DatasetSpec s = small(Family::deterministic, 0.0);
  const auto d = build_dataset(s);
  for (double h : d.class_entropy) EXPECT_EQ(h, 0.0);
}

TEST(Build, MixedFamilyEntropyGap) {
  DatasetSpec s;
  s.n_classes = 6;
  s.maps_per_class = 200;
  s.noise_sigma = 0.815;
  s.family = Family::mixed;
  const auto d = build_dataset(s);
  const auto [lo, hi] = std::minmax_element(d.class_entropy.begin(), d.class_entropy.end());
  EXPECT_GE(*hi - *lo, 0.3);
  // class 0 carries no noise
  EXPECT_EQ(d.class_entropy[0], 0.0);
}

TEST(MarginalEntropy, HandComputed) {
  TokenMap a(Layout::index, 4, 2, 1), b(Layout::index, 4, 2, 1);
  a.values = {0, 1};
  b.values = {0, 2};
  // position 0 agrees, position 1 splits evenly over two of four values
  EXPECT_NEAR(marginal_entropy({&a, &b}), 0.5 * 0.5, 1e-12);
  EXPECT_EQ(marginal_entropy({}), 0.0);
}

TEST(Persistence, SaveLoadRoundTrip) {
  const auto dir = fresh_dir("grn_data_rt");
  const auto d = build_dataset(small(Family::bumps, 0.3));
  save_dataset(dir, d);
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir / "records" / "0_0.hbq"));
  EXPECT_EQ(load_dataset(dir), d);
  const auto m = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
  EXPECT_EQ(m["schema_version"], kManifestVersion);
  EXPECT_EQ(m["records"].size(), 12u);
  fs::remove_all(dir);
}

TEST(Persistence, TruncatedRecordReportsOffset) {
  const auto dir = fresh_dir("grn_data_trunc");
  save_dataset(dir, build_dataset(small(Family::bumps, 0.3)));
  const auto rec = dir / "records" / "1_2.hbq";
  fs::resize_file(rec, 15);
  try {
    load_dataset(dir);
    FAIL() << "truncated record accepted";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 15u);
    EXPECT_NE(std::string(e.what()).find("1_2.hbq"), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(Persistence, ChecksumMismatchRefused) {
  const auto dir = fresh_dir("grn_data_crc");
  save_dataset(dir, build_dataset(small(Family::bumps, 0.3)));
  const auto rec = dir / "records" / "0_1.hbq";
  std::vector<char> bytes;
  {
    std::ifstream in(rec, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  bytes.back() ^= 0x01;
  {
    std::ofstream out(rec, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  try {
    load_dataset(dir);
    FAIL() << "corrupt record accepted";
  } catch (const ParseError&) {
    FAIL() << "expected a checksum refusal, not a parse error";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(Persistence, MissingOrMalformedManifest) {
  const auto dir = fresh_dir("grn_data_bad");
  EXPECT_THROW(load_dataset(dir), IoError);
  fs::create_directories(dir);
  std::ofstream(dir / "manifest.json") << "{\"schema_version\": ";
  EXPECT_THROW(load_dataset(dir), ParseError);
  fs::remove_all(dir);
}
