#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "kdgm/density.hpp"
#include "kdgm/persistence.hpp"

using namespace kdgm;

namespace {

TrainedModel gbm_model(std::uint64_t seed = 3) {
  TrainedModel m;
  m.model = PdeModel::gbm(Domain(model_layout(ModelKind::Gbm), {{0.0, 1.1}, {-1.5, 1.5}, {-1.5, 1.5}, {0.1, 0.4}}));
  m.params = init_xavier({4, 6, 2}, seed);
  // Biases away from zero so every block carries information.
  for (auto& b : m.params.blocks) {
    for (auto& v : b.data()) v += 1e-3;
  }
  m.provenance.config_hash = "abc123";
  m.provenance.best_loss = 0.0125;
  m.provenance.best_epoch = 17;
  m.provenance.epochs = 40;
  m.provenance.lambda = 10.0;
  m.provenance.seed = seed;
  return m;
}

std::size_t header_len(const std::vector<std::uint8_t>& b) {
  std::uint64_t h = 0;
  std::memcpy(&h, b.data() + 8, 8);
  return std::size_t(h);
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("kdgm_test_" + name + ".kdgm");
}

}  // namespace

TEST(Persistence, RoundTripIsBitIdentical) {
  const auto m = gbm_model();
  const auto bytes = to_bytes(m);
  const auto back = from_bytes(bytes);
  ASSERT_EQ(back.params.blocks.size(), m.params.blocks.size());
  for (std::size_t i = 0; i < m.params.blocks.size(); ++i) {
    const auto& a = m.params.blocks[i].data();
    const auto& b = back.params.blocks[i].data();
    ASSERT_EQ(a.size(), b.size());
    EXPECT_EQ(std::memcmp(a.data(), b.data(), 8 * a.size()), 0);
  }
  EXPECT_EQ(back.provenance, m.provenance);
  EXPECT_EQ(to_bytes(back), bytes);
}

TEST(Persistence, DomainAndModelRestored) {
  TrainedModel m;
  m.model = PdeModel::td_heston(PdeModel::default_domain(ModelKind::TdHeston), 2.5, PiecewiseSchedule::standard());
  m.params = init_xavier({m.model.input_dim(), 4, 1}, 9);
  const auto back = from_bytes(to_bytes(m));
  EXPECT_EQ(back.model.kind(), ModelKind::TdHeston);
  EXPECT_EQ(back.model.kappa(), 2.5);
  ASSERT_EQ(back.model.domain().dim(), m.model.domain().dim());
  for (std::size_t i = 0; i < m.model.domain().dim(); ++i) {
    EXPECT_EQ(back.model.domain()[i].lo, m.model.domain()[i].lo);
    EXPECT_EQ(back.model.domain()[i].hi, m.model.domain()[i].hi);
  }
  EXPECT_EQ(back.model.schedule().theta(), PiecewiseSchedule::standard().theta());
}

TEST(Persistence, SaveAndLoadFile) {
  const auto m = gbm_model();
  const auto path = temp_file("roundtrip");
  save(m, path);
  const auto back = load(path);
  EXPECT_EQ(to_bytes(back), to_bytes(m));
  std::filesystem::remove(path);
}

TEST(Persistence, MissingFileIsIoError) { EXPECT_THROW(load(temp_file("does_not_exist")), IoError); }

TEST(Persistence, TruncationRejectedAtEveryLength) {
  const auto bytes = to_bytes(gbm_model());
  for (std::size_t n : {std::size_t(0), std::size_t(3), std::size_t(7), std::size_t(15), header_len(bytes) / 2 + 16,
                        bytes.size() - 9, bytes.size() - 1}) {
    std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + n);
    EXPECT_THROW(from_bytes(cut), FormatError) << "length " << n;
  }
}

TEST(Persistence, BadMagic) {
  auto bytes = to_bytes(gbm_model());
  bytes[0] = 'X';
  EXPECT_THROW(from_bytes(bytes), FormatError);
}

TEST(Persistence, NewerVersionRejected) {
  auto bytes = to_bytes(gbm_model());
  bytes[4] += 1;
  try {
    from_bytes(bytes);
    FAIL() << "accepted an unknown version";
  } catch (const VersionError& e) {
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos) << e.what();
  }
}

TEST(Persistence, WeightCountMismatchNamesBothCounts) {
  auto bytes = to_bytes(gbm_model());
  const std::size_t at = 16 + header_len(bytes);
  std::uint64_t count = 0;
  std::memcpy(&count, bytes.data() + at, 8);
  const std::uint64_t wrong = count + 1;
  std::memcpy(bytes.data() + at, &wrong, 8);
  try {
    from_bytes(bytes);
    FAIL() << "accepted a wrong weight count";
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("expected " + std::to_string(count) + " found " + std::to_string(wrong)), std::string::npos)
        << msg;
  }
}

TEST(Persistence, FlippedWeightBitFailsChecksum) {
  const auto bytes = to_bytes(gbm_model());
  const std::size_t first_weight = 24 + header_len(bytes);
  for (std::size_t at : {first_weight, first_weight + 101, bytes.size() - 9, bytes.size() - 1}) {
    auto bad = bytes;
    bad[at] ^= 0x10;
    EXPECT_THROW(from_bytes(bad), FormatError) << "offset " << at;
  }
}

TEST(Persistence, CorruptHeaderRejected) {
  auto bytes = to_bytes(gbm_model());
  bytes[16] = '[';
  EXPECT_THROW(from_bytes(bytes), FormatError);
}

TEST(Persistence, HeaderWithForeignShapeRejected) {
  // A header that claims a different width no longer matches the stored weights.
  const auto m = gbm_model();
  auto other = m;
  other.params = init_xavier({4, 7, 2}, 1);
  auto a = to_bytes(m);
  const auto b = to_bytes(other);
  std::vector<std::uint8_t> spliced(b.begin(), b.begin() + 16 + header_len(b));
  spliced.insert(spliced.end(), a.begin() + 16 + header_len(a), a.end());
  EXPECT_THROW(from_bytes(spliced), FormatError);
}

TEST(Persistence, GbmModelQueriedAsHestonIsLayoutError) {
  const auto back = from_bytes(to_bytes(gbm_model()));
  try {
    density_2d(back, 0.0, 0.0, 0.2, 1.0, 0.0, 0.2, HestonParams{});
    FAIL() << "GBM model accepted a Heston query";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("layout"), std::string::npos) << e.what();
  }
}

TEST(Persistence, NonFiniteWeightsNotSaved) {
  auto m = gbm_model();
  m.params.blocks[0][0] = std::nan("");
  EXPECT_THROW(to_bytes(m), Error);
}
