#include <gtest/gtest.h>

#include <accept/curve_bank.hpp>

#include <filesystem>
#include <sstream>

using namespace accept;

namespace {

CurveBank small_bank(std::size_t n = 40, std::uint64_t seed = 7) { return generate_bank(ParamBounds{}, n, seed).bank; }

BankEntry flat_entry(std::uint64_t id, double level, std::size_t grid) {
  BankEntry e;
  e.id = id;
  e.params = {0, 0, 0, 1, 1};
  e.t_end = 50.0;
  e.capacity.assign(grid, level);
  e.capacity[0] = 1.0;
  return e;
}

}  // namespace

TEST(GenerateBank, PointBoundsReproduceSimulation) {
  const DegradationParams p{0.004, 0.002, 0.03, 3.0, 12.0};
  const CurveBank bank = generate_bank(ParamBounds::point(p), 1, 3).bank;
  ASSERT_EQ(bank.size(), 1u);
  EXPECT_EQ(bank[0].params, p);
  const SimCurve c = simulate(p);
  EXPECT_EQ(bank[0].capacity, resample_uniform(c));
  EXPECT_EQ(bank[0].t_end, c.t_end());
}

TEST(GenerateBank, DefaultBoundsInvariants) {
  const CurveBank bank = generate_bank(ParamBounds{}, 1000, 7).bank;
  ASSERT_EQ(bank.size(), 1000u);
  for (const auto& e : bank.entries()) {
    ASSERT_EQ(e.capacity.size(), default_grid_size);
    EXPECT_NEAR(e.capacity[0], 1.0, 1e-9);
    for (std::size_t i = 1; i < e.capacity.size(); ++i) ASSERT_LE(e.capacity[i], e.capacity[i - 1]);
  }
}

TEST(GenerateBank, ByteIdenticalAcrossRunsAndThreadCounts) {
  BankOptions one;
  one.threads = 1;
  BankOptions four;
  four.threads = 4;
  const auto a = bank_to_bytes(generate_bank(ParamBounds{}, 60, 7, one).bank);
  const auto b = bank_to_bytes(generate_bank(ParamBounds{}, 60, 7, four).bank);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, bank_to_bytes(generate_bank(ParamBounds{}, 60, 8, one).bank));
}

TEST(GenerateBank, DivergentDrawsAreReportedThenFatal) {
  ParamBounds b = ParamBounds::point({1e300, 0, 0, 1, 1});
  try {
    generate_bank(b, 3, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::bank_generation);
  }
}

TEST(GenerateBank, RejectsBadArguments) {
  EXPECT_THROW(generate_bank(ParamBounds{}, 0, 1), Error);
  ParamBounds b;
  b.lo[2] = 0.5;
  EXPECT_THROW(generate_bank(b, 3, 1), Error);
}

double resample_error(const SimCurve& c, std::size_t n) {
  const auto grid = resample_uniform(c, n);
  double err = 0.0;
  for (const auto& s : c.states) err = std::max(err, std::abs(interpolate_grid(grid, s.t / c.t_end()) - s.C));
  return err;
}

DegradationParams random_params(Rng& rng) {
  return {uniform(rng, 0.0, 0.02), uniform(rng, 0.0, 0.01), uniform(rng, 0.0, 0.1), uniform(rng, 0.1, 20.0),
          uniform(rng, 0.0, 40.0)};
}

TEST(Resample, ReconstructsSmoothCurve) {
  Rng rng(21);
  int tested = 0;
  while (tested < 20) {
    const DegradationParams p = random_params(rng);
    const SimCurve c = simulate(p);
    if (p.t_p < c.t_end()) continue;
    EXPECT_LE(resample_error(c, default_grid_size), 1e-3) << "set " << tested;
    ++tested;
  }
}

// The plating rate switches on with a jump at t_p, leaving a kink in C that a
// uniform grid cannot place a knot on.
TEST(Resample, KinkedCurveErrorShrinksWithGrid) {
  Rng rng(22);
  int tested = 0;
  while (tested < 20) {
    const DegradationParams p = random_params(rng);
    const SimCurve c = simulate(p);
    if (p.t_p >= c.t_end()) continue;
    const double coarse = resample_error(c, default_grid_size);
    EXPECT_LE(coarse, 2.5e-3) << "set " << tested;
    EXPECT_LE(resample_error(c, 4 * default_grid_size), std::max(0.5 * coarse, 1e-6)) << "set " << tested;
    ++tested;
  }
}

TEST(Nearest, SelfRetrievalForEveryEntry) {
  const CurveBank bank = small_bank(200);
  for (const auto& e : bank.entries()) EXPECT_EQ(nearest_by_curve(bank, e.capacity).id, e.id);
}

TEST(Nearest, SmallOffsetKeepsEntry) {
  // Keep only entries separated from every kept one by more than the gap.
  const CurveBank source = small_bank(200);
  CurveBank bank(source.grid_size(), source.provenance());
  for (const auto& e : source.entries()) {
    bool clear = true;
    for (const auto& k : bank.entries()) clear = clear && mean_squared_difference(e.capacity, k.capacity) > 1e-9;
    if (clear) bank.add(e);
  }
  ASSERT_GT(bank.size(), 100u);
  for (const auto& e : bank.entries()) {
    auto q = e.capacity;
    for (auto& v : q) v += 1e-6;
    EXPECT_EQ(nearest_by_curve(bank, q).id, e.id);
  }
}

TEST(Nearest, TieGoesToLowerId) {
  CurveBank bank(8, {});
  bank.add(flat_entry(9, 0.5, 8));
  bank.add(flat_entry(4, 0.75, 8));
  std::vector<double> q(8, 0.625);
  q[0] = 1.0;
  EXPECT_EQ(nearest_by_curve(bank, q).id, 4u);
}

TEST(Nearest, Errors) {
  CurveBank empty(8, {});
  EXPECT_THROW(nearest_by_curve(empty, std::vector<double>(8, 1.0)), Error);
  const CurveBank bank = small_bank(5);
  EXPECT_THROW(nearest_by_curve(bank, std::vector<double>(10, 1.0)), Error);
}

TEST(Bank, RejectsDuplicateIdsAndWrongLength) {
  CurveBank bank(8, {});
  bank.add(flat_entry(1, 0.9, 8));
  EXPECT_THROW(bank.add(flat_entry(1, 0.8, 8)), Error);
  EXPECT_THROW(bank.add(flat_entry(2, 0.8, 9)), Error);
  EXPECT_THROW(bank.at(77), Error);
  EXPECT_EQ(bank.find(77), nullptr);
}

TEST(BankIo, BinaryRoundTripIsByteExact) {
  const CurveBank bank = small_bank();
  const std::string bytes = bank_to_bytes(bank);
  const CurveBank back = bank_from_bytes(bytes);
  EXPECT_TRUE(back == bank);
  EXPECT_EQ(bank_to_bytes(back), bytes);
}

TEST(BankIo, TextRoundTripIsLossless) {
  const CurveBank bank = small_bank();
  std::stringstream text;
  write_bank_text(bank, text);
  const CurveBank back = read_bank_text(text);
  EXPECT_TRUE(back == bank);
  EXPECT_EQ(bank_to_bytes(back), bank_to_bytes(bank));
}

TEST(BankIo, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "accept_test_bank.acb";
  const CurveBank bank = small_bank(12);
  save_bank(bank, path);
  EXPECT_TRUE(load_bank(path) == bank);
  std::filesystem::remove(path);
}

TEST(BankIo, CorruptInputsRejected) {
  std::string bytes = bank_to_bytes(small_bank(3));
  EXPECT_THROW(bank_from_bytes(bytes.substr(0, bytes.size() - 5)), Error);
  EXPECT_THROW(bank_from_bytes(bytes + "x"), Error);
  std::string bad = bytes;
  bad[0] = 'X';
  try {
    bank_from_bytes(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::corrupt_bank);
  }
}

TEST(BankIo, HeaderIsLittleEndianAndVersioned) {
  const std::string bytes = bank_to_bytes(small_bank(2));
  EXPECT_EQ(bytes.substr(0, 8), std::string("ACCBANK\0", 8));
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 1u);  // format version, low byte first
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 0u);  // grid 256 = 0x100
  EXPECT_EQ(static_cast<unsigned char>(bytes[13]), 1u);
}
