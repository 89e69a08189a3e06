#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "support.hpp"

using namespace fsmnet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("fsmnet_phantom_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST(Phantom, Deterministic) {
  const auto a = generate_pair(32, 17);
  const auto b = generate_pair(32, 17);
  EXPECT_TRUE(std::equal(a.aux.data().begin(), a.aux.data().end(), b.aux.data().begin()));
  EXPECT_TRUE(std::equal(a.tar.data().begin(), a.tar.data().end(), b.tar.data().begin()));
  const auto c = generate_pair(32, 18);
  EXPECT_FALSE(std::equal(a.tar.data().begin(), a.tar.data().end(), c.tar.data().begin()));
}

TEST(Phantom, RangeShapeAndSpread) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto p = generate_pair(48, seed);
    EXPECT_EQ(p.aux.shape(), (Shape{1, 1, 48, 48}));
    EXPECT_EQ(p.tar.shape(), p.aux.shape());
    for (const Tensor<float>* t : {&p.aux, &p.tar}) {
      double mean = 0, sq = 0;
      for (float v : t->data()) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
        mean += v;
      }
      mean /= static_cast<double>(t->size());
      for (float v : t->data()) sq += (v - mean) * (v - mean);
      EXPECT_GT(std::sqrt(sq / static_cast<double>(t->size())), 1e-3);
    }
  }
}

TEST(Phantom, ContrastsShareStructure) {
  std::vector<double> corr;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto p = generate_pair(32, seed);
    corr.push_back(gradient_correlation(p.aux, p.tar));
  }
  EXPECT_GT(median(corr), 0.5);
}

TEST(Phantom, RejectsBadSizes) {
  EXPECT_THROW(generate_pair(14, 0), ConfigError);
  EXPECT_THROW(generate_pair(33, 0), ConfigError);
}

TEST(Corpus, RoundTripAndManifest) {
  const fs::path dir = scratch("roundtrip");
  const auto pairs = generate_corpus(6, 16, 5);
  const io::json manifest = write_corpus(pairs, dir);
  EXPECT_EQ(manifest["count"], 6);
  EXPECT_EQ(manifest["pairs"].size(), 6u);
  EXPECT_EQ(manifest["generator_version"], kPhantomGeneratorVersion);
  EXPECT_GT(manifest["gradient_correlation_median"].get<double>(), 0.5);
  std::size_t dirs = 0;
  for (const auto& e : fs::directory_iterator(dir)) dirs += e.is_directory() ? 1 : 0;
  EXPECT_EQ(dirs, 6u);

  const auto back = read_corpus(dir);
  ASSERT_EQ(back.size(), pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    EXPECT_EQ(back[i].id, pairs[i].id);
    EXPECT_EQ(back[i].seed, pairs[i].seed);
    EXPECT_TRUE(std::equal(back[i].aux.data().begin(), back[i].aux.data().end(), pairs[i].aux.data().begin()));
    EXPECT_TRUE(std::equal(back[i].tar.data().begin(), back[i].tar.data().end(), pairs[i].tar.data().begin()));
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(corpus_hash(back)));
  EXPECT_EQ(manifest["content_hash"].get<std::string>(), hex);
  fs::remove_all(dir);
}

TEST(Corpus, HashIsStable) {
  EXPECT_EQ(corpus_hash(generate_corpus(8, 32, 9)), corpus_hash(generate_corpus(8, 32, 9)));
  EXPECT_NE(corpus_hash(generate_corpus(8, 32, 9)), corpus_hash(generate_corpus(8, 32, 10)));
}

TEST(Corpus, TruncatedFileNamesTheFile) {
  const fs::path dir = scratch("truncated");
  write_corpus(generate_corpus(3, 16, 1), dir);
  const fs::path victim = dir / pair_id(1) / "tar.f32";
  fs::resize_file(victim, 100);
  try {
    read_corpus(dir);
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("tar.f32"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find(pair_id(1)), std::string::npos) << e.what();
  }
  fs::remove_all(dir);
}

TEST(Corpus, MissingEntryIsReported) {
  const fs::path dir = scratch("missing");
  write_corpus(generate_corpus(2, 16, 1), dir);
  fs::remove(dir / pair_id(0) / "aux.f32");
  EXPECT_THROW(read_corpus(dir), LoadError);
  EXPECT_THROW(read_corpus(dir / "nope"), LoadError);
  fs::remove_all(dir);
}
