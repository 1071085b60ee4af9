#include <gtest/gtest.h>

#include <algorithm>

#include "anchormem/backend.hpp"
#include "anchormem/hashing.hpp"
#include "anchormem/memory_index.hpp"
#include "test_support.hpp"

using namespace anchormem;

namespace {

Eigen::VectorXd random_unit(SplitMix& rng, int dim) {
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v[i] = rng.normal();
  return v.normalized();
}

// Linear-scan oracle: score every vector with an explicit loop, full sort.
std::vector<SearchHit> linear_scan(const std::vector<std::pair<std::int64_t, Eigen::VectorXd>>& corpus,
                                   const Eigen::VectorXd& q, std::size_t k) {
  std::vector<SearchHit> all;
  for (const auto& [id, v] : corpus) {
    double s = 0.0;
    for (int i = 0; i < v.size(); ++i) s += v[i] * q[i];
    all.push_back({id, s});
  }
  std::sort(all.begin(), all.end(), [](const SearchHit& a, const SearchHit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.entry_id < b.entry_id;
  });
  all.resize(std::min(k, all.size()));
  return all;
}

}  // namespace

TEST(MemoryIndex, EmptyIndexReturnsNothing) {
  MemoryIndex index(8);
  EXPECT_TRUE(index.search(Eigen::VectorXd::Unit(8, 0), 5).empty());
}

TEST(MemoryIndex, StoredVectorScoresOne) {
  SplitMix rng(1);
  MemoryIndex index(16);
  for (int i = 1; i <= 20; ++i) index.add(i, random_unit(rng, 16));
  const Eigen::VectorXd q = index.vector(7);
  const auto hits = index.search(q, 1);
  ASSERT_EQ(hits.size(), 1u);
  EXPECT_EQ(hits[0].entry_id, 7);
  EXPECT_NEAR(hits[0].score, 1.0, 1e-9);
}

TEST(MemoryIndex, ReplaceKeepsSize) {
  SplitMix rng(2);
  MemoryIndex index(8);
  index.add(1, random_unit(rng, 8));
  index.add(2, random_unit(rng, 8));
  const Eigen::VectorXd v = random_unit(rng, 8);
  index.add(1, v);
  EXPECT_EQ(index.size(), 2u);
  EXPECT_NEAR((index.vector(1) - v).norm(), 0.0, 1e-12);
}

TEST(MemoryIndex, TiesBreakByAscendingId) {
  MemoryIndex index(4);
  const Eigen::VectorXd v = Eigen::VectorXd::Unit(4, 1);
  index.add(9, v);
  index.add(3, v);
  index.add(5, v);
  const auto hits = index.search(v, 3);
  ASSERT_EQ(hits.size(), 3u);
  EXPECT_EQ(hits[0].entry_id, 3);
  EXPECT_EQ(hits[1].entry_id, 5);
  EXPECT_EQ(hits[2].entry_id, 9);
}

TEST(MemoryIndex, RejectsBadInput) {
  MemoryIndex index(4);
  EXPECT_THROW(index.add(1, Eigen::VectorXd::Zero(4)), Error);
  EXPECT_THROW(index.add(1, Eigen::VectorXd::Ones(5)), Error);
  EXPECT_THROW(index.search(Eigen::VectorXd::Ones(4), 0), Error);
}

TEST(MemoryIndex, ThousandEntriesMatchBruteForce) {
  SplitMix rng(3);
  MemoryIndex index(32);
  std::vector<std::pair<std::int64_t, Eigen::VectorXd>> corpus;
  for (int i = 1; i <= 1000; ++i) {
    corpus.emplace_back(i, random_unit(rng, 32));
    index.add(i, corpus.back().second);
  }
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::VectorXd q = random_unit(rng, 32);
    const auto got = index.search(q, 5);
    const auto want = linear_scan(corpus, q, 5);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].entry_id, want[i].entry_id);
      EXPECT_NEAR(got[i].score, want[i].score, 1e-9);
    }
  }
}

TEST(MemoryIndex, ScoresAreNonIncreasing) {
  SplitMix rng(4);
  MemoryIndex index(8);
  for (int i = 1; i <= 200; ++i) index.add(i, random_unit(rng, 8));
  const auto hits = index.search(random_unit(rng, 8), 50);
  ASSERT_EQ(hits.size(), 50u);
  for (std::size_t i = 1; i < hits.size(); ++i) EXPECT_GE(hits[i - 1].score, hits[i].score);
}

TEST(MemoryIndex, FloatScalarInstantiation) {
  BasicMemoryIndex<float> index(8);
  index.add(1, Eigen::VectorXf::Unit(8, 2));
  index.add(2, Eigen::VectorXf::Unit(8, 3));
  const auto hits = index.search(Eigen::VectorXf::Unit(8, 3), 1);
  ASSERT_EQ(hits.size(), 1u);
  EXPECT_EQ(hits[0].entry_id, 2);
}

TEST(MemoryIndex, SnapshotRoundTrip) {
  anchormem::testing::TempDir dir;
  SplitMix rng(6);
  MemoryIndex a(16);
  for (int i = 1; i <= 30; ++i) a.add(i * 3, random_unit(rng, 16));
  a.save_snapshot(dir / "index.bin");
  MemoryIndex b(16);
  b.load_snapshot(dir / "index.bin");
  ASSERT_EQ(b.size(), a.size());
  for (int i = 1; i <= 30; ++i) EXPECT_NEAR((a.vector(i * 3) - b.vector(i * 3)).norm(), 0.0, 1e-6);

  MemoryIndex wrong_dim(8);
  EXPECT_THROW(wrong_dim.load_snapshot(dir / "index.bin"), Error);
}

TEST(IndexAdd, SelfRetrievalThroughMockEmbedder) {
  MockBackend mock;
  MemoryIndex index(mock.embed_dim());
  AnchorSet set = make_anchor_set("a");
  append_memory(set, Role::kUser, "the launch is scheduled for march", "s");
  append_memory(set, Role::kAgent, "noted, I will remind you", "s");
  for (const auto& e : set.memory_log) index_add(index, mock, e);
  const auto hits = index.search(mock.embed("the launch is scheduled for march"), 1);
  ASSERT_EQ(hits.size(), 1u);
  EXPECT_EQ(hits[0].entry_id, 1);
}

TEST(IndexAdd, EmbeddingFailureLeavesIndexUnchanged) {
  MockBackend mock;
  FaultInjectingBackend faulty(mock);
  MemoryIndex index(mock.embed_dim());
  AnchorSet set = make_anchor_set("a");
  append_memory(set, Role::kUser, "one", "s");
  append_memory(set, Role::kUser, "two", "s");
  index_add(index, faulty, set.memory_log[0]);
  faulty.fail_after(RequestKind::kEmbed, 0);
  try {
    index_add(index, faulty, set.memory_log[1]);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmbeddingFailure);
  }
  EXPECT_EQ(index.size(), 1u);
  EXPECT_FALSE(index.contains(2));
}
