#include "fixtures.hpp"
#include "test_util.hpp"

#include "topodiff/dataset.hpp"
#include "topodiff/io_util.hpp"
#include "topodiff/name_embedder.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;
using namespace topodiff;
using namespace topodiff::testing;

TEST(NameEmbedder, HashedIsDeterministicAndNormalized) {
  const HashedNameEmbedder e(32);
  EXPECT_EQ(e.dim(), 32);
  EXPECT_EQ(e.describe(), "hashed:32");
  for (const char* n : {"left foot", "spine", "tail tip", "joint"}) {
    const Eigen::VectorXd v = e.embed(n);
    ASSERT_EQ(v.size(), 32);
    EXPECT_NEAR(v.norm(), 1.0, 1e-12);
    EXPECT_EQ(v, HashedNameEmbedder(32).embed(n));
  }
  // Shared words overlap more than unrelated names.
  const double close = e.embed("left foot").dot(e.embed("right foot"));
  const double far = e.embed("left foot").dot(e.embed("neck"));
  EXPECT_GT(close, far);
  EXPECT_NE(e.embed("left foot"), e.embed("right foot"));
}

TEST(NameEmbedder, TableParsingAndFactory) {
  const std::string text = "# comment\nspine\t1 0 0\nleft foot\t0 3 4\n";
  const TableNameEmbedder t = TableNameEmbedder::parse(text, "mem");
  EXPECT_EQ(t.dim(), 3);
  EXPECT_EQ(t.size(), 2u);
  EXPECT_EQ(t.describe(), "table:mem");
  EXPECT_DOUBLE_EQ(t.embed("left foot")[2], 4.0);
  EXPECT_THROW(TableNameEmbedder::parse("a\t1 2\nb\t1 2 3\n"), Error);

  const fs::path p = fs::temp_directory_path() / "topodiff_names.tsv";
  {
    std::ofstream f(p);
    f << text;
  }
  const auto loaded = make_name_embedder("table:" + p.string());
  EXPECT_EQ(loaded->dim(), 3);
  EXPECT_EQ(loaded->embed("spine"), t.embed("spine"));
  EXPECT_EQ(make_name_embedder("hashed:8")->dim(), 8);
  EXPECT_THROW(make_name_embedder("word2vec"), Error);
  fs::remove(p);
}

TEST(Dataset, SaveLoadRoundTrip) {
  const Dataset ds = toy_dataset();
  const fs::path dir = fs::temp_directory_path() / "topodiff_dataset_rt";
  fs::remove_all(dir);
  ds.save(dir.string());
  ASSERT_TRUE(fs::exists(dir / "index.json"));
  const Dataset back = Dataset::load(dir.string());
  ASSERT_EQ(back.skeleton_count(), ds.skeleton_count());
  EXPECT_EQ(back.fingerprint(), ds.fingerprint());
  EXPECT_EQ(back.index_json(), ds.index_json());
  for (int i = 0; i < ds.skeleton_count(); ++i) {
    const auto& a = ds.entries[i];
    const auto& b = back.entries[i];
    EXPECT_EQ(a.id, b.id);
    EXPECT_EQ(a.skeleton.topology.parent, b.skeleton.topology.parent);
    EXPECT_EQ(a.skeleton.names, b.skeleton.names);
    EXPECT_LT((a.stats.mean - b.stats.mean).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((a.stats.std - b.stats.std).cwiseAbs().maxCoeff(), 1e-12);
    ASSERT_EQ(a.clips.size(), b.clips.size());
    for (std::size_t c = 0; c < a.clips.size(); ++c) EXPECT_EQ(a.clips[c].data, b.clips[c].data);
    EXPECT_EQ(a.clip_names, b.clip_names);
  }
  // Saving again yields identical index text.
  back.save(dir.string());
  EXPECT_EQ(read_text_file((dir / "index.json").string()), ds.index_json());
  fs::remove_all(dir);
}

TEST(Dataset, FingerprintTracksContent) {
  const Dataset a = toy_dataset();
  Dataset b = toy_dataset();
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  b.entries[1].clips[0].at(2, 3, 4) += 1e-3;
  EXPECT_NE(a.fingerprint(), b.fingerprint());
  Dataset c = toy_dataset();
  c.entries.pop_back();
  EXPECT_NE(a.fingerprint(), c.fingerprint());
}

TEST(Dataset, StatsAndLookup) {
  const Dataset ds = toy_dataset();
  EXPECT_EQ(ds.clip_counts(), (std::vector<int>{2, 2}));
  const SkeletonEntry& q = ds.find("quadruped");
  EXPECT_EQ(q.skeleton.joint_count(), q.stats.joint_count());
  EXPECT_EQ(q.total_frames(), 80);
  EXPECT_THROW(ds.find("dragon"), Error);
  std::vector<MotionTensor> clips = q.clips;
  const NormalizationStats s = compute_stats(clips);
  EXPECT_LT((s.mean - q.stats.mean).cwiseAbs().maxCoeff(), 1e-12);
  Dataset bad;
  EXPECT_THROW(bad.add("x", biped_skeleton(), {}), Error);
}
