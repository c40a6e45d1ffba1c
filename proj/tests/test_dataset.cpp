#include <gtest/gtest.h>

#include <set>

#include "support.hpp"

using namespace maaig;
using maaig::testing::ramp_clip;
using maaig::testing::TempDir;

namespace {

AnnotationRecord rec(std::string vid, double a, double b, std::string text) {
  return {std::move(vid), a, b, std::move(text), std::nullopt};
}

MotionClip video(const std::string& id, std::size_t frames = 150) {
  auto c = ramp_clip(frames);
  c.clip_id = id;
  return c;
}

// 20 source videos, 40 annotations: 36 distinct intervals plus 4 duplicates.
void fixture(std::vector<MotionClip>& clips, std::vector<AnnotationRecord>& anns) {
  for (int v = 0; v < 20; ++v) clips.push_back(video("vid" + std::to_string(100 + v)));
  for (int i = 0; i < 36; ++i) {
    const std::string id = "vid" + std::to_string(100 + i % 20);
    const double a = 0.5 * (i / 20) + 0.1, b = a + 1.5;
    anns.push_back(rec(id, a, b, "instruction " + std::to_string(i)));
  }
  for (int i = 0; i < 4; ++i) {
    auto dup = anns[static_cast<std::size_t>(3 * i)];
    dup.instruction = "second opinion " + std::to_string(i);
    anns.push_back(dup);
  }
}

}  // namespace

TEST(Merge, SeparatorAndOrder) {
  EXPECT_EQ(merge_instructions({rec("v", 0, 1, "keep arms tight")}), "keep arms tight");
  EXPECT_EQ(merge_instructions({rec("v", 0, 1, "keep arms tight"), rec("v", 0, 1, "land on the outside edge")}),
            "keep arms tight ; land on the outside edge");
  EXPECT_EQ(merge_instructions({rec("v", 0, 1, "a"), rec("v", 0, 1, "b"), rec("v", 0, 1, "c")}), "a ; b ; c");
  EXPECT_THROW(merge_instructions({rec("v", 0, 1, "a"), rec("v", 0, 2, "b")}), DatasetError);
  EXPECT_THROW(merge_instructions({}), std::invalid_argument);
}

TEST(Merge, AssociativeOverOrderedGroups) {
  std::vector<AnnotationRecord> a = {rec("v", 0, 1, "x"), rec("v", 0, 1, "y")}, b = {rec("v", 0, 1, "z")};
  auto all = a;
  all.insert(all.end(), b.begin(), b.end());
  EXPECT_EQ(merge_instructions(all),
            merge_instructions({rec("v", 0, 1, merge_instructions(a)), rec("v", 0, 1, merge_instructions(b))}));
}

TEST(SplitCounts, CeilNinetyPercent) {
  EXPECT_EQ(split_counts(164), (SplitCounts{148, 16}));
  EXPECT_EQ(split_counts(1), (SplitCounts{1, 0}));
  EXPECT_EQ(split_counts(20), (SplitCounts{18, 2}));
  EXPECT_EQ(split_counts(10), (SplitCounts{9, 1}));
  for (std::size_t n = 1; n <= 2000; ++n) {
    const auto s = split_counts(n);
    // oracle: smallest t with 10 t >= 9 n
    std::size_t t = 0;
    while (10 * t < 9 * n) ++t;
    EXPECT_EQ(s.train, t);
    EXPECT_EQ(s.train + s.test, n);
    if (n >= 10) {
      EXPECT_GE(s.test, 1u);
    }
    if (n >= 20) {
      const double frac = static_cast<double>(s.train) / static_cast<double>(n);
      EXPECT_GE(frac, 0.85);
      EXPECT_LE(frac, 0.95);
    }
  }
  EXPECT_THROW(split_counts(0), std::invalid_argument);
}

TEST(CheckAnnotation, Invariants) {
  EXPECT_TRUE(check_annotation(rec("v", 0, 1, "x")).empty());
  auto e = check_annotation(rec("v", 2, 1, "x"));
  ASSERT_EQ(e.size(), 1u);
  EXPECT_EQ(e[0].message, "start must precede end");
  EXPECT_FALSE(check_annotation(rec("v", 0, 1, "   ")).empty());
  EXPECT_FALSE(check_annotation(rec("v", -1, 1, "x")).empty());
}

TEST(BuildDataset, TwentyVideoFixture) {
  std::vector<MotionClip> clips;
  std::vector<AnnotationRecord> anns;
  fixture(clips, anns);
  const auto m = build_dataset(clips, anns, 7);
  ASSERT_EQ(m.examples.size(), 36u);
  EXPECT_EQ(m.count(Split::Train), split_counts(36).train);
  EXPECT_EQ(m.count(Split::Test), split_counts(36).test);
  std::size_t merged = 0;
  for (const auto& ex : m.examples) {
    EXPECT_EQ(ex.clip.coord, CoordSystem::Local);
    EXPECT_TRUE(validate(ex.clip).ok());
    EXPECT_EQ(ex.clip.size(), 45u);
    if (ex.instruction.find(" ; second opinion") != std::string::npos) ++merged;
  }
  EXPECT_EQ(merged, 4u);
  EXPECT_EQ(build_dataset(clips, anns, 7).examples, m.examples);
}

TEST(BuildDataset, ManifestFilesAreByteIdentical) {
  std::vector<MotionClip> clips;
  std::vector<AnnotationRecord> anns;
  fixture(clips, anns);
  TempDir a, b;
  save_manifest(a.path(), build_dataset(clips, anns, 3));
  save_manifest(b.path(), build_dataset(clips, anns, 3));
  EXPECT_EQ(read_text_file(a / "manifest.jsonl"), read_text_file(b / "manifest.jsonl"));
  const auto back = load_manifest(a.path());
  EXPECT_EQ(back.examples, build_dataset(clips, anns, 3).examples);
}

TEST(BuildDataset, SeedChangesSplitNotContent) {
  std::vector<MotionClip> clips;
  std::vector<AnnotationRecord> anns;
  fixture(clips, anns);
  const auto a = build_dataset(clips, anns, 1), b = build_dataset(clips, anns, 2);
  ASSERT_EQ(a.examples.size(), b.examples.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.examples.size(); ++i) {
    EXPECT_EQ(a.examples[i].instruction, b.examples[i].instruction);
    differs |= a.examples[i].split != b.examples[i].split;
  }
  EXPECT_TRUE(differs);
}

TEST(BuildDataset, TenGroupsSplitNineOne) {
  std::vector<MotionClip> clips = {video("v")};
  std::vector<AnnotationRecord> anns;
  for (int i = 0; i < 10; ++i) anns.push_back(rec("v", 0.25 * i, 0.25 * i + 0.5, "x"));
  const auto m = build_dataset(clips, anns, 0);
  EXPECT_EQ(m.count(Split::Train), 9u);
  EXPECT_EQ(m.count(Split::Test), 1u);
}

TEST(BuildDataset, ErrorsCarryTheRecord) {
  std::vector<MotionClip> clips = {video("v", 30)};
  try {
    build_dataset(clips, {rec("missing", 0, 1, "x")}, 0);
    FAIL();
  } catch (const DatasetError& e) {
    ASSERT_TRUE(e.record().has_value());
    EXPECT_EQ(e.record()->video_id, "missing");
  }
  try {
    build_dataset(clips, {rec("v", 5, 6, "late")}, 0);
    FAIL();
  } catch (const DatasetError& e) {
    ASSERT_TRUE(e.record().has_value());
    EXPECT_EQ(e.record()->instruction, "late");
  }
}

TEST(BuildDataset, OverlappingIntervalsStayDistinct) {
  std::vector<MotionClip> clips = {video("v")};
  const auto m = build_dataset(clips, {rec("v", 0, 1, "a"), rec("v", 0.5, 1.5, "b")}, 0);
  EXPECT_EQ(m.examples.size(), 2u);
}

TEST(AnnotationFile, RoundTrip) {
  TempDir dir;
  std::vector<AnnotationRecord> anns = {rec("v", 0.125, 1.5, "keep arms tight")};
  anns.push_back({"w", 2.0, 3.0, "bend", std::string("coach1")});
  save_annotations(dir / "a.json", anns);
  EXPECT_EQ(load_annotations(dir / "a.json"), anns);
}
