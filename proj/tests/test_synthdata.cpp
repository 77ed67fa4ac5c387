#include <gtest/gtest.h>

#include <set>

#include "conr/raster.hpp"
#include "conr/rng.hpp"
#include "conr/synthdata.hpp"
#include "support/pose_consistency.hpp"

using namespace conr;

TEST(GenCharacter, SeedDeterminism) {
  EXPECT_TRUE(gen_character(42) == gen_character(42));
  EXPECT_FALSE(gen_character(42) == gen_character(43));
  const auto a = build_mesh(gen_character(7)), b = build_mesh(gen_character(7));
  EXPECT_EQ(a.vertices, b.vertices);
  EXPECT_EQ(a.triangles, b.triangles);
}

TEST(GenCharacter, PalettesDifferAcrossHundredSeeds) {
  std::set<std::vector<double>> palettes;
  for (std::uint64_t s = 0; s < 100; ++s) {
    std::vector<double> pal;
    for (const auto& p : gen_character(s).parts)
      for (int c = 0; c < 3; ++c) pal.push_back(p.color[c]);
    palettes.insert(pal);
  }
  EXPECT_EQ(palettes.size(), 100u);
}

TEST(GenCharacter, MeshesAreValidAndSmall) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto spec = gen_character(s);
    const auto mesh = build_mesh(spec);
    EXPECT_NO_THROW(mesh.validate());
    EXPECT_LE(mesh.triangles.size(), 2000u);
    EXPECT_GE(spec.skeleton.joints.size(), 10u);
    EXPECT_LE(spec.skeleton.joints.size(), 12u);
    // Centered vertically at the origin.
    double lo = 1e9, hi = -1e9;
    for (const auto& v : mesh.vertices) {
      lo = std::min(lo, v.y());
      hi = std::max(hi, v.y());
    }
    EXPECT_NEAR(lo + hi, 0.0, 1e-12);
  }
}

TEST(GenPose, WithinLimitsOverThousandSamples) {
  const auto spec = gen_character(3);
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const Pose p = gen_pose(s, spec);
    ASSERT_TRUE(p.within_limits(spec.skeleton, 0.0));
    ASSERT_LE(std::abs(p.yaw), spec.yaw_limit);
  }
  const Pose a = gen_pose(9, spec), b = gen_pose(9, spec);
  EXPECT_EQ(a.angles, b.angles);
  EXPECT_EQ(a.yaw, b.yaw);
}

TEST(GenBackground, DeterministicOpaqueInRange) {
  const auto a = gen_background(5, 24, 16), b = gen_background(5, 24, 16);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(in_unit_range(a.data));
  for (std::size_t p = 0; p < a.pixels(); ++p) ASSERT_EQ(a.data[p * 4 + 3], 1.0f);
  EXPECT_NE(gen_background(6, 24, 16), a);
}

TEST(MakeSample, MinimalSizes) {
  const auto s = make_sample(gen_character(1), 1, 1, 10, 32);
  EXPECT_EQ(s.sheet.size(), 1u);
  EXPECT_EQ(s.augmented.size(), 1u);
  EXPECT_EQ(s.target.height, 32);
  EXPECT_EQ(s.target_udp.width, 32);
  EXPECT_TRUE(is_valid_gt_udp(s.target_udp));
  EXPECT_THROW(make_sample(gen_character(1), 1, 1, 10, 8), ConfigError);
  EXPECT_THROW(make_sample(gen_character(1), 0, 1, 10, 32), ConfigError);
}

TEST(MakeSample, UdpOccupancyEqualsAlphaBeforeCrop) {
  const auto spec = gen_character(11);
  const auto s = make_sample(spec, 2, 2, 77, 48, SampleOptions{false, true});
  int occupied = 0;
  for (std::size_t p = 0; p < s.target.pixels(); ++p) {
    ASSERT_EQ(s.target.data[p * 4 + 3], s.target_udp.data[p * 4 + 3]);
    occupied += s.target_udp.data[p * 4 + 3] == 1.0f;
  }
  EXPECT_GT(occupied, 48 * 48 / 20);  // the character is actually in frame
  EXPECT_TRUE(is_valid_gt_udp(s.target_udp));
}

TEST(MakeSample, AugmentedTargetsComposite) {
  const auto s = make_sample(gen_character(12), 1, 3, 5, 32, SampleOptions{false, true});
  for (int j = 0; j < 3; ++j) {
    const auto bg = gen_background(derive_seed(5, 3000 + j), 32, 32);
    for (std::size_t p = 0; p < s.target.pixels(); ++p) {
      const float a = s.target.data[p * 4 + 3];
      for (int c = 0; c < 3; ++c) {
        const float want = a == 1.0f ? s.target.data[p * 4 + c] : bg.data[p * 4 + c];
        ASSERT_EQ(s.augmented[j].data[p * 4 + c], want);
      }
      ASSERT_EQ(s.augmented[j].data[p * 4 + 3], 1.0f);
    }
  }
}

TEST(MakeSample, CropKeepsGroundTruthBinaryAndDeterministic) {
  const auto spec = gen_character(13);
  const auto a = make_sample(spec, 2, 2, 99, 32);
  const auto b = make_sample(spec, 2, 2, 99, 32);
  EXPECT_EQ(a.target, b.target);
  EXPECT_EQ(a.target_udp, b.target_udp);
  EXPECT_TRUE(is_valid_gt_udp(a.target_udp));
  EXPECT_TRUE(in_unit_range(a.augmented[0].data));
  const auto unlabeled = make_sample(spec, 2, 2, 99, 32, SampleOptions{true, false});
  EXPECT_FALSE(unlabeled.has_udp_gt);
  EXPECT_EQ(unlabeled.target_udp.height, 0);
}

TEST(SplitDataset, SixteenToOneByCharacter) {
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s = 0; s < 17; ++s) seeds.push_back(1000 + s);
  const auto sp = split_dataset(seeds, 16, 1);
  EXPECT_EQ(sp.train.size(), 16u);
  EXPECT_EQ(sp.val.size(), 1u);
  const auto again = split_dataset(seeds, 16, 1);
  EXPECT_EQ(sp.val, again.val);
  seeds.resize(5);
  EXPECT_THROW(split_dataset(seeds, 16, 1), ConfigError);
}

TEST(SplitDataset, DisjointOverHundredSplits) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::uint64_t> seeds;
    const int n = rng.uniform_int(17, 60);
    for (int i = 0; i < n; ++i) seeds.push_back(static_cast<std::uint64_t>(i) * 7919 + trial);
    const auto sp = split_dataset(seeds, 16, static_cast<std::uint64_t>(trial));
    std::set<std::uint64_t> train(sp.train.begin(), sp.train.end());
    for (auto v : sp.val) ASSERT_EQ(train.count(v), 0u);
    ASSERT_EQ(sp.train.size() + sp.val.size(), seeds.size());
    ASSERT_EQ(sp.val.size(), static_cast<std::size_t>(n / 17));
  }
}

TEST(FillViews, CyclingRule) {
  EXPECT_EQ(fill_views(std::vector<char>{'a'}, 4), (std::vector<char>{'a', 'a', 'a', 'a'}));
  EXPECT_EQ(fill_views(std::vector<char>{'a', 'b', 'c', 'd'}, 4), (std::vector<char>{'a', 'b', 'c', 'd'}));
  EXPECT_EQ(fill_views(std::vector<char>{'a', 'b', 'c'}, 4), (std::vector<char>{'a', 'b', 'c', 'a'}));
  EXPECT_THROW(fill_views(std::vector<char>{}, 4), EmptySetError);
}

TEST(CharacterJson, RoundTripIsExact) {
  for (std::uint64_t s : {0ull, 5ull, 123456789ull}) {
    const auto spec = gen_character(s);
    const auto back = character_from_json(character_to_json(spec));
    EXPECT_TRUE(back == spec);
    EXPECT_EQ(build_mesh(back).vertices, build_mesh(spec).vertices);
  }
}

TEST(CharacterJson, ErrorsCarryLineNumbers) {
  std::string text = character_to_json(gen_character(2));
  const auto bad_pos = text.find("\"parts\"");
  std::string broken = text;
  broken.insert(bad_pos, "@");
  try {
    character_from_json(broken);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.kind(), ParseError::Kind::kSyntax);
    EXPECT_EQ(e.offset(), 1 + std::count(text.begin(), text.begin() + bad_pos, '\n'));
  }
  std::string unknown = text;
  const auto jpos = unknown.find("\"joint\": \"head\"");
  ASSERT_NE(jpos, std::string::npos);
  unknown.replace(jpos, 15, "\"joint\": \"tail\"");
  try {
    character_from_json(unknown);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.kind(), ParseError::Kind::kSchema);
    EXPECT_EQ(e.offset(), 1 + std::count(unknown.begin(), unknown.begin() + jpos, '\n'));
  }
}

TEST(PoseJson, RoundTripAndUnknownJoint) {
  const auto spec = gen_character(8);
  const Pose p = gen_pose(3, spec);
  const Pose back = pose_from_json(pose_to_json(p, spec.skeleton), spec.skeleton);
  EXPECT_EQ(back.angles, p.angles);
  EXPECT_EQ(back.yaw, p.yaw);
  const std::string text = "{\n  \"yaw\": 0.1,\n  \"joints\": {\n    \"tail\": [0, 0, 0]\n  }\n}\n";
  try {
    pose_from_json(text, spec.skeleton);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }
}

TEST(PoseConsistency, LandmarksFollowVerticesAcrossPoses) {
  for (std::uint64_t c = 0; c < 3; ++c) {
    const auto spec = gen_character(100 + c);
    const auto mesh = build_mesh(spec);
    const auto lms = bake_landmarks(mesh);
    const auto st = oracle::pose_consistency(mesh, lms, gen_pose(2 * c, spec), gen_pose(2 * c + 1, spec), 48, 1);
    EXPECT_GT(st.compared, 5) << "character " << c;
    EXPECT_LE(st.max_error, 1e-6);
  }
}
