#include "mmtrack/globallink.hpp"

#include <algorithm>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "mmtrack/metrics.hpp"
#include "support.hpp"

namespace mmtrack::globallink {
namespace {

using test::line_track;
using test::track_set;

constexpr ImageSize kImage{1920, 1080};

// Predecessor ends at frame 20 with its last box centered at (120, 150).
TrackSet junction(int gap, double dx) {
  return track_set({line_track(1, 11, 10, 100 - 9.0, 100, 1.0),
                    line_track(2, 20 + gap, 10, 100 + dx, 100, 1.0)});
}

TEST(CandidatePairs, GapFiveDistanceFifty) {
  const auto pairs = candidate_pairs(junction(5, 50), GateConfig{});
  ASSERT_EQ(pairs.size(), 1u);
  EXPECT_EQ(pairs[0].pred_id, 1);
  EXPECT_EQ(pairs[0].succ_id, 2);
  EXPECT_EQ(pairs[0].gap, 5);
  EXPECT_DOUBLE_EQ(pairs[0].center_distance, 50.0);
}

TEST(CandidatePairs, GateBoundaries) {
  EXPECT_TRUE(candidate_pairs(junction(0, 10), GateConfig{}).empty());
  EXPECT_TRUE(candidate_pairs(junction(11, 10), GateConfig{}).empty());
  EXPECT_EQ(candidate_pairs(junction(10, 10), GateConfig{}).size(), 1u);
  EXPECT_EQ(candidate_pairs(junction(1, 90), GateConfig{}).size(), 1u);
  EXPECT_TRUE(candidate_pairs(junction(1, 90.5), GateConfig{}).empty());
}

TEST(CandidatePairs, InvalidGate) {
  GateConfig g;
  g.max_gap = 0;
  EXPECT_THROW(candidate_pairs(TrackSet{}, g), Error);
  g = GateConfig{};
  g.spatial_radius = 0.0;
  EXPECT_THROW(candidate_pairs(TrackSet{}, g), Error);
}

TrackSet random_fragments(std::uint64_t seed, int count) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(0.0, 400.0);
  std::vector<Tracklet> tracks;
  for (int id = 1; id <= count; ++id) {
    const int first = 1 + static_cast<int>(rng() % 120);
    const int len = 1 + static_cast<int>(rng() % 25);
    tracks.push_back(line_track(id, first, len, pos(rng), pos(rng), 1.0, 0.5));
  }
  return track_set(std::move(tracks));
}

// Gate-only brute force over every ordered pair.
std::set<std::pair<int, int>> brute_candidates(const TrackSet& s, const GateConfig& g) {
  std::set<std::pair<int, int>> out;
  for (const auto& [i, a] : s.tracklets()) {
    for (const auto& [j, b] : s.tracklets()) {
      const int gap = b.start_frame() - a.end_frame();
      if (gap <= g.min_gap || gap > g.max_gap) continue;
      if (center_distance(a.entries.back().box, b.entries.front().box) > g.spatial_radius) continue;
      out.insert({i, j});
    }
  }
  return out;
}

std::set<std::pair<int, int>> keys(const std::vector<CandidatePair>& pairs) {
  std::set<std::pair<int, int>> out;
  for (const auto& p : pairs) out.insert({p.pred_id, p.succ_id});
  return out;
}

TEST(CandidatePairs, MatchesBruteForceAndSorted) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const TrackSet s = random_fragments(seed, 60);
    const auto pairs = candidate_pairs(s, GateConfig{});
    EXPECT_EQ(keys(pairs), brute_candidates(s, GateConfig{}));
    EXPECT_TRUE(std::is_sorted(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
      return std::pair{a.pred_id, a.succ_id} < std::pair{b.pred_id, b.succ_id};
    }));
  }
}

TEST(CandidatePairs, MonotoneGating) {
  const TrackSet s = random_fragments(9, 80);
  GateConfig wide;
  wide.max_gap = 15;
  wide.spatial_radius = 150;
  const auto big = keys(candidate_pairs(s, wide));
  for (int gap : {1, 5, 10, 15}) {
    for (double radius : {20.0, 90.0, 150.0}) {
      GateConfig g;
      g.max_gap = gap;
      g.spatial_radius = radius;
      const auto small = keys(candidate_pairs(s, g));
      EXPECT_TRUE(std::includes(big.begin(), big.end(), small.begin(), small.end()));
    }
  }
}

linker::LinkerParams zero_head_params() {
  linker::LinkerArch arch;
  arch.channels = {2, 2, 2};
  arch.hidden = 4;
  auto p = linker::init_params<float>(arch, 1);
  p.fc2_weight.setZero();
  p.fc2_bias.setZero();
  return p;
}

TEST(ScorePairs, EmptyList) {
  EXPECT_TRUE(score_pairs(zero_head_params(), {}, TrackSet{}, kImage).empty());
}

TEST(ScorePairs, ZeroFinalLayerGivesHalf) {
  const TrackSet s = random_fragments(3, 50);
  const auto scored = score_pairs(zero_head_params(), candidate_pairs(s, GateConfig{}), s, kImage);
  ASSERT_FALSE(scored.empty());
  for (const auto& p : scored) {
    EXPECT_EQ(p.p_hat, 0.5);
    EXPECT_EQ(p.edge_cost, 0.5);
  }
}

TEST(ScorePairs, InvariantUnderRelabeling) {
  linker::LinkerArch arch;
  arch.channels = {3, 3, 3};
  arch.hidden = 8;
  const auto params = linker::init_params<float>(arch, 4);
  const TrackSet s = random_fragments(4, 50);
  std::vector<Tracklet> relabeled;
  for (const auto& [id, t] : s.tracklets()) {
    Tracklet copy = t;
    copy.id = 1000 - id;
    relabeled.push_back(copy);
  }
  const TrackSet r = track_set(relabeled);
  const auto a = score_pairs(params, candidate_pairs(s, GateConfig{}), s, kImage);
  const auto b = score_pairs(params, candidate_pairs(r, GateConfig{}), r, kImage);
  ASSERT_EQ(a.size(), b.size());
  std::map<std::pair<int, int>, double> by_key;
  for (const auto& p : b) by_key[{1000 - p.pred_id, 1000 - p.succ_id}] = p.p_hat;
  for (const auto& p : a) EXPECT_NEAR(p.p_hat, (by_key.at({p.pred_id, p.succ_id})), 1e-6);
}

CandidatePair scored(int pred, int succ, double p) { return {pred, succ, 1, 0.0, p, 1.0 - p}; }

TEST(Link, NoCandidatesIsIdentity) {
  const TrackSet s = random_fragments(5, 20);
  EXPECT_EQ(link(s, {}, GateConfig{}), s);
}

TEST(Link, SinglePairMergesUnderSmallerId) {
  const TrackSet s = track_set({line_track(7, 1, 5, 0, 0), line_track(3, 8, 5, 0, 0)});
  const LinkResult r = link_detailed(s, {scored(7, 3, 0.9)}, GateConfig{});
  ASSERT_EQ(r.tracks.size(), 1u);
  const Tracklet& t = r.tracks.at(3);
  EXPECT_EQ(t.size(), 10u);
  EXPECT_EQ(t.start_frame(), 1);
  EXPECT_EQ(r.id_map.at(7), 3);
  EXPECT_EQ(r.accepted.size(), 1u);
}

TEST(Link, BelowThresholdIgnored) {
  const TrackSet s = track_set({line_track(1, 1, 5, 0, 0), line_track(2, 8, 5, 0, 0)});
  EXPECT_EQ(link(s, {scored(1, 2, 0.49)}, GateConfig{}), s);
}

TEST(Link, ThresholdOneIsNoOp) {
  const TrackSet s = track_set({line_track(1, 1, 5, 0, 0), line_track(2, 8, 5, 0, 0)});
  GateConfig g;
  g.score_threshold = 1.0;
  const double p = linker::same_identity_probability(-50.0, 50.0);
  EXPECT_EQ(link(s, {scored(1, 2, p)}, g), s);
}

TEST(Link, ChainsCollapse) {
  const TrackSet s = track_set({line_track(4, 1, 5, 0, 0), line_track(2, 8, 5, 0, 0),
                                line_track(9, 15, 5, 0, 0), line_track(5, 40, 3, 0, 0)});
  const LinkResult r = link_detailed(s, {scored(4, 2, 0.8), scored(2, 9, 0.7)}, GateConfig{});
  EXPECT_EQ(r.tracks.size(), 2u);
  EXPECT_EQ(r.tracks.at(2).size(), 15u);
  EXPECT_EQ(r.tracks.at(5), s.at(5));
  EXPECT_EQ(r.id_map.at(4), 2);
  EXPECT_EQ(r.id_map.at(9), 2);
}

TEST(Link, AssignmentPicksCheapestConsistentSet) {
  // 1 could continue as 2 or 3; 4 only as 3. Maximum cardinality wins.
  const TrackSet s = track_set({line_track(1, 1, 5, 0, 0), line_track(4, 1, 5, 500, 0),
                                line_track(2, 8, 5, 0, 0), line_track(3, 8, 5, 500, 0)});
  const LinkResult r = link_detailed(s, {scored(1, 3, 0.95), scored(1, 2, 0.6), scored(4, 3, 0.7)}, GateConfig{});
  EXPECT_EQ(r.id_map.at(2), 1);
  EXPECT_EQ(r.id_map.at(4), 3);
}

TEST(Link, DuplicateFramesRejected) {
  const TrackSet s = track_set({line_track(1, 1, 5, 0, 0), line_track(2, 3, 5, 0, 0)});
  EXPECT_THROW(link(s, {scored(1, 2, 0.9)}, GateConfig{}), Error);
}

TEST(Link, UnknownTrackletRejected) {
  const TrackSet s = track_set({line_track(1, 1, 5, 0, 0)});
  EXPECT_THROW(link(s, {scored(1, 2, 0.9)}, GateConfig{}), Error);
}

TEST(Link, ConservationAndMatchingValidity) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const TrackSet s = random_fragments(seed, 80);
    auto pairs = candidate_pairs(s, GateConfig{});
    for (auto& p : pairs) {
      p.p_hat = u(rng);
      p.edge_cost = 1.0 - p.p_hat;
    }
    const LinkResult r = link_detailed(s, pairs, GateConfig{});
    EXPECT_EQ(r.tracks.detection_count(), s.detection_count());
    std::set<int> preds, succs;
    for (const auto& p : r.accepted) {
      EXPECT_TRUE(preds.insert(p.pred_id).second);
      EXPECT_TRUE(succs.insert(p.succ_id).second);
      EXPECT_GE(p.p_hat, 0.5);
    }
    for (const auto& [id, t] : r.tracks.tracklets()) EXPECT_NO_THROW(t.validate());
  }
}

TEST(Link, ThreeFragmentsRepaired) {
  // One identity cut twice, scored by an oracle that knows the truth.
  const Tracklet whole = line_track(1, 1, 90, 100, 200, 2.0, 0.5);
  Tracklet a{1, {whole.entries.begin(), whole.entries.begin() + 30}};
  Tracklet b{2, {whole.entries.begin() + 35, whole.entries.begin() + 60}};
  Tracklet c{3, {whole.entries.begin() + 64, whole.entries.end()}};
  const TrackSet frag = track_set({a, b, c});
  const TrackSet gt = track_set({whole});
  auto pairs = candidate_pairs(frag, GateConfig{});
  ASSERT_EQ(keys(pairs), (std::set<std::pair<int, int>>{{1, 2}, {2, 3}}));
  for (auto& p : pairs) {
    p.p_hat = 0.9;
    p.edge_cost = 0.1;
  }
  const TrackSet linked = link(frag, pairs, GateConfig{});
  EXPECT_EQ(linked.size(), 1u);
  EXPECT_EQ(metrics::evaluate(gt, frag).ids, 2);
  EXPECT_EQ(metrics::evaluate(gt, linked).ids, 0);
}

TEST(RemapEmbeddings, FollowsIdMapAndDetectsCollisions) {
  EmbeddingTable t;
  t[1] = {1, {1, 2}, {Embedding{}, Embedding{}}};
  t[2] = {2, {4}, {Embedding{}}};
  const auto out = remap_embeddings(t, {{1, 1}, {2, 1}});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out.at(1).frames, (std::vector<int>{1, 2, 4}));
  t[2].frames = {2};
  EXPECT_THROW(remap_embeddings(t, {{1, 1}, {2, 1}}), Error);
}

}  // namespace
}  // namespace mmtrack::globallink
