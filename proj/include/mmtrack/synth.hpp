#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "mmtrack/trackio.hpp"

namespace mmtrack::synth {

// Inclusive range of junction gaps (tail start frame minus head end frame);
// a gap of g drops g - 1 frames.
struct GapRange {
  int min = 2;
  int max = 10;
};

struct SceneConfig {
  int num_identities = 30;
  int cameras = 1;
  int frames = 600;
  ImageSize image_size;
  double walk_step_std = 0.3;  // per-frame velocity perturbation, px/frame
  double max_speed = 6.0;      // px/frame
  int min_track_length = 60;   // frames an identity stays in view
  double occlusion_rate = 0.5;
  GapRange occlusion_gap;
  int min_fragment = 5;
  double embedding_intra_std = 0.05;
  double embedding_inter_separation = 0.6;
  double camera_bias_std = 0.1;
  std::uint64_t seed = 7;
};

struct Scene {
  // Per camera; tracklet ids are global identity ids.
  std::vector<TrackSet> gt;
  std::vector<EmbeddingTable> embeddings;
};

// Random-walk trajectories reflected at the image borders, plus Re-ID style
// embeddings with the configured separation margins. Throws Error when the
// separation request is geometrically infeasible.
Scene gen_scene(const SceneConfig& config);

struct Cut {
  int original_id = 0;
  int head_id = 0;
  int tail_id = 0;
  int head_end_frame = 0;
  int tail_start_frame = 0;
};

struct Fragmented {
  TrackSet tracks;
  std::vector<Cut> cuts;
  std::map<int, int> origin;  // fragment id -> ground-truth id
};

// Simulates identity switches: each trajectory is cut with probability
// occlusion_rate, the tail gets a fresh id and is cut again with the same
// probability. Retained boxes are untouched.
Fragmented fragment(const TrackSet& gt, const SceneConfig& config);

// Embeddings keyed by fragment id.
EmbeddingTable fragment_embeddings(const EmbeddingTable& gt_embeddings,
                                   const Fragmented& fragmented);

}  // namespace mmtrack::synth
