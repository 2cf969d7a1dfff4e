#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mmtrack/trackio.hpp"

namespace mmtrack::ict {

struct TrackletEmbedding {
  int tracklet_id = 0;
  std::string camera_id;
  Embedding vector{};
};

// Row-major cosine distances, every value in [0, 2].
struct DistanceMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

enum class Profile { mmct, dhu };

struct AssocConfig {
  double alpha = 0.5;
  int last_k = 30;

  static AssocConfig for_profile(Profile profile);
};

Profile parse_profile(const std::string& name);

// Keyed by (camera_id, tracklet_id).
using GlobalIdMap = std::map<std::pair<std::string, int>, int>;

// Mean of the last min(last_k, size) vectors in frame order.
Embedding mean_embedding(const EmbeddingTrack& track, int last_k = 30);

// D[m][n] = 1 - cos(q_m, f_n). Throws Error on a zero-norm vector.
DistanceMatrix distance_matrix(const std::vector<TrackletEmbedding>& q,
                               const std::vector<TrackletEmbedding>& f);

// Cells with D > alpha are infeasible; the rest go through lap::solve.
std::vector<std::pair<std::size_t, std::size_t>> associate(const DistanceMatrix& d,
                                                           const AssocConfig& config);

struct CameraInput {
  TrackSet tracks;
  EmbeddingTable embeddings;
};

// Per-camera mean embeddings, one per tracklet of `tracks`. Throws Error when
// a tracklet has no embedding rows.
std::vector<TrackletEmbedding> tracklet_embeddings(const CameraInput& camera, int last_k);

// The first camera seeds the pool; each later camera is associated against
// every global identity seen so far, in camera order. Matched tracklets take
// the pool identity, the rest get fresh ids. Ids run contiguously from 1.
GlobalIdMap assign_global_ids(const std::vector<CameraInput>& cameras, const AssocConfig& config);

// `camera_id,tracklet_id,global_id` rows ordered by key.
void write_global_ids(const GlobalIdMap& map, std::ostream& out);
void write_global_ids_file(const GlobalIdMap& map, const std::filesystem::path& path);
GlobalIdMap parse_global_ids(std::istream& in);
GlobalIdMap read_global_ids_file(const std::filesystem::path& path);

}  // namespace mmtrack::ict
