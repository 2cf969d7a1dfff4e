#pragma once

#include <map>
#include <vector>

#include "mmtrack/linker.hpp"
#include "mmtrack/trackio.hpp"

namespace mmtrack::globallink {

struct GateConfig {
  int min_gap = 0;  // exclusive
  int max_gap = 10;  // inclusive
  double spatial_radius = 90.0;
  double score_threshold = 0.5;

  // Throws Error on an inconsistent gate.
  void validate() const;
};

struct CandidatePair {
  int pred_id = 0;
  int succ_id = 0;
  int gap = 0;
  double center_distance = 0.0;
  double p_hat = 0.0;
  double edge_cost = 1.0;
};

// Ordered pairs whose junction passes the temporal and spatial gate, sorted
// by (pred_id, succ_id).
std::vector<CandidatePair> candidate_pairs(const TrackSet& tracks, const GateConfig& gate);

std::vector<CandidatePair> score_pairs(const linker::LinkerParams& params,
                                       std::vector<CandidatePair> pairs, const TrackSet& tracks,
                                       ImageSize image);

struct LinkResult {
  TrackSet tracks;
  std::vector<CandidatePair> accepted;
  std::map<int, int> id_map;  // input id -> output id
};

// Assignment over scored pairs (cells below the score threshold are
// infeasible), then chain merging under each chain's smallest id.
LinkResult link_detailed(const TrackSet& tracks, const std::vector<CandidatePair>& scored,
                         const GateConfig& gate);
TrackSet link(const TrackSet& tracks, const std::vector<CandidatePair>& scored,
              const GateConfig& gate);

// candidate_pairs, score_pairs and link_detailed in one call.
LinkResult run(const linker::LinkerParams& params, const TrackSet& tracks, const GateConfig& gate,
               ImageSize image);

// Re-keys embeddings by the linked ids. Throws Error on a frame collision.
EmbeddingTable remap_embeddings(const EmbeddingTable& table, const std::map<int, int>& id_map);

}  // namespace mmtrack::globallink
