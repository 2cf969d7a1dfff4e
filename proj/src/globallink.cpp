#include "mmtrack/globallink.hpp"

#include <algorithm>
#include <numeric>

#include "mmtrack/lap.hpp"

namespace mmtrack::globallink {

void GateConfig::validate() const {
  if (min_gap < 0 || max_gap <= min_gap) throw Error("gate: need 0 <= min_gap < max_gap");
  if (!(spatial_radius > 0.0)) throw Error("gate: spatial_radius must be positive");
  if (!(score_threshold > 0.0 && score_threshold <= 1.0)) {
    throw Error("gate: score threshold must lie in (0, 1]");
  }
}

std::vector<CandidatePair> candidate_pairs(const TrackSet& tracks, const GateConfig& gate) {
  gate.validate();
  std::vector<const Tracklet*> by_start;
  by_start.reserve(tracks.size());
  for (const auto& [id, t] : tracks.tracklets()) by_start.push_back(&t);
  std::stable_sort(by_start.begin(), by_start.end(), [](const Tracklet* a, const Tracklet* b) {
    return a->start_frame() < b->start_frame();
  });

  std::vector<CandidatePair> out;
  for (const auto& [id, pred] : tracks.tracklets()) {
    const int lo = pred.end_frame() + gate.min_gap + 1;
    const int hi = pred.end_frame() + gate.max_gap;
    auto it = std::lower_bound(by_start.begin(), by_start.end(), lo,
                               [](const Tracklet* t, int f) { return t->start_frame() < f; });
    for (; it != by_start.end() && (*it)->start_frame() <= hi; ++it) {
      const Tracklet& succ = **it;
      const double d = center_distance(pred.entries.back().box, succ.entries.front().box);
      if (d > gate.spatial_radius) continue;
      out.push_back({pred.id, succ.id, succ.start_frame() - pred.end_frame(), d, 0.0, 1.0});
    }
  }
  std::sort(out.begin(), out.end(), [](const CandidatePair& a, const CandidatePair& b) {
    return a.pred_id != b.pred_id ? a.pred_id < b.pred_id : a.succ_id < b.succ_id;
  });
  return out;
}

std::vector<CandidatePair> score_pairs(const linker::LinkerParams& params,
                                       std::vector<CandidatePair> pairs, const TrackSet& tracks,
                                       ImageSize image) {
  if (pairs.empty()) return pairs;
  std::vector<std::pair<linker::Window, linker::Window>> windows;
  windows.reserve(pairs.size());
  for (const auto& p : pairs) {
    windows.push_back(linker::make_pair_windows(tracks.at(p.pred_id), tracks.at(p.succ_id), image));
  }
  const auto probs = linker::score(params, windows);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    pairs[i].p_hat = probs[i];
    pairs[i].edge_cost = 1.0 - probs[i];
  }
  return pairs;
}

namespace {

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::size_t> parent_;
};

std::size_t index_of(const std::vector<int>& sorted_ids, int id) {
  return static_cast<std::size_t>(std::lower_bound(sorted_ids.begin(), sorted_ids.end(), id) -
                                  sorted_ids.begin());
}

}  // namespace

LinkResult link_detailed(const TrackSet& tracks, const std::vector<CandidatePair>& scored,
                         const GateConfig& gate) {
  gate.validate();
  std::vector<int> ids;
  ids.reserve(tracks.size());
  for (const auto& [id, t] : tracks.tracklets()) ids.push_back(id);

  std::vector<int> rows;
  std::vector<int> cols;
  for (const auto& p : scored) {
    if (!tracks.contains(p.pred_id) || !tracks.contains(p.succ_id)) {
      throw Error("scored pair references unknown tracklet " + std::to_string(p.pred_id) + "->" +
                  std::to_string(p.succ_id));
    }
    rows.push_back(p.pred_id);
    cols.push_back(p.succ_id);
  }
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  std::sort(cols.begin(), cols.end());
  cols.erase(std::unique(cols.begin(), cols.end()), cols.end());

  lap::CostMatrix cost(rows.size(), cols.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < cols.size(); ++c) cost.forbid(r, c);
  }
  std::vector<const CandidatePair*> cell(rows.size() * cols.size(), nullptr);
  for (const auto& p : scored) {
    if (p.p_hat < gate.score_threshold) continue;
    const std::size_t r = index_of(rows, p.pred_id);
    const std::size_t c = index_of(cols, p.succ_id);
    cost.set(r, c, std::max(0.0, p.edge_cost));
    cell[r * cols.size() + c] = &p;
  }

  LinkResult result;
  UnionFind uf(ids.size());
  for (const auto& [r, c] : lap::solve(cost).pairs) {
    const CandidatePair* p = cell[r * cols.size() + c];
    result.accepted.push_back(*p);
    uf.unite(index_of(ids, p->pred_id), index_of(ids, p->succ_id));
  }

  // Roots are the smallest index of each chain, and ids are sorted, so the
  // root id is the chain's minimum id.
  std::map<int, Tracklet> merged;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int out_id = ids[uf.find(i)];
    result.id_map[ids[i]] = out_id;
    auto& dst = merged[out_id];
    dst.id = out_id;
    const auto& src = tracks.at(ids[i]).entries;
    dst.entries.insert(dst.entries.end(), src.begin(), src.end());
  }
  result.tracks = TrackSet(tracks.camera_id());
  for (auto& [id, t] : merged) {
    std::stable_sort(t.entries.begin(), t.entries.end(),
                     [](const TrackEntry& a, const TrackEntry& b) { return a.frame < b.frame; });
    for (std::size_t k = 1; k < t.entries.size(); ++k) {
      if (t.entries[k].frame == t.entries[k - 1].frame) {
        throw Error("merging into id " + std::to_string(id) + " duplicates frame " +
                    std::to_string(t.entries[k].frame));
      }
    }
    result.tracks.insert(std::move(t));
  }
  return result;
}

TrackSet link(const TrackSet& tracks, const std::vector<CandidatePair>& scored,
              const GateConfig& gate) {
  return link_detailed(tracks, scored, gate).tracks;
}

LinkResult run(const linker::LinkerParams& params, const TrackSet& tracks, const GateConfig& gate,
               ImageSize image) {
  auto pairs = score_pairs(params, candidate_pairs(tracks, gate), tracks, image);
  return link_detailed(tracks, pairs, gate);
}

EmbeddingTable remap_embeddings(const EmbeddingTable& table, const std::map<int, int>& id_map) {
  std::map<int, std::vector<std::pair<int, const Embedding*>>> rows;
  for (const auto& [id, track] : table) {
    const auto it = id_map.find(id);
    const int out_id = it == id_map.end() ? id : it->second;
    for (std::size_t i = 0; i < track.size(); ++i) rows[out_id].push_back({track.frames[i], &track.vectors[i]});
  }
  EmbeddingTable out;
  for (auto& [id, list] : rows) {
    std::stable_sort(list.begin(), list.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    EmbeddingTrack t;
    t.id = id;
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (i > 0 && list[i].first == list[i - 1].first) {
        throw Error("embedding frame " + std::to_string(list[i].first) + " collides in id " +
                    std::to_string(id));
      }
      t.frames.push_back(list[i].first);
      t.vectors.push_back(*list[i].second);
    }
    out.emplace(id, std::move(t));
  }
  return out;
}

}  // namespace mmtrack::globallink
