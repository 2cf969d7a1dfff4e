#include "mmtrack/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <ostream>
#include <set>
#include <unordered_map>

#include "mmtrack/lap.hpp"

namespace mmtrack::metrics {

namespace {

struct FrameBox {
  int id;
  Box box;
};

using FrameIndex = std::map<int, std::vector<FrameBox>>;

FrameIndex index_by_frame(const TrackSet& set) {
  FrameIndex out;
  for (const auto& [id, t] : set.tracklets()) {
    for (const auto& e : t.entries) out[e.frame].push_back({id, e.box});
  }
  return out;
}

double ratio(long num, long den) { return den > 0 ? static_cast<double>(num) / static_cast<double>(den) : 0.0; }

// Accumulates per-frame overlaps between identities on both sides and
// resolves them with a single bipartite matching.
class IdAccumulator {
 public:
  explicit IdAccumulator(double threshold) : threshold_(threshold) {}

  void add_frame(const std::vector<FrameBox>& gt, const std::vector<FrameBox>& pred) {
    gt_boxes_ += static_cast<long>(gt.size());
    pred_boxes_ += static_cast<long>(pred.size());
    for (const auto& g : gt) {
      const std::size_t gi = slot(gt_slots_, g.id);
      for (const auto& p : pred) {
        const std::size_t pj = slot(pred_slots_, p.id);
        if (iou(g.box, p.box) >= threshold_) ++overlap_[{gi, pj}];
      }
    }
    for (const auto& p : pred) slot(pred_slots_, p.id);
  }

  IdReport finish() const {
    IdReport r;
    const std::size_t rows = gt_slots_.size();
    const std::size_t cols = pred_slots_.size();
    long best = 0;
    for (const auto& [key, w] : overlap_) best = std::max(best, w);
    if (rows > 0 && cols > 0 && best > 0) {
      lap::CostMatrix cost(rows, cols);
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) cost.set(i, j, static_cast<double>(best));
      }
      for (const auto& [key, w] : overlap_) {
        cost.set(key.first, key.second, static_cast<double>(best - w));
      }
      for (const auto& [i, j] : lap::solve(cost).pairs) {
        const auto it = overlap_.find({i, j});
        if (it != overlap_.end()) r.idtp += it->second;
      }
    }
    r.idfn = gt_boxes_ - r.idtp;
    r.idfp = pred_boxes_ - r.idtp;
    r.idp = ratio(r.idtp, r.idtp + r.idfp);
    r.idr = ratio(r.idtp, r.idtp + r.idfn);
    r.idf1 = ratio(2 * r.idtp, 2 * r.idtp + r.idfp + r.idfn);
    return r;
  }

 private:
  static std::size_t slot(std::map<int, std::size_t>& slots, int id) {
    return slots.emplace(id, slots.size()).first->second;
  }

  double threshold_;
  std::map<int, std::size_t> gt_slots_;
  std::map<int, std::size_t> pred_slots_;
  std::map<std::pair<std::size_t, std::size_t>, long> overlap_;
  long gt_boxes_ = 0;
  long pred_boxes_ = 0;
};

void check_threshold(double t) {
  if (!(t > 0.0 && t <= 1.0)) throw Error("iou threshold must lie in (0, 1]");
}

}  // namespace

SctReport evaluate(const TrackSet& gt, const TrackSet& pred, double iou_threshold) {
  check_threshold(iou_threshold);
  const FrameIndex gt_frames = index_by_frame(gt);
  const FrameIndex pred_frames = index_by_frame(pred);
  std::set<int> frames;
  for (const auto& [f, v] : gt_frames) frames.insert(f);
  for (const auto& [f, v] : pred_frames) frames.insert(f);

  SctReport report;
  report.gt_tracks = static_cast<long>(gt.size());
  IdAccumulator ids(iou_threshold);
  std::unordered_map<int, int> last_match;  // gt id -> pred id, persists across gaps
  std::unordered_map<int, bool> was_tracked;
  std::unordered_map<int, long> tracked_frames;
  const std::vector<FrameBox> none;

  for (int f : frames) {
    const auto git = gt_frames.find(f);
    const auto pit = pred_frames.find(f);
    const auto& G = git == gt_frames.end() ? none : git->second;
    const auto& P = pit == pred_frames.end() ? none : pit->second;
    ids.add_frame(G, P);
    report.gt_boxes += static_cast<long>(G.size());

    std::vector<int> gt_match(G.size(), -1);
    std::vector<char> pred_used(P.size(), 0);
    std::unordered_map<int, std::size_t> pred_at;
    for (std::size_t j = 0; j < P.size(); ++j) pred_at[P[j].id] = j;

    // Carry over last frame's correspondences that still overlap enough.
    for (std::size_t i = 0; i < G.size(); ++i) {
      const auto lm = last_match.find(G[i].id);
      if (lm == last_match.end()) continue;
      const auto pj = pred_at.find(lm->second);
      if (pj == pred_at.end() || pred_used[pj->second]) continue;
      if (iou(G[i].box, P[pj->second].box) >= iou_threshold) {
        gt_match[i] = static_cast<int>(pj->second);
        pred_used[pj->second] = 1;
      }
    }

    std::vector<std::size_t> rows;
    std::vector<std::size_t> cols;
    for (std::size_t i = 0; i < G.size(); ++i) {
      if (gt_match[i] < 0) rows.push_back(i);
    }
    for (std::size_t j = 0; j < P.size(); ++j) {
      if (!pred_used[j]) cols.push_back(j);
    }
    if (!rows.empty() && !cols.empty()) {
      lap::CostMatrix cost(rows.size(), cols.size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < cols.size(); ++c) {
          const double v = iou(G[rows[r]].box, P[cols[c]].box);
          if (v >= iou_threshold) {
            cost.set(r, c, std::max(0.0, 1.0 - v));
          } else {
            cost.forbid(r, c);
          }
        }
      }
      for (const auto& [r, c] : lap::solve(cost).pairs) {
        const std::size_t i = rows[r];
        const std::size_t j = cols[c];
        gt_match[i] = static_cast<int>(j);
        pred_used[j] = 1;
        const auto lm = last_match.find(G[i].id);
        if (lm != last_match.end() && lm->second != P[j].id) ++report.ids;
      }
    }

    for (std::size_t i = 0; i < G.size(); ++i) {
      const int id = G[i].id;
      const bool matched = gt_match[i] >= 0;
      if (matched) {
        ++report.matches;
        ++tracked_frames[id];
        const auto prev = was_tracked.find(id);
        if (prev != was_tracked.end() && !prev->second && last_match.count(id)) ++report.frag;
        last_match[id] = P[static_cast<std::size_t>(gt_match[i])].id;
      } else {
        ++report.fn;
      }
      was_tracked[id] = matched;
    }
    for (std::size_t j = 0; j < P.size(); ++j) {
      if (!pred_used[j]) ++report.fp;
    }
  }

  for (const auto& [id, t] : gt.tracklets()) {
    const auto it = tracked_frames.find(id);
    const double coverage =
        static_cast<double>(it == tracked_frames.end() ? 0 : it->second) / static_cast<double>(t.size());
    if (coverage >= 0.8) ++report.mt;
    if (coverage <= 0.2) ++report.ml;
  }
  report.mota = report.gt_boxes > 0
                    ? 1.0 - static_cast<double>(report.fp + report.fn + report.ids) /
                                static_cast<double>(report.gt_boxes)
                    : 0.0;
  report.id = ids.finish();
  return report;
}

IdReport evaluate_mtmc(std::span<const TrackSet> gt, std::span<const TrackSet> pred,
                       const ict::GlobalIdMap& pred_ids, double iou_threshold) {
  check_threshold(iou_threshold);
  if (gt.size() != pred.size()) throw Error("evaluate_mtmc: camera count mismatch");
  IdAccumulator ids(iou_threshold);
  for (std::size_t c = 0; c < gt.size(); ++c) {
    std::map<int, Tracklet> merged;
    for (const auto& [id, t] : pred[c].tracklets()) {
      const auto it = pred_ids.find({pred[c].camera_id(), id});
      if (it == pred_ids.end()) {
        throw Error("tracklet " + std::to_string(id) + " of camera " + pred[c].camera_id() +
                    " has no global id");
      }
      auto& dst = merged[it->second];
      dst.id = it->second;
      dst.entries.insert(dst.entries.end(), t.entries.begin(), t.entries.end());
    }
    const FrameIndex gt_frames = index_by_frame(gt[c]);
    FrameIndex pred_frames;
    for (const auto& [gid, t] : merged) {
      for (const auto& e : t.entries) pred_frames[e.frame].push_back({gid, e.box});
    }
    std::set<int> frames;
    for (const auto& [f, v] : gt_frames) frames.insert(f);
    for (const auto& [f, v] : pred_frames) frames.insert(f);
    const std::vector<FrameBox> none;
    for (int f : frames) {
      const auto git = gt_frames.find(f);
      const auto pit = pred_frames.find(f);
      ids.add_frame(git == gt_frames.end() ? none : git->second,
                    pit == pred_frames.end() ? none : pit->second);
    }
  }
  return ids.finish();
}

void check_frame_domain(const TrackSet& gt, const TrackSet& pred) {
  const auto p = pred.frame_range();
  if (!p) return;
  const auto g = gt.frame_range();
  if (!g || p->first < g->first || p->last > g->last) {
    throw Error("prediction frames " + std::to_string(p->first) + ".." + std::to_string(p->last) +
                " fall outside the ground-truth range");
  }
}

std::vector<std::pair<std::string, double>> rows(const SctReport& r) {
  std::vector<std::pair<std::string, double>> out = {
      {"MOTA", r.mota},
      {"IDF1", r.id.idf1},
      {"IDP", r.id.idp},
      {"IDR", r.id.idr},
      {"IDS", static_cast<double>(r.ids)},
      {"FRAG", static_cast<double>(r.frag)},
      {"FP", static_cast<double>(r.fp)},
      {"FN", static_cast<double>(r.fn)},
      {"MT", static_cast<double>(r.mt)},
      {"ML", static_cast<double>(r.ml)},
      {"GT", static_cast<double>(r.gt_boxes)},
      {"IDTP", static_cast<double>(r.id.idtp)},
      {"IDFP", static_cast<double>(r.id.idfp)},
      {"IDFN", static_cast<double>(r.id.idfn)},
  };
  return out;
}

std::vector<std::pair<std::string, double>> rows(const IdReport& r) {
  return {{"IDF1", r.idf1},
          {"IDP", r.idp},
          {"IDR", r.idr},
          {"IDTP", static_cast<double>(r.idtp)},
          {"IDFP", static_cast<double>(r.idfp)},
          {"IDFN", static_cast<double>(r.idfn)}};
}

namespace {

bool is_ratio(const std::string& name) {
  return name == "MOTA" || name == "IDF1" || name == "IDP" || name == "IDR";
}

std::string format(const std::string& name, double v) {
  char buf[64];
  if (is_ratio(name)) {
    std::snprintf(buf, sizeof(buf), "%.6f", v);
  } else {
    std::snprintf(buf, sizeof(buf), "%.0f", v);
  }
  return buf;
}

}  // namespace

void write_table(const std::vector<std::pair<std::string, double>>& rows, std::ostream& out) {
  for (const auto& [name, v] : rows) {
    std::string line = name;
    line.resize(std::max<std::size_t>(line.size() + 1, 8), ' ');
    out << line << format(name, v) << '\n';
  }
}

void write_csv(const std::vector<std::pair<std::string, double>>& rows, std::ostream& out) {
  out << "metric,value\n";
  for (const auto& [name, v] : rows) out << name << ',' << format(name, v) << '\n';
}

}  // namespace mmtrack::metrics
