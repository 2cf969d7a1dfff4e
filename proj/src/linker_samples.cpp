#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_map>

#include "mmtrack/linker.hpp"

namespace mmtrack::linker {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kMaxAttempts = 200;

struct Source {
  std::size_t set = 0;
  const Tracklet* tracklet = nullptr;
};

struct EntryRef {
  const Tracklet* tracklet;
  std::size_t index;
};

class Sampler {
 public:
  Sampler(std::span<const TrackSet> gt, const TrainConfig& config)
      : config_(config), rng_(config.seed) {
    by_frame_.resize(gt.size());
    for (std::size_t s = 0; s < gt.size(); ++s) {
      for (const auto& [id, t] : gt[s].tracklets()) {
        for (std::size_t i = 0; i < t.size(); ++i) {
          by_frame_[s][t.entries[i].frame].push_back({&t, i});
        }
        if (t.size() >= 2) sources_.push_back({s, &t});
      }
    }
    if (sources_.empty()) {
      throw InsufficientGroundTruth("need a ground-truth trajectory with two or more boxes");
    }
  }

  std::vector<LinkSample> run() {
    const double ratio = config_.neg_pos_ratio;
    if (!(ratio > 0.0)) throw Error("generate_samples: neg_pos_ratio must be positive");
    if (config_.num_samples < 1) throw Error("generate_samples: num_samples must be positive");
    if (config_.max_gap < 1) throw Error("generate_samples: max_gap must be positive");
    const auto num_pos = std::max<long>(1, std::lround(config_.num_samples / (1.0 + ratio)));
    const auto num_neg = std::lround(ratio * static_cast<double>(num_pos));

    std::vector<LinkSample> out;
    out.reserve(static_cast<std::size_t>(num_pos + num_neg));
    for (long i = 0; i < num_pos; ++i) out.push_back(positive());
    for (long i = 0; i < num_neg; ++i) {
      const double u = uniform01();
      if (u < 0.5) {
        out.push_back(cross_identity());
      } else if (u < 0.75) {
        out.push_back(spatial_shift());
      } else {
        out.push_back(temporal_shift());
      }
    }
    std::shuffle(out.begin(), out.end(), rng_);
    return out;
  }

 private:
  struct Cut {
    Source src;
    std::size_t head_end = 0;    // index of the predecessor's last entry
    std::size_t tail_start = 0;  // index of the successor's first entry
  };

  double uniform01() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

  const Source& pick_source() {
    return sources_[static_cast<std::size_t>(uniform_int(0, static_cast<int>(sources_.size()) - 1))];
  }

  Tracklet head_piece(const Tracklet& t, std::size_t head_end) {
    const std::size_t first = head_end + 1 - std::min<std::size_t>(head_end + 1, kWindowFrames);
    Tracklet piece;
    piece.id = t.id;
    piece.entries.assign(t.entries.begin() + static_cast<std::ptrdiff_t>(first),
                         t.entries.begin() + static_cast<std::ptrdiff_t>(head_end + 1));
    return piece;
  }

  Tracklet tail_piece(const Tracklet& t, std::size_t tail_start) {
    const std::size_t last = tail_start + std::min<std::size_t>(t.size() - tail_start, kWindowFrames);
    Tracklet piece;
    piece.id = t.id;
    piece.entries.assign(t.entries.begin() + static_cast<std::ptrdiff_t>(tail_start),
                         t.entries.begin() + static_cast<std::ptrdiff_t>(last));
    return piece;
  }

  // First entry index whose frame is >= frame, or size().
  static std::size_t lower_bound_frame(const Tracklet& t, int frame) {
    const auto it = std::lower_bound(t.entries.begin(), t.entries.end(), frame,
                                     [](const TrackEntry& e, int f) { return e.frame < f; });
    return static_cast<std::size_t>(it - t.entries.begin());
  }

  // A same-identity cut whose junction gap lies in (0, max_gap].
  Cut draw_cut() {
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
      const Source& src = pick_source();
      const Tracklet& t = *src.tracklet;
      const auto c = static_cast<std::size_t>(uniform_int(0, static_cast<int>(t.size()) - 2));
      const int gap = uniform_int(1, config_.max_gap);
      const std::size_t j = lower_bound_frame(t, t.entries[c].frame + gap);
      if (j >= t.size()) continue;
      const int actual = t.entries[j].frame - t.entries[c].frame;
      if (actual > 0 && actual <= config_.max_gap) return {src, c, j};
    }
    throw InsufficientGroundTruth("cannot cut ground-truth trajectories within the gap limit");
  }

  LinkSample make(const Tracklet& head, const Tracklet& tail, int label) {
    auto [a, b] = make_pair_windows(head, tail, config_.image_size);
    return {a, b, label};
  }

  LinkSample positive() {
    const Cut cut = draw_cut();
    const Tracklet& t = *cut.src.tracklet;
    return make(head_piece(t, cut.head_end), tail_piece(t, cut.tail_start), 1);
  }

  // Predecessor from one identity, successor from another identity that
  // starts inside the gate.
  LinkSample cross_identity() {
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
      const Source& src = pick_source();
      const Tracklet& t = *src.tracklet;
      const auto c = static_cast<std::size_t>(uniform_int(0, static_cast<int>(t.size()) - 1));
      const Box& last = t.entries[c].box;
      std::vector<EntryRef> candidates;
      for (int gap = 1; gap <= config_.max_gap; ++gap) {
        const auto it = by_frame_[src.set].find(t.entries[c].frame + gap);
        if (it == by_frame_[src.set].end()) continue;
        for (const auto& ref : it->second) {
          if (ref.tracklet->id == t.id) continue;
          if (center_distance(last, ref.tracklet->entries[ref.index].box) <= config_.spatial_radius) {
            candidates.push_back(ref);
          }
        }
      }
      if (candidates.empty()) continue;
      const auto& pick =
          candidates[static_cast<std::size_t>(uniform_int(0, static_cast<int>(candidates.size()) - 1))];
      return make(head_piece(t, c), tail_piece(*pick.tracklet, pick.index), 0);
    }
    return spatial_shift();
  }

  // A true junction whose successor is displaced by more than the gate radius.
  LinkSample spatial_shift() {
    const Cut cut = draw_cut();
    const Tracklet& t = *cut.src.tracklet;
    const Tracklet head = head_piece(t, cut.head_end);
    Tracklet tail = tail_piece(t, cut.tail_start);
    const double radius = config_.spatial_radius * (1.0 + 2.0 * uniform01()) + 1e-6;
    const Box& first = tail.entries.front().box;
    double dx = 0.0;
    double dy = 0.0;
    for (int attempt = 0; attempt < 16; ++attempt) {
      const double angle = 2.0 * kPi * uniform01();
      dx = radius * std::cos(angle);
      dy = radius * std::sin(angle);
      const double cx = first.center_x() + dx;
      const double cy = first.center_y() + dy;
      if (cx >= 0.0 && cx <= config_.image_size.width && cy >= 0.0 &&
          cy <= config_.image_size.height) {
        break;
      }
    }
    for (auto& e : tail.entries) {
      e.box.x += dx;
      e.box.y += dy;
    }
    return make(head, tail, 0);
  }

  // Same identity, but the successor starts before the predecessor ends or
  // after the gap limit.
  LinkSample temporal_shift() {
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
      const Source& src = pick_source();
      const Tracklet& t = *src.tracklet;
      const auto c = static_cast<std::size_t>(uniform_int(0, static_cast<int>(t.size()) - 1));
      const int end = t.entries[c].frame;
      std::size_t j = 0;
      if (uniform01() < 0.5) {
        const int back = uniform_int(0, 2 * config_.max_gap);
        j = lower_bound_frame(t, end - back);
      } else {
        const int gap = uniform_int(config_.max_gap + 1, 4 * config_.max_gap);
        j = lower_bound_frame(t, end + gap);
      }
      if (j >= t.size()) continue;
      const int actual = t.entries[j].frame - end;
      if (actual > 0 && actual <= config_.max_gap) continue;
      return make(head_piece(t, c), tail_piece(t, j), 0);
    }
    return spatial_shift();
  }

  const TrainConfig& config_;
  std::mt19937_64 rng_;
  std::vector<Source> sources_;
  std::vector<std::unordered_map<int, std::vector<EntryRef>>> by_frame_;
};

}  // namespace

std::vector<LinkSample> generate_samples(std::span<const TrackSet> gt, const TrainConfig& config) {
  Sampler sampler(gt, config);
  return sampler.run();
}

std::vector<LinkSample> generate_samples(const TrackSet& gt, const TrainConfig& config) {
  return generate_samples(std::span<const TrackSet>(&gt, 1), config);
}

}  // namespace mmtrack::linker
