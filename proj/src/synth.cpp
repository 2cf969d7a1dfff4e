#include "mmtrack/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace mmtrack::synth {

namespace {

constexpr double kPi = 3.14159265358979323846;

double round2(double v) { return std::round(v * 100.0) / 100.0; }

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

Embedding random_unit(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Embedding v{};
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& x : v) {
      x = n(rng);
      norm += x * x;
    }
  } while (norm < 1e-12);
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

double dot(const Embedding& a, const Embedding& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

// Unit vector orthogonal to `base`.
Embedding random_orthogonal(Rng& rng, const Embedding& base) {
  while (true) {
    Embedding u = random_unit(rng);
    const double d = dot(u, base);
    double norm = 0.0;
    for (std::size_t i = 0; i < kEmbeddingDim; ++i) {
      u[i] -= d * base[i];
      norm += u[i] * u[i];
    }
    if (norm < 1e-12) continue;
    norm = std::sqrt(norm);
    for (auto& x : u) x /= norm;
    return u;
  }
}

void validate(const SceneConfig& c) {
  if (c.num_identities < 1 || c.cameras < 1 || c.frames < 1) {
    throw Error("scene: identity, camera and frame counts must be >= 1");
  }
  if (c.image_size.width < 64 || c.image_size.height < 64) throw Error("scene: image too small");
  if (!(c.occlusion_rate >= 0.0 && c.occlusion_rate <= 1.0)) {
    throw Error("scene: occlusion_rate must lie in [0, 1]");
  }
  if (c.occlusion_gap.min < 1 || c.occlusion_gap.max < c.occlusion_gap.min ||
      c.occlusion_gap.max > 10) {
    throw Error("scene: occlusion_gap must lie within (0, 10]");
  }
  if (c.min_fragment < 1) throw Error("scene: min_fragment must be >= 1");
  if (c.walk_step_std < 0.0 || !(c.max_speed > 0.0)) throw Error("scene: invalid motion settings");
  if (c.embedding_intra_std < 0.0 || c.embedding_intra_std >= 1.0 ||
      c.embedding_inter_separation <= 0.0 || c.embedding_inter_separation > 2.0 ||
      c.camera_bias_std < 0.0) {
    throw Error("scene: invalid embedding settings");
  }
}

struct Motion {
  double cx, cy, vx, vy, h, aspect;
};

std::vector<TrackEntry> walk(Rng& rng, const SceneConfig& c, int start, int length) {
  const double W = c.image_size.width;
  const double H = c.image_size.height;
  Motion m{};
  m.h = uniform(rng, 0.06, 0.2) * H;
  m.aspect = uniform(rng, 0.35, 0.5);
  const double hw0 = 0.5 * m.h * m.aspect;
  m.cx = uniform(rng, hw0 + 1.0, W - hw0 - 1.0);
  m.cy = uniform(rng, 0.5 * m.h + 1.0, H - 0.5 * m.h - 1.0);
  const double heading = uniform(rng, 0.0, 2.0 * kPi);
  const double speed = uniform(rng, 0.5, 0.6 * c.max_speed);
  m.vx = speed * std::cos(heading);
  m.vy = 0.4 * speed * std::sin(heading);
  std::normal_distribution<double> step(0.0, c.walk_step_std);
  std::normal_distribution<double> grow(0.0, 0.004);

  std::vector<TrackEntry> out;
  out.reserve(static_cast<std::size_t>(length));
  for (int k = 0; k < length; ++k) {
    if (k > 0) {
      m.vx += step(rng);
      m.vy += 0.5 * step(rng);
      const double s = std::hypot(m.vx, m.vy);
      if (s > c.max_speed) {
        m.vx *= c.max_speed / s;
        m.vy *= c.max_speed / s;
      }
      m.h = std::clamp(m.h * std::exp(grow(rng)), 0.04 * H, 0.35 * H);
      m.cx += m.vx;
      m.cy += m.vy;
      const double hw = 0.5 * m.h * m.aspect;
      const double hh = 0.5 * m.h;
      // Reflect at the borders so the box stays inside the frame.
      if (m.cx - hw < 0.0) {
        m.cx = 2.0 * hw - m.cx;
        m.vx = std::abs(m.vx);
      } else if (m.cx + hw > W) {
        m.cx = 2.0 * (W - hw) - m.cx;
        m.vx = -std::abs(m.vx);
      }
      if (m.cy - hh < 0.0) {
        m.cy = 2.0 * hh - m.cy;
        m.vy = std::abs(m.vy);
      } else if (m.cy + hh > H) {
        m.cy = 2.0 * (H - hh) - m.cy;
        m.vy = -std::abs(m.vy);
      }
      m.cx = std::clamp(m.cx, hw, W - hw);
      m.cy = std::clamp(m.cy, hh, H - hh);
    }
    const double w = m.h * m.aspect;
    Box box{round2(m.cx - 0.5 * w), round2(m.cy - 0.5 * m.h), round2(w), round2(m.h)};
    out.push_back({start + k, box, 1.0});
  }
  return out;
}

}  // namespace

Scene gen_scene(const SceneConfig& config) {
  validate(config);
  Rng rng(config.seed);

  // Every per-frame sample lies within half the intra angle of its base, so
  // any two samples of one identity are within embedding_intra_std.
  const double half_intra = 0.5 * std::acos(1.0 - config.embedding_intra_std);
  const double separation_angle = std::acos(std::max(-1.0, 1.0 - config.embedding_inter_separation));
  if (config.num_identities > 1 && separation_angle <= 4.0 * half_intra) {
    throw Error("scene: inter-identity separation too small for the intra scatter");
  }
  std::vector<Embedding> bases;
  for (int k = 0; k < config.num_identities; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
      const Embedding v = random_unit(rng);
      placed = std::all_of(bases.begin(), bases.end(), [&](const Embedding& b) {
        return 1.0 - dot(v, b) >= config.embedding_inter_separation;
      });
      if (placed) bases.push_back(v);
    }
    if (!placed) throw Error("scene: cannot place identities with the requested separation");
  }

  std::vector<Embedding> bias(static_cast<std::size_t>(config.cameras));
  for (auto& b : bias) {
    b = random_unit(rng);
    for (auto& x : b) x *= config.camera_bias_std;
  }

  Scene scene;
  for (int c = 0; c < config.cameras; ++c) {
    scene.gt.emplace_back("cam" + std::to_string(c + 1));
    scene.embeddings.emplace_back();
  }
  const int min_len = std::min(config.min_track_length, config.frames);
  for (int k = 0; k < config.num_identities; ++k) {
    std::vector<int> visible;
    while (visible.empty()) {
      for (int c = 0; c < config.cameras; ++c) {
        if (config.cameras == 1 || uniform(rng, 0.0, 1.0) < 0.6) visible.push_back(c);
      }
    }
    for (int c : visible) {
      const int length = uniform_int(rng, min_len, config.frames);
      const int start = uniform_int(rng, 1, config.frames - length + 1);
      Tracklet t;
      t.id = k + 1;
      t.entries = walk(rng, config, start, length);

      EmbeddingTrack e;
      e.id = t.id;
      for (const auto& entry : t.entries) {
        const Embedding u = random_orthogonal(rng, bases[static_cast<std::size_t>(k)]);
        const double angle = uniform(rng, 0.0, half_intra);
        Embedding v{};
        for (std::size_t i = 0; i < kEmbeddingDim; ++i) {
          v[i] = std::cos(angle) * bases[static_cast<std::size_t>(k)][i] + std::sin(angle) * u[i] +
                 bias[static_cast<std::size_t>(c)][i];
        }
        e.frames.push_back(entry.frame);
        e.vectors.push_back(v);
      }
      scene.gt[static_cast<std::size_t>(c)].insert(std::move(t));
      scene.embeddings[static_cast<std::size_t>(c)].emplace(k + 1, std::move(e));
    }
  }
  return scene;
}

Fragmented fragment(const TrackSet& gt, const SceneConfig& config) {
  validate(config);
  Rng rng(config.seed ^ 0xf4a6c1d3b2e59807ULL);
  Fragmented out;
  out.tracks = TrackSet(gt.camera_id());
  int next_id = gt.max_id() + 1;

  for (const auto& [id, t] : gt.tracklets()) {
    int current_id = id;
    std::size_t begin = 0;
    const std::size_t n = t.size();
    while (true) {
      std::size_t end = n;
      bool cut = false;
      if (uniform(rng, 0.0, 1.0) < config.occlusion_rate) {
        const int gap = uniform_int(rng, config.occlusion_gap.min, config.occlusion_gap.max);
        const auto min_frag = static_cast<std::size_t>(config.min_fragment);
        // Head must keep min_fragment entries, tail too.
        if (n - begin >= 2 * min_frag + static_cast<std::size_t>(gap)) {
          const std::size_t lo = begin + min_frag - 1;
          const std::size_t hi = n - min_frag - static_cast<std::size_t>(gap);
          const auto head_end =
              static_cast<std::size_t>(uniform_int(rng, static_cast<int>(lo), static_cast<int>(hi)));
          const int tail_frame = t.entries[head_end].frame + gap;
          auto it = std::lower_bound(t.entries.begin() + static_cast<std::ptrdiff_t>(head_end),
                                     t.entries.end(), tail_frame,
                                     [](const TrackEntry& e, int f) { return e.frame < f; });
          const auto tail_start = static_cast<std::size_t>(it - t.entries.begin());
          if (tail_start < n && n - tail_start >= min_frag) {
            end = head_end + 1;
            Tracklet head{current_id, {t.entries.begin() + static_cast<std::ptrdiff_t>(begin),
                                       t.entries.begin() + static_cast<std::ptrdiff_t>(end)}};
            out.tracks.insert(std::move(head));
            out.origin[current_id] = id;
            const int tail_id = next_id++;
            out.cuts.push_back({id, current_id, tail_id, t.entries[head_end].frame,
                                t.entries[tail_start].frame});
            current_id = tail_id;
            begin = tail_start;
            cut = true;
          }
        }
      }
      if (!cut) {
        Tracklet rest{current_id, {t.entries.begin() + static_cast<std::ptrdiff_t>(begin),
                                   t.entries.end()}};
        out.tracks.insert(std::move(rest));
        out.origin[current_id] = id;
        break;
      }
    }
  }
  return out;
}

EmbeddingTable fragment_embeddings(const EmbeddingTable& gt_embeddings,
                                   const Fragmented& fragmented) {
  EmbeddingTable out;
  for (const auto& [frag_id, t] : fragmented.tracks.tracklets()) {
    const auto src = gt_embeddings.find(fragmented.origin.at(frag_id));
    if (src == gt_embeddings.end()) continue;
    EmbeddingTrack e;
    e.id = frag_id;
    for (const auto& entry : t.entries) {
      const auto& frames = src->second.frames;
      const auto it = std::lower_bound(frames.begin(), frames.end(), entry.frame);
      if (it == frames.end() || *it != entry.frame) continue;
      e.frames.push_back(entry.frame);
      e.vectors.push_back(src->second.vectors[static_cast<std::size_t>(it - frames.begin())]);
    }
    if (!e.empty()) out.emplace(frag_id, std::move(e));
  }
  return out;
}

}  // namespace mmtrack::synth
