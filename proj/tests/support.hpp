#pragma once

// Fixtures and independent reference implementations used as test oracles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mmtrack/lap.hpp"
#include "mmtrack/linker.hpp"
#include "mmtrack/trackio.hpp"

namespace mmtrack::test {

// Straight-line tracklet: `n` consecutive frames from `first`, moving by
// (dx, dy) per frame.
inline Tracklet line_track(int id, int first, int n, double x0, double y0, double dx = 1.0,
                           double dy = 0.0, double w = 40.0, double h = 100.0) {
  Tracklet t;
  t.id = id;
  for (int i = 0; i < n; ++i) {
    t.entries.push_back({first + i, {x0 + dx * i, y0 + dy * i, w, h}, 1.0});
  }
  return t;
}

inline TrackSet track_set(std::vector<Tracklet> tracks, std::string camera = {}) {
  TrackSet s(std::move(camera));
  for (auto& t : tracks) s.insert(std::move(t));
  return s;
}

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("mmtrack_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Exhaustive search over all partial injections rows -> cols. Returns the
// maximum cardinality and the minimum total cost at that cardinality.
inline std::pair<std::size_t, double> brute_force_lap(const lap::CostMatrix& m) {
  std::size_t best_card = 0;
  double best_cost = 0.0;
  std::vector<char> used(m.cols(), 0);
  auto rec = [&](auto&& self, std::size_t r, std::size_t card, double cost) -> void {
    if (r == m.rows()) {
      if (card > best_card || (card == best_card && cost < best_cost)) {
        best_card = card;
        best_cost = cost;
      }
      return;
    }
    self(self, r + 1, card, cost);
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (used[c] || !m.feasible(r, c)) continue;
      used[c] = 1;
      self(self, r + 1, card + 1, cost + m.cost(r, c));
      used[c] = 0;
    }
  };
  rec(rec, 0, 0, 0.0);
  return {best_card, best_cost};
}

// Index-slicing window oracle: selects entry indices first, then normalizes.
inline linker::Window sliced_window(const Tracklet& t, linker::Side side, ImageSize image,
                                    int frame_ref) {
  const int n = static_cast<int>(t.size());
  std::vector<int> idx;
  if (side == linker::Side::predecessor) {
    const int start = std::max(0, n - linker::kWindowFrames);
    for (int i = start; i < n; ++i) idx.push_back(i);
    while (static_cast<int>(idx.size()) < linker::kWindowFrames) idx.insert(idx.begin(), start);
  } else {
    const int stop = std::min(n, linker::kWindowFrames);
    for (int i = 0; i < stop; ++i) idx.push_back(i);
    while (static_cast<int>(idx.size()) < linker::kWindowFrames) idx.push_back(stop - 1);
  }
  linker::Window w;
  for (int r = 0; r < linker::kWindowFrames; ++r) {
    const auto& e = t.entries[static_cast<std::size_t>(idx[static_cast<std::size_t>(r)])];
    w.at(r, 0) = static_cast<double>(e.frame - frame_ref) / 30.0;
    w.at(r, 1) = e.box.x / image.width;
    w.at(r, 2) = e.box.y / image.height;
    w.at(r, 3) = e.box.w / image.width;
    w.at(r, 4) = e.box.h / image.height;
  }
  return w;
}

// Direct-loop evaluation of the Linker on a single (a, b) pair. Train mode
// normalizes with the statistics of the two windows.
struct ReferenceOutput {
  std::vector<double> e_o;
  double s0 = 0.0;
  double s1 = 0.0;
};

inline ReferenceOutput reference_forward(const linker::BasicParams<double>& p,
                                         const linker::Window& a, const linker::Window& b,
                                         linker::Mode mode) {
  using Act = std::vector<std::vector<double>>;  // [window][channel * 150 + t * 5 + f]
  constexpr int T = linker::kWindowFrames;
  constexpr int F = linker::kWindowFeatures;
  auto branch = [&](const std::array<linker::ConvBlock<double>, 3>& blocks, bool temporal) {
    Act x(2, std::vector<double>(T * F));
    for (int i = 0; i < T * F; ++i) {
      x[0][static_cast<std::size_t>(i)] = a.data[static_cast<std::size_t>(i)];
      x[1][static_cast<std::size_t>(i)] = b.data[static_cast<std::size_t>(i)];
    }
    int in = 1;
    for (const auto& B : blocks) {
      const int out = static_cast<int>(B.weight.rows());
      const int kernel = static_cast<int>(B.weight.cols()) / in;
      const int half = kernel / 2;
      Act z(2, std::vector<double>(static_cast<std::size_t>(out * T * F), 0.0));
      for (int w = 0; w < 2; ++w) {
        for (int o = 0; o < out; ++o) {
          for (int t = 0; t < T; ++t) {
            for (int f = 0; f < F; ++f) {
              double acc = 0.0;
              for (int k = 0; k < kernel; ++k) {
                const int tt = temporal ? t + k - half : t;
                const int ff = temporal ? f : f + k - half;
                if (tt < 0 || tt >= T || ff < 0 || ff >= F) continue;
                for (int c = 0; c < in; ++c) {
                  acc += B.weight(o, k * in + c) *
                         x[static_cast<std::size_t>(w)][static_cast<std::size_t>(c * T * F + tt * F + ff)];
                }
              }
              z[static_cast<std::size_t>(w)][static_cast<std::size_t>(o * T * F + t * F + f)] = acc;
            }
          }
        }
      }
      Act y = z;
      for (int o = 0; o < out; ++o) {
        double mean = B.running_mean[o];
        double var = B.running_var[o];
        if (mode == linker::Mode::train) {
          double s = 0.0;
          for (int w = 0; w < 2; ++w) {
            for (int i = 0; i < T * F; ++i) s += z[static_cast<std::size_t>(w)][static_cast<std::size_t>(o * T * F + i)];
          }
          mean = s / (2 * T * F);
          double v = 0.0;
          for (int w = 0; w < 2; ++w) {
            for (int i = 0; i < T * F; ++i) {
              const double d = z[static_cast<std::size_t>(w)][static_cast<std::size_t>(o * T * F + i)] - mean;
              v += d * d;
            }
          }
          var = v / (2 * T * F);
        }
        for (int w = 0; w < 2; ++w) {
          for (int i = 0; i < T * F; ++i) {
            double& e = y[static_cast<std::size_t>(w)][static_cast<std::size_t>(o * T * F + i)];
            e = std::max(0.0, B.gamma[o] * (e - mean) / std::sqrt(var + 1e-5) + B.beta[o]);
          }
        }
      }
      x = std::move(y);
      in = out;
    }
    return std::pair{x, in};
  };
  const auto [tx, c3] = branch(p.temporal, true);
  const auto [sx, c3s] = branch(p.spatial, false);
  const int e = c3 * F;
  ReferenceOutput r;
  r.e_o.assign(static_cast<std::size_t>(2 * e), 0.0);
  for (int w = 0; w < 2; ++w) {
    for (int f = 0; f < F; ++f) {
      for (int c = 0; c < c3; ++c) {
        double acc = 0.0;
        for (int t = 0; t < T; ++t) {
          const auto i = static_cast<std::size_t>(c * T * F + t * F + f);
          acc += tx[static_cast<std::size_t>(w)][i] * sx[static_cast<std::size_t>(w)][i];
        }
        r.e_o[static_cast<std::size_t>(w * e + f * c3 + c)] = acc / T;
      }
    }
  }
  std::vector<double> hidden(static_cast<std::size_t>(p.fc1_weight.rows()));
  for (Eigen::Index h = 0; h < p.fc1_weight.rows(); ++h) {
    double acc = p.fc1_bias[h];
    for (Eigen::Index i = 0; i < p.fc1_weight.cols(); ++i) acc += p.fc1_weight(h, i) * r.e_o[static_cast<std::size_t>(i)];
    hidden[static_cast<std::size_t>(h)] = std::max(0.0, acc);
  }
  double s[2];
  for (int k = 0; k < 2; ++k) {
    double acc = p.fc2_bias[k];
    for (std::size_t h = 0; h < hidden.size(); ++h) acc += p.fc2_weight(k, static_cast<Eigen::Index>(h)) * hidden[h];
    s[k] = acc;
  }
  r.s0 = s[0];
  r.s1 = s[1];
  return r;
}

inline linker::Window random_window(std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  linker::Window w;
  for (auto& v : w.data) v = nd(rng);
  return w;
}

}  // namespace mmtrack::test
