#include "mmtrack/ict.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "mmtrack/lap.hpp"

namespace mmtrack::ict {

AssocConfig AssocConfig::for_profile(Profile profile) {
  AssocConfig c;
  c.alpha = profile == Profile::mmct ? 0.5 : 0.8;
  return c;
}

Profile parse_profile(const std::string& name) {
  if (name == "mmct") return Profile::mmct;
  if (name == "dhu") return Profile::dhu;
  throw Error("unknown profile '" + name + "' (expected mmct or dhu)");
}

Embedding mean_embedding(const EmbeddingTrack& track, int last_k) {
  if (track.empty()) throw Error("embedding track " + std::to_string(track.id) + " is empty");
  if (last_k < 1) throw Error("mean_embedding: last_k must be >= 1");
  const std::size_t n = std::min(track.size(), static_cast<std::size_t>(last_k));
  Embedding mean{};
  for (std::size_t i = track.size() - n; i < track.size(); ++i) {
    for (std::size_t k = 0; k < kEmbeddingDim; ++k) mean[k] += track.vectors[i][k];
  }
  for (auto& v : mean) v /= static_cast<double>(n);
  return mean;
}

namespace {

double norm_of(const TrackletEmbedding& e) {
  double s = 0.0;
  for (double v : e.vector) s += v * v;
  const double n = std::sqrt(s);
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw Error("zero-norm embedding for tracklet " + std::to_string(e.tracklet_id) +
                (e.camera_id.empty() ? "" : " in camera " + e.camera_id));
  }
  return n;
}

}  // namespace

DistanceMatrix distance_matrix(const std::vector<TrackletEmbedding>& q,
                               const std::vector<TrackletEmbedding>& f) {
  std::vector<double> qn(q.size());
  std::vector<double> fn(f.size());
  for (std::size_t i = 0; i < q.size(); ++i) qn[i] = norm_of(q[i]);
  for (std::size_t j = 0; j < f.size(); ++j) fn[j] = norm_of(f[j]);

  DistanceMatrix d{q.size(), f.size(), std::vector<double>(q.size() * f.size())};
  for (std::size_t i = 0; i < q.size(); ++i) {
    for (std::size_t j = 0; j < f.size(); ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < kEmbeddingDim; ++k) dot += q[i].vector[k] * f[j].vector[k];
      const double cos = std::clamp(dot / (qn[i] * fn[j]), -1.0, 1.0);
      d.values[i * d.cols + j] = 1.0 - cos;
    }
  }
  return d;
}

std::vector<std::pair<std::size_t, std::size_t>> associate(const DistanceMatrix& d,
                                                           const AssocConfig& config) {
  if (!(config.alpha > 0.0 && config.alpha < 2.0)) throw Error("alpha must lie in (0, 2)");
  lap::CostMatrix cost(d.rows, d.cols);
  for (std::size_t r = 0; r < d.rows; ++r) {
    for (std::size_t c = 0; c < d.cols; ++c) {
      if (d.at(r, c) > config.alpha) {
        cost.forbid(r, c);
      } else {
        cost.set(r, c, d.at(r, c));
      }
    }
  }
  return lap::solve(cost).pairs;
}

std::vector<TrackletEmbedding> tracklet_embeddings(const CameraInput& camera, int last_k) {
  std::vector<TrackletEmbedding> out;
  out.reserve(camera.tracks.size());
  for (const auto& [id, t] : camera.tracks.tracklets()) {
    const auto it = camera.embeddings.find(id);
    if (it == camera.embeddings.end() || it->second.empty()) {
      throw Error("missing embeddings for tracklet " + std::to_string(id) + " in camera " +
                  camera.tracks.camera_id());
    }
    out.push_back({id, camera.tracks.camera_id(), mean_embedding(it->second, last_k)});
  }
  return out;
}

GlobalIdMap assign_global_ids(const std::vector<CameraInput>& cameras, const AssocConfig& config) {
  if (cameras.empty()) throw Error("assign_global_ids: no cameras");
  for (std::size_t i = 0; i < cameras.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (cameras[i].tracks.camera_id() == cameras[j].tracks.camera_id()) {
        throw Error("duplicate camera id '" + cameras[i].tracks.camera_id() + "'");
      }
    }
  }

  GlobalIdMap map;
  // One representative per global id: the embedding of the first tracklet
  // that received it.
  std::vector<TrackletEmbedding> pool;
  std::vector<int> pool_ids;
  int next_id = 1;

  for (const auto& camera : cameras) {
    const auto current = tracklet_embeddings(camera, config.last_k);
    std::vector<int> assigned(current.size(), 0);
    if (!pool.empty() && !current.empty()) {
      for (const auto& [r, c] : associate(distance_matrix(pool, current), config)) {
        assigned[c] = pool_ids[r];
      }
    }
    for (std::size_t j = 0; j < current.size(); ++j) {
      if (assigned[j] == 0) {
        assigned[j] = next_id++;
        pool.push_back(current[j]);
        pool_ids.push_back(assigned[j]);
      }
      map.emplace(std::pair{current[j].camera_id, current[j].tracklet_id}, assigned[j]);
    }
  }
  return map;
}

void write_global_ids(const GlobalIdMap& map, std::ostream& out) {
  for (const auto& [key, gid] : map) out << key.first << ',' << key.second << ',' << gid << '\n';
}

void write_global_ids_file(const GlobalIdMap& map, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_global_ids(map, out);
  if (!out) throw Error("failed writing " + path.string());
}

namespace {

int to_int(const std::string& s, std::size_t line_no) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParseError(line_no, "cannot parse integer '" + s + "'");
  }
  return v;
}

}  // namespace

GlobalIdMap parse_global_ids(std::istream& in) {
  GlobalIdMap map;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    if (raw.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string> fields;
    std::stringstream ss(raw);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    if (fields.size() != 3) {
      throw ParseError(line_no, "expected 3 fields, got " + std::to_string(fields.size()));
    }
    const int tid = to_int(fields[1], line_no);
    const int gid = to_int(fields[2], line_no);
    if (tid < 1 || gid < 1) throw ParseError(line_no, "ids must be >= 1");
    if (!map.emplace(std::pair{fields[0], tid}, gid).second) {
      throw ParseError(line_no, "duplicate key (" + fields[0] + ", " + fields[1] + ")");
    }
  }
  return map;
}

GlobalIdMap read_global_ids_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return parse_global_ids(in);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

}  // namespace mmtrack::ict
