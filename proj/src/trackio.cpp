#include "mmtrack/trackio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <string_view>

namespace mmtrack {

ParseError::ParseError(std::size_t line, const std::string& what)
    : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

bool Box::valid() const {
  return std::isfinite(x) && std::isfinite(y) && std::isfinite(w) &&
         std::isfinite(h) && w > 0.0 && h > 0.0;
}

double iou(const Box& a, const Box& b) {
  const double ix = std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x);
  const double iy = std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return std::min(1.0, inter / (a.area() + b.area() - inter));
}

double center_distance(const Box& a, const Box& b) {
  return std::hypot(a.center_x() - b.center_x(), a.center_y() - b.center_y());
}

void Tracklet::validate() const {
  if (entries.empty()) {
    throw Error("tracklet " + std::to_string(id) + " has no entries");
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!entries[i].box.valid()) {
      throw Error("tracklet " + std::to_string(id) + " has an invalid box at frame " +
                  std::to_string(entries[i].frame));
    }
    if (i > 0 && entries[i].frame <= entries[i - 1].frame) {
      throw Error("tracklet " + std::to_string(id) +
                  " frames are not strictly increasing at frame " +
                  std::to_string(entries[i].frame));
    }
  }
}

TrackSet TrackSet::from_detections(std::string camera_id,
                                   const std::vector<Detection>& detections) {
  std::map<int, Tracklet> groups;
  for (const auto& d : detections) {
    auto& t = groups[d.track_id];
    t.id = d.track_id;
    t.entries.push_back({d.frame, d.box, d.confidence});
  }
  TrackSet set(std::move(camera_id));
  for (auto& [id, t] : groups) {
    std::stable_sort(t.entries.begin(), t.entries.end(),
                     [](const TrackEntry& a, const TrackEntry& b) { return a.frame < b.frame; });
    for (std::size_t i = 1; i < t.entries.size(); ++i) {
      if (t.entries[i].frame == t.entries[i - 1].frame) {
        throw Error("duplicate detection for id " + std::to_string(id) + " at frame " +
                    std::to_string(t.entries[i].frame));
      }
    }
    set.insert(std::move(t));
  }
  return set;
}

void TrackSet::insert(Tracklet tracklet) {
  if (tracklet.id < 1) throw Error("tracklet ids must be positive");
  tracklet.validate();
  if (tracklets_.count(tracklet.id)) {
    throw Error("duplicate tracklet id " + std::to_string(tracklet.id));
  }
  FrameRange r{tracklet.start_frame(), tracklet.end_frame()};
  if (range_) {
    r.first = std::min(r.first, range_->first);
    r.last = std::max(r.last, range_->last);
  }
  range_ = r;
  const int id = tracklet.id;
  tracklets_.emplace(id, std::move(tracklet));
}

const Tracklet& TrackSet::at(int id) const {
  auto it = tracklets_.find(id);
  if (it == tracklets_.end()) throw Error("unknown tracklet id " + std::to_string(id));
  return it->second;
}

std::size_t TrackSet::detection_count() const {
  std::size_t n = 0;
  for (const auto& [id, t] : tracklets_) n += t.size();
  return n;
}

int TrackSet::max_id() const { return tracklets_.empty() ? 0 : tracklets_.rbegin()->first; }

std::vector<Detection> TrackSet::detections() const {
  std::vector<Detection> out;
  out.reserve(detection_count());
  for (const auto& [id, t] : tracklets_) {
    for (const auto& e : t.entries) out.push_back({e.frame, id, e.box, e.confidence});
  }
  std::sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
    return a.frame != b.frame ? a.frame < b.frame : a.track_id < b.track_id;
  });
  return out;
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    auto field = line.substr(start, comma == std::string_view::npos ? line.npos : comma - start);
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t')) field.remove_suffix(1);
    fields.push_back(field);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

std::string_view strip_line(std::string_view line) {
  while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) {
    line.remove_suffix(1);
  }
  return line;
}

bool is_blank(std::string_view line) {
  return line.find_first_not_of(" \t\r") == std::string_view::npos;
}

double parse_real(std::string_view field, std::size_t line_no, const char* what) {
  double value = 0.0;
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw ParseError(line_no, std::string("cannot parse ") + what + " '" + std::string(field) + "'");
  }
  if (!std::isfinite(value)) {
    throw ParseError(line_no, std::string("non-finite ") + what);
  }
  return value;
}

int parse_int(std::string_view field, std::size_t line_no, const char* what) {
  const double v = parse_real(field, line_no, what);
  if (v != std::floor(v) || std::abs(v) > 2e9) {
    throw ParseError(line_no, std::string(what) + " is not an integer");
  }
  return static_cast<int>(v);
}

void put_real(std::string& out, double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

}  // namespace

TrackSet parse_mot(std::istream& in, std::string camera_id) {
  std::vector<Detection> detections;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (is_blank(raw)) continue;
    const auto fields = split_fields(strip_line(raw));
    if (fields.size() < 6 || fields.size() > 10) {
      throw ParseError(line_no, "expected 6 to 10 fields, got " + std::to_string(fields.size()));
    }
    Detection d;
    d.frame = parse_int(fields[0], line_no, "frame");
    d.track_id = parse_int(fields[1], line_no, "id");
    d.box = {parse_real(fields[2], line_no, "x"), parse_real(fields[3], line_no, "y"),
             parse_real(fields[4], line_no, "w"), parse_real(fields[5], line_no, "h")};
    d.confidence = fields.size() >= 7 ? parse_real(fields[6], line_no, "confidence") : 1.0;
    if (d.frame < 1) throw ParseError(line_no, "frame must be >= 1");
    if (d.track_id < 1) throw ParseError(line_no, "id must be >= 1");
    if (!(d.box.w > 0.0) || !(d.box.h > 0.0)) {
      throw ParseError(line_no, "box width and height must be positive");
    }
    detections.push_back(d);
  }
  return TrackSet::from_detections(std::move(camera_id), detections);
}

TrackSet read_mot_file(const std::filesystem::path& path, std::string camera_id) {
  auto in = open_input(path);
  try {
    return parse_mot(in, std::move(camera_id));
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void write_mot(const TrackSet& tracks, std::ostream& out) {
  std::string line;
  for (const auto& d : tracks.detections()) {
    line.clear();
    line += std::to_string(d.frame);
    line += ',';
    line += std::to_string(d.track_id);
    for (double v : {d.box.x, d.box.y, d.box.w, d.box.h, d.confidence}) {
      line += ',';
      put_real(line, v);
    }
    line += ",-1,-1,-1\n";
    out << line;
  }
}

void write_mot_file(const TrackSet& tracks, const std::filesystem::path& path) {
  auto out = open_output(path);
  write_mot(tracks, out);
  if (!out) throw Error("failed writing " + path.string());
}

EmbeddingTable parse_embeddings(std::istream& in) {
  struct Row {
    int frame;
    Embedding v;
  };
  std::map<int, std::vector<Row>> rows;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (is_blank(raw)) continue;
    const auto fields = split_fields(strip_line(raw));
    if (fields.size() != kEmbeddingDim + 2) {
      throw ParseError(line_no, "expected " + std::to_string(kEmbeddingDim + 2) +
                                    " fields, got " + std::to_string(fields.size()));
    }
    Row row{};
    row.frame = parse_int(fields[0], line_no, "frame");
    const int id = parse_int(fields[1], line_no, "id");
    if (row.frame < 1) throw ParseError(line_no, "frame must be >= 1");
    if (id < 1) throw ParseError(line_no, "id must be >= 1");
    for (std::size_t k = 0; k < kEmbeddingDim; ++k) {
      row.v[k] = parse_real(fields[k + 2], line_no, "feature value");
    }
    rows[id].push_back(row);
  }
  EmbeddingTable table;
  for (auto& [id, list] : rows) {
    std::stable_sort(list.begin(), list.end(),
                     [](const Row& a, const Row& b) { return a.frame < b.frame; });
    EmbeddingTrack track;
    track.id = id;
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (i > 0 && list[i].frame == list[i - 1].frame) {
        throw Error("duplicate embedding for id " + std::to_string(id) + " at frame " +
                    std::to_string(list[i].frame));
      }
      track.frames.push_back(list[i].frame);
      track.vectors.push_back(list[i].v);
    }
    table.emplace(id, std::move(track));
  }
  return table;
}

EmbeddingTable read_embeddings_file(const std::filesystem::path& path) {
  auto in = open_input(path);
  try {
    return parse_embeddings(in);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void write_embeddings(const EmbeddingTable& table, std::ostream& out) {
  struct Ref {
    int frame;
    int id;
    const Embedding* v;
  };
  std::vector<Ref> refs;
  for (const auto& [id, track] : table) {
    for (std::size_t i = 0; i < track.size(); ++i) refs.push_back({track.frames[i], id, &track.vectors[i]});
  }
  std::sort(refs.begin(), refs.end(), [](const Ref& a, const Ref& b) {
    return a.frame != b.frame ? a.frame < b.frame : a.id < b.id;
  });
  std::string line;
  char buf[32];
  for (const auto& r : refs) {
    line.clear();
    line += std::to_string(r.frame);
    line += ',';
    line += std::to_string(r.id);
    for (double v : *r.v) {
      const int n = std::snprintf(buf, sizeof(buf), ",%.6g", v);
      line.append(buf, static_cast<std::size_t>(n));
    }
    line += '\n';
    out << line;
  }
}

void write_embeddings_file(const EmbeddingTable& table, const std::filesystem::path& path) {
  auto out = open_output(path);
  write_embeddings(table, out);
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace mmtrack
