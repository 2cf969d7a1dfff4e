#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mmtrack {

// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A malformed input line; the message carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct Box {
  double x = 0.0;  // left
  double y = 0.0;  // top
  double w = 0.0;
  double h = 0.0;

  double center_x() const { return x + 0.5 * w; }
  double center_y() const { return y + 0.5 * h; }
  double area() const { return w * h; }
  bool valid() const;

  friend bool operator==(const Box&, const Box&) = default;
};

double iou(const Box& a, const Box& b);
double center_distance(const Box& a, const Box& b);

struct ImageSize {
  int width = 1920;
  int height = 1080;
};

struct Detection {
  int frame = 1;
  int track_id = 1;
  Box box;
  double confidence = 1.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct TrackEntry {
  int frame = 1;
  Box box;
  double confidence = 1.0;

  friend bool operator==(const TrackEntry&, const TrackEntry&) = default;
};

// One identity inside one camera. Entries are kept in strictly increasing
// frame order.
struct Tracklet {
  int id = 0;
  std::vector<TrackEntry> entries;

  int start_frame() const { return entries.front().frame; }
  int end_frame() const { return entries.back().frame; }
  std::size_t size() const { return entries.size(); }

  // Throws Error when entries are empty, unsorted or carry invalid boxes.
  void validate() const;

  friend bool operator==(const Tracklet&, const Tracklet&) = default;
};

struct FrameRange {
  int first = 0;
  int last = 0;

  friend bool operator==(const FrameRange&, const FrameRange&) = default;
};

class TrackSet {
 public:
  TrackSet() = default;
  explicit TrackSet(std::string camera_id) : camera_id_(std::move(camera_id)) {}

  // Groups detections by id and sorts each group by frame. Throws on
  // duplicate (frame, id) pairs and on invalid boxes.
  static TrackSet from_detections(std::string camera_id,
                                  const std::vector<Detection>& detections);

  // Inserts a tracklet; throws if the id is taken or the tracklet is invalid.
  void insert(Tracklet tracklet);

  const std::string& camera_id() const { return camera_id_; }
  void set_camera_id(std::string id) { camera_id_ = std::move(id); }

  const std::map<int, Tracklet>& tracklets() const { return tracklets_; }
  const Tracklet& at(int id) const;
  bool contains(int id) const { return tracklets_.count(id) != 0; }
  bool empty() const { return tracklets_.empty(); }
  std::size_t size() const { return tracklets_.size(); }

  std::optional<FrameRange> frame_range() const { return range_; }
  std::size_t detection_count() const;
  int max_id() const;

  // All detections ordered by (frame, id).
  std::vector<Detection> detections() const;

  friend bool operator==(const TrackSet& a, const TrackSet& b) {
    return a.camera_id_ == b.camera_id_ && a.tracklets_ == b.tracklets_ &&
           a.range_ == b.range_;
  }

 private:
  std::string camera_id_;
  std::map<int, Tracklet> tracklets_;
  std::optional<FrameRange> range_;
};

// `frame,id,x,y,w,h[,conf[,-1,-1,-1]]`. Missing confidence reads as 1.
TrackSet parse_mot(std::istream& in, std::string camera_id = {});
TrackSet read_mot_file(const std::filesystem::path& path,
                       std::string camera_id = {});
void write_mot(const TrackSet& tracks, std::ostream& out);
void write_mot_file(const TrackSet& tracks, const std::filesystem::path& path);

inline constexpr std::size_t kEmbeddingDim = 128;
using Embedding = std::array<double, kEmbeddingDim>;

struct EmbeddingTrack {
  int id = 0;
  std::vector<int> frames;
  std::vector<Embedding> vectors;

  std::size_t size() const { return frames.size(); }
  bool empty() const { return frames.empty(); }

  friend bool operator==(const EmbeddingTrack&, const EmbeddingTrack&) = default;
};

using EmbeddingTable = std::map<int, EmbeddingTrack>;

// `frame,id,f0,...,f127`, one detection per line.
EmbeddingTable parse_embeddings(std::istream& in);
EmbeddingTable read_embeddings_file(const std::filesystem::path& path);
// Values are written with 6 significant digits, lines ordered by (frame, id).
void write_embeddings(const EmbeddingTable& table, std::ostream& out);
void write_embeddings_file(const EmbeddingTable& table,
                           const std::filesystem::path& path);

}  // namespace mmtrack
