#include <algorithm>

#include "mmtrack/linker.hpp"

namespace mmtrack::linker {

namespace {

// Index range [first, last) of the entries a window keeps.
std::pair<std::size_t, std::size_t> kept_range(const Tracklet& t, Side side) {
  const std::size_t n = t.size();
  const std::size_t keep = std::min<std::size_t>(n, kWindowFrames);
  return side == Side::predecessor ? std::pair{n - keep, n} : std::pair{std::size_t{0}, keep};
}

}  // namespace

Window make_window(const Tracklet& tracklet, Side side, ImageSize image, int frame_ref,
                   std::pair<double, double> shift) {
  if (tracklet.entries.empty()) throw Error("make_window: empty tracklet");
  if (image.width <= 0 || image.height <= 0) throw Error("make_window: invalid image size");

  const auto [first, last] = kept_range(tracklet, side);
  const std::size_t kept = last - first;
  const std::size_t pad = kWindowFrames - kept;
  const double iw = 1.0 / image.width;
  const double ih = 1.0 / image.height;

  Window w;
  for (int row = 0; row < kWindowFrames; ++row) {
    std::size_t idx;
    if (side == Side::predecessor) {
      idx = row < static_cast<int>(pad) ? first : first + (row - pad);
    } else {
      idx = row < static_cast<int>(kept) ? first + row : last - 1;
    }
    const auto& e = tracklet.entries[idx];
    w.at(row, 0) = static_cast<double>(e.frame - frame_ref) / kWindowFrames;
    w.at(row, 1) = (e.box.x - shift.first) * iw;
    w.at(row, 2) = (e.box.y - shift.second) * ih;
    w.at(row, 3) = e.box.w * iw;
    w.at(row, 4) = e.box.h * ih;
  }
  return w;
}

Window make_window(const Tracklet& tracklet, Side side, ImageSize image) {
  if (tracklet.entries.empty()) throw Error("make_window: empty tracklet");
  const auto first = kept_range(tracklet, side).first;
  return make_window(tracklet, side, image, tracklet.entries[first].frame);
}

std::pair<Window, Window> make_pair_windows(const Tracklet& pred, const Tracklet& succ,
                                            ImageSize image) {
  if (pred.entries.empty() || succ.entries.empty()) throw Error("make_window: empty tracklet");
  const int ref = pred.entries[kept_range(pred, Side::predecessor).first].frame;
  const Box& last = pred.entries.back().box;
  const std::pair shift{last.x - 0.5 * image.width, last.y - 0.5 * image.height};
  return {make_window(pred, Side::predecessor, image, ref, shift),
          make_window(succ, Side::successor, image, ref, shift)};
}

}  // namespace mmtrack::linker
