#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmtrack/ict.hpp"
#include "mmtrack/trackio.hpp"

namespace mmtrack::metrics {

struct IdReport {
  double idf1 = 0.0;
  double idp = 0.0;
  double idr = 0.0;
  long idtp = 0;
  long idfp = 0;
  long idfn = 0;
};

struct SctReport {
  double mota = 0.0;
  IdReport id;
  long ids = 0;
  long frag = 0;
  long fp = 0;
  long fn = 0;
  long mt = 0;
  long ml = 0;
  long gt_boxes = 0;
  long matches = 0;
  long gt_tracks = 0;
};

// CLEAR-MOT with match carry-over plus trajectory-level identity measures.
SctReport evaluate(const TrackSet& gt, const TrackSet& pred, double iou_threshold = 0.5);

// Identity measures over the union of all cameras. `gt[i]` and `pred[i]`
// belong to the same camera; gt tracklet ids are global ids, pred ids are
// mapped through `pred_ids` keyed by the pred camera id. Throws Error when a
// pred tracklet is missing from the map.
IdReport evaluate_mtmc(std::span<const TrackSet> gt, std::span<const TrackSet> pred,
                       const ict::GlobalIdMap& pred_ids, double iou_threshold = 0.5);

// Throws Error when pred contains frames outside the gt frame range.
void check_frame_domain(const TrackSet& gt, const TrackSet& pred);

// (name, value) rows in a fixed order.
std::vector<std::pair<std::string, double>> rows(const SctReport& report);
std::vector<std::pair<std::string, double>> rows(const IdReport& report);

void write_table(const std::vector<std::pair<std::string, double>>& rows, std::ostream& out);
// `metric,value` lines preceded by a header.
void write_csv(const std::vector<std::pair<std::string, double>>& rows, std::ostream& out);

}  // namespace mmtrack::metrics
