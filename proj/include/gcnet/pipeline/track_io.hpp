// Line-oriented track file:
//
//   # gcnet-tracks 1
//   # video frame id cx cy h w confidence status
//   seq000 0 1 41.2500 63.0000 20.0000 18.5000 0.9120 track
//
// Boxes are pixels. Rows are ordered by (video, frame, id) as written.
#pragma once

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gcnet/annotations.hpp"
#include "gcnet/pipeline/tracker.hpp"

namespace gcnet {

inline constexpr const char* track_file_magic = "# gcnet-tracks 1";

struct track_row {
  std::string video;
  std::size_t frame = 0;
  int id = 0;
  bounding_box box;
  double confidence = 0.0;
  track_status status = track_status::track;
};

class track_file_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void write_track_header(std::ostream& os) {
  os << track_file_magic << "\n# video frame id cx cy h w confidence status\n";
}

inline void write_track_row(std::ostream& os, const track_row& r) {
  if (r.video.empty() || r.video.find_first_of(" \t\n") != std::string::npos)
    throw std::invalid_argument("track file: video name must be a non-empty token");
  char buf[256];
  std::snprintf(buf, sizeof buf, " %zu %d %.4f %.4f %.4f %.4f %.4f ", r.frame, r.id, r.box.cx, r.box.cy, r.box.h,
                r.box.w, r.confidence);
  os << r.video << buf << to_string(r.status) << '\n';
}

inline void write_video_tracks(std::ostream& os, const std::string& video, const std::vector<frame_result>& frames) {
  for (const auto& f : frames)
    for (const auto& r : f.records) write_track_row(os, {video, f.frame, r.id, r.box, r.confidence, r.status});
}

/// Ground truth in the same format: confidence 1, status track.
inline void write_ground_truth(std::ostream& os, const std::string& video, const std::vector<ground_truth_frame>& gt) {
  for (std::size_t f = 0; f < gt.size(); ++f)
    for (const auto& o : gt[f].objects) write_track_row(os, {video, f, o.id, o.box, 1.0, track_status::track});
}

inline std::vector<track_row> read_tracks(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != track_file_magic)
    throw track_file_error("track file: missing header '" + std::string(track_file_magic) + "'");
  std::vector<track_row> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    track_row r;
    std::string status, extra;
    if (!(ls >> r.video >> r.frame >> r.id >> r.box.cx >> r.box.cy >> r.box.h >> r.box.w >> r.confidence >> status) ||
        (ls >> extra))
      throw track_file_error("track file line " + std::to_string(lineno) + ": expected 9 fields");
    try {
      r.status = parse_track_status(status);
    } catch (const std::invalid_argument& e) {
      throw track_file_error("track file line " + std::to_string(lineno) + ": " + e.what());
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<track_row> read_tracks(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw track_file_error("cannot open " + path);
  return read_tracks(in);
}

/// Per-frame ground truth of one video from track rows (class 0).
inline std::vector<ground_truth_frame> rows_to_frames(const std::vector<track_row>& rows, const std::string& video,
                                                      std::size_t frame_count, bool tracks_only = true) {
  std::vector<ground_truth_frame> frames(frame_count);
  for (const auto& r : rows) {
    if (r.video != video || (tracks_only && r.status != track_status::track)) continue;
    if (r.frame >= frame_count) throw track_file_error("track file: frame " + std::to_string(r.frame) + " out of range");
    frames[r.frame].objects.push_back({r.id, 0, r.box});
  }
  return frames;
}

}  // namespace gcnet
