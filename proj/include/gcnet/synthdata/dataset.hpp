// On-disk clips: <dir>/frame_0000.ppm ... plus <dir>/gt.txt in the track
// file format.
#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "gcnet/pipeline/track_io.hpp"
#include "gcnet/synthdata/scene.hpp"

namespace gcnet {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Seed of clip `index` in a dataset generated from `base`.
inline std::uint64_t sequence_seed(std::uint64_t base, std::size_t index) { return splitmix64(base * 1000003ull + index); }

inline std::string sequence_name(std::size_t index) {
  char b[32];
  std::snprintf(b, sizeof b, "seq%03zu", index);
  return b;
}

inline std::string frame_file_name(std::size_t frame) {
  char b[32];
  std::snprintf(b, sizeof b, "frame_%04zu.ppm", frame);
  return b;
}

inline void save_sequence(const std::filesystem::path& dir, const std::string& name, const sequence& seq) {
  std::filesystem::create_directories(dir);
  for (std::size_t t = 0; t < seq.frames.size(); ++t) write_ppm((dir / frame_file_name(t)).string(), seq.frames[t]);
  std::ofstream gt(dir / "gt.txt");
  if (!gt) throw std::runtime_error("cannot write " + (dir / "gt.txt").string());
  write_track_header(gt);
  write_ground_truth(gt, name, seq.gt);
}

inline std::vector<rgb_image> load_frames(const std::filesystem::path& dir) {
  std::vector<rgb_image> frames;
  for (std::size_t t = 0;; ++t) {
    const auto p = dir / frame_file_name(t);
    if (!std::filesystem::exists(p)) break;
    frames.push_back(read_ppm(p.string()));
  }
  if (frames.empty()) throw image_error("no frames (frame_0000.ppm ...) in " + dir.string());
  return frames;
}

/// Frames and ground truth; `objects` stays empty.
inline sequence load_sequence(const std::filesystem::path& dir, const std::string& name) {
  sequence s;
  s.frames = load_frames(dir);
  const auto rows = read_tracks((dir / "gt.txt").string());
  s.gt = rows_to_frames(rows, name, s.frames.size());
  return s;
}

}  // namespace gcnet
