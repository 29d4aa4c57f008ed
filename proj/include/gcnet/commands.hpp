// Implementations behind the gcnet command-line tool.
#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "gcnet/config_file.hpp"
#include "gcnet/gradient_suite.hpp"
#include "gcnet/metrics/report.hpp"
#include "gcnet/pipeline/track_io.hpp"
#include "gcnet/synthdata/dataset.hpp"
#include "gcnet/train/evaluate.hpp"
#include "gcnet/train/trainer.hpp"

namespace gcnet {

namespace fs = std::filesystem;

/// Bad input or usage: exit code 1.
class usage_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) h = (h ^ c) * 0x100000001b3ull;
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char b[32];
  std::snprintf(b, sizeof b, "%016llx", static_cast<unsigned long long>(v));
  return b;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw usage_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes through a temporary file so readers never see partial output.
inline void write_file_atomic(const fs::path& p, const std::string& bytes) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw usage_error("cannot write " + tmp.string());
    out.write(bytes.data(), std::streamsize(bytes.size()));
  }
  fs::rename(tmp, p);
}

/// Creates `dir`; refuses a non-empty one unless `force`.
inline void prepare_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw usage_error(dir.string() + " exists and is not a directory");
  if (fs::exists(dir) && !fs::is_empty(dir) && !force)
    throw usage_error("output directory " + dir.string() + " is not empty (use --force to overwrite)");
  fs::create_directories(dir);
}

/// Sequence directories under `root` (sorted), or `root` itself when it holds
/// frames directly.
inline std::vector<fs::path> sequence_dirs(const fs::path& root) {
  if (!fs::is_directory(root)) throw usage_error("not a directory: " + root.string());
  if (fs::exists(root / frame_file_name(0))) return {root};
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / frame_file_name(0))) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw usage_error("no sequences (directories with " + frame_file_name(0) + ") under " + root.string());
  return out;
}

inline std::vector<sequence> load_dataset(const fs::path& root) {
  std::vector<sequence> out;
  for (const auto& d : sequence_dirs(root)) out.push_back(load_sequence(d, d.filename().string()));
  return out;
}

/// Runs f(i) for i in [0, n) on up to `threads` threads; results keep index
/// order, so output does not depend on the thread count.
template <class F>
auto parallel_map(std::size_t n, std::size_t threads, F f) -> std::vector<decltype(f(std::size_t{0}))> {
  using R = decltype(f(std::size_t{0}));
  std::vector<R> out(n);
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(i);
    return out;
  }
  std::vector<std::future<void>> pending;
  std::atomic<std::size_t> next{0};
  for (std::size_t t = 0; t < std::min(threads, n); ++t)
    pending.push_back(std::async(std::launch::async, [&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) out[i] = f(i);
    }));
  for (auto& p : pending) p.get();
  return out;
}

// ---------------------------------------------------------------------------

struct gen_options {
  fs::path out;
  std::size_t count = 10;
  std::size_t first_index = 0;
  bool force = false;
  std::size_t threads = 1;
};

/// Sequence i of a dataset is generated from sequence_seed(scene.seed, i), so
/// a held-out split is just a different index range.
inline void cmd_gen(const run_config& cfg, const gen_options& opt, std::ostream& log) {
  cfg.validate();
  prepare_output_dir(opt.out, opt.force);
  save_run_config((opt.out / "config.toml").string(), cfg);
  parallel_map(opt.count, opt.threads, [&](std::size_t k) {
    const std::size_t i = opt.first_index + k;
    scene_config sc = cfg.scene;
    sc.seed = sequence_seed(cfg.scene.seed, i);
    save_sequence(opt.out / sequence_name(i), sequence_name(i), generate_sequence(sc));
    return 0;
  });
  log << "wrote " << opt.count << " sequences to " << opt.out.string() << '\n';
}

// ---------------------------------------------------------------------------

struct train_options {
  fs::path data;
  fs::path out;
  fs::path init;  // detect-pretrain checkpoint for joint-finetune
  bool resume = false;
  bool force = false;
  std::size_t log_every = 50;
  // Called after every step with the step just taken (0-based).
  std::function<void(std::size_t, const loss_breakdown&, gcnet_model<float>&)> on_step;
};

inline const char* loss_log_header = "step,stage,d_cla,d_reg,t_cla,t_reg,total\n";

inline std::string loss_log_line(std::size_t step, train_stage stage, const loss_breakdown& l) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%s,%.9g,%.9g,%.9g,%.9g,%.9g\n", step, to_string(stage).c_str(), l.d_cla, l.d_reg,
                l.t_cla, l.t_reg, l.total);
  return buf;
}

inline void save_training_state(const trainer<float>& tr, const run_config& cfg, const fs::path& out) {
  checkpoint ck;
  tr.store(ck);
  ck.set_meta("scene.seed", std::to_string(cfg.scene.seed));
  const std::string bytes = ck.serialize();
  write_file_atomic(out / "checkpoint.bin", bytes);
  std::ostringstream manifest;
  manifest << "stage = " << to_string(tr.stage()) << "\nstep = " << tr.step() << "\nseed = " << cfg.train.seed
           << "\ncheckpoint_fnv1a64 = " << hex64(fnv1a64(bytes)) << '\n';
  write_file_atomic(out / "manifest.txt", manifest.str());
}

/// Returns the final loss breakdown.
inline loss_breakdown cmd_train(run_config cfg, const train_options& opt, std::ostream& log) {
  cfg.validate();
  const fs::path ck_path = opt.out / "checkpoint.bin";
  if (opt.resume) {
    if (!fs::exists(ck_path)) throw usage_error("--resume: no checkpoint at " + ck_path.string());
  } else {
    prepare_output_dir(opt.out, opt.force);
  }
  const auto data = load_dataset(opt.data);
  for (const auto& s : data)
    if (s.frames.front().height != cfg.network.input_h || s.frames.front().width != cfg.network.input_w)
      throw usage_error("training frames must be " + std::to_string(cfg.network.input_h) + "x" +
                        std::to_string(cfg.network.input_w));

  gcnet_model<float> model{cfg.network, cfg.train.seed};
  trainer<float> tr(model, cfg.train, cfg.stage, data);
  if (opt.resume) {
    const auto ck = checkpoint::load(ck_path.string());
    tr.resume(ck);
    log << "resuming " << to_string(cfg.stage) << " at step " << tr.step() << '\n';
  } else if (cfg.stage == train_stage::joint_finetune) {
    if (opt.init.empty()) throw usage_error("joint-finetune needs --init with a detect-pretrain checkpoint");
    const auto ck = checkpoint::load(opt.init.string());
    if (!ck.has_meta("stage") || ck.meta("stage") != to_string(train_stage::detect_pretrain))
      throw usage_error("joint-finetune must start from a detect-pretrain checkpoint");
    if (std::stoul(ck.meta("step")) < std::stoul(ck.meta("train.pretrain_steps")))
      throw usage_error("detect-pretrain checkpoint is unfinished (step " + ck.meta("step") + " of " +
                        ck.meta("train.pretrain_steps") + ")");
    restore_model(model, ck);
  } else if (!opt.init.empty()) {
    throw usage_error("--init is only used by joint-finetune");
  }
  save_run_config((opt.out / "config.toml").string(), cfg);

  // On resume, rows logged after the last checkpoint are dropped and redone.
  std::string kept = loss_log_header;
  if (opt.resume && fs::exists(opt.out / "loss.csv")) {
    std::istringstream old(read_file(opt.out / "loss.csv"));
    std::string line;
    std::getline(old, line);
    while (std::getline(old, line))
      if (!line.empty() && std::stoul(line.substr(0, line.find(','))) < tr.step()) kept += line + '\n';
  }
  std::ofstream loss_log(opt.out / "loss.csv", std::ios::trunc);
  loss_log << kept;
  loss_breakdown last;
  while (!tr.done()) {
    const std::size_t step = tr.step();
    last = tr.train_step();
    loss_log << loss_log_line(step, cfg.stage, last);
    if (opt.on_step) opt.on_step(step, last, model);
    if (opt.log_every && (step % opt.log_every == 0 || tr.done()))
      log << to_string(cfg.stage) << " step " << step << ' ' << describe(last) << " total=" << last.total << std::endl;
    if (cfg.train.checkpoint_every && tr.step() % cfg.train.checkpoint_every == 0 && !tr.done()) {
      loss_log.flush();
      save_training_state(tr, cfg, opt.out);
    }
  }
  loss_log.flush();
  save_training_state(tr, cfg, opt.out);
  return last;
}

// ---------------------------------------------------------------------------

struct track_options {
  fs::path checkpoint;
  fs::path frames;
  fs::path out;
  std::size_t threads = 1;
};

inline void cmd_track(const run_config& cfg, const track_options& opt, std::ostream& log) {
  const auto ck = checkpoint::load(opt.checkpoint.string());
  const auto dirs = sequence_dirs(opt.frames);
  auto results = parallel_map(dirs.size(), opt.threads, [&](std::size_t i) {
    auto model = load_model<float>(ck);
    sequence s;
    s.frames = load_frames(dirs[i]);
    return track_sequence(model, s, cfg.pipeline);
  });
  std::ostringstream os;
  write_track_header(os);
  for (std::size_t i = 0; i < dirs.size(); ++i) write_video_tracks(os, dirs[i].filename().string(), results[i].frames);
  if (opt.out.has_parent_path()) fs::create_directories(opt.out.parent_path());
  write_file_atomic(opt.out, os.str());
  log << "tracked " << dirs.size() << " sequences into " << opt.out.string() << '\n';
}

// ---------------------------------------------------------------------------

struct eval_options {
  fs::path predictions;  // track file
  fs::path ground_truth;  // dataset root or sequence directory
  fs::path out;
  fs::path checkpoint;  // optional: adds detection AP and the PR curve
  bool force = false;
  std::size_t threads = 1;
};

inline metrics_report cmd_eval(const run_config& cfg, const eval_options& opt, std::ostream& log) {
  const auto rows = read_tracks(opt.predictions.string());
  const auto dirs = sequence_dirs(opt.ground_truth);
  prepare_output_dir(opt.out, opt.force);
  save_run_config((opt.out / "config.toml").string(), cfg);
  mot_counts counts;
  std::vector<sequence> clips;
  for (const auto& d : dirs) {
    const std::string name = d.filename().string();
    const auto gt_rows = read_tracks((d / "gt.txt").string());
    std::size_t frames = 0;
    while (fs::exists(d / frame_file_name(frames))) ++frames;
    const auto gt = rows_to_frames(gt_rows, name, frames);
    counts += clear_mot(rows_to_frames(rows, name, frames), gt, cfg.iou_threshold);
    if (!opt.checkpoint.empty()) clips.push_back({load_frames(d), gt, {}});
  }
  metrics_report r;
  add_tracking(r, counts, cfg.iou_threshold);
  if (!opt.checkpoint.empty()) {
    const auto ck = checkpoint::load(opt.checkpoint.string());
    auto per_clip = parallel_map(clips.size(), opt.threads, [&](std::size_t i) {
      auto model = load_model<float>(ck);
      return detect_sequence(model, clips[i], cfg.peak_threshold);
    });
    detection_set preds;
    std::vector<ground_truth_frame> gt;
    for (std::size_t i = 0; i < clips.size(); ++i) {
      preds.insert(preds.end(), per_clip[i].begin(), per_clip[i].end());
      gt.insert(gt.end(), clips[i].gt.begin(), clips[i].gt.end());
    }
    const auto ap = detection_ap(preds, gt, cfg.iou_threshold);
    add_detection(r, ap, cfg.iou_threshold);
    std::ostringstream csv;
    write_pr_csv(csv, ap.curve);
    write_file_atomic(opt.out / "pr_curve.csv", csv.str());
  }
  std::ostringstream kv, js;
  write_report_kv(kv, r);
  write_report_json(js, r);
  write_file_atomic(opt.out / "metrics.txt", kv.str());
  write_file_atomic(opt.out / "metrics.json", js.str());
  log << kv.str();
  return r;
}

// ---------------------------------------------------------------------------

/// Fixed color per track id.
inline std::array<std::uint8_t, 3> id_color(int id) {
  const std::uint64_t h = splitmix64(std::uint64_t(id));
  const double hue = double(h % 360), s = 0.85, v = 0.95;
  const double c = v * s, x = c * (1 - std::abs(std::fmod(hue / 60.0, 2.0) - 1)), m = v - c;
  double r = 0, g = 0, b = 0;
  switch (int(hue / 60)) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  return {quantize(r + m), quantize(g + m), quantize(b + m)};
}

/// Two-pixel outline of a box, clipped to the image.
inline void draw_box(rgb_image& im, const bounding_box& b, std::array<std::uint8_t, 3> color) {
  const long l = std::lround(b.left()), r = std::lround(b.right()) - 1, t = std::lround(b.top()),
             btm = std::lround(b.bottom()) - 1;
  auto put = [&](long y, long x) {
    if (y < 0 || x < 0 || y >= long(im.height) || x >= long(im.width)) return;
    for (std::size_t ch = 0; ch < 3; ++ch) im.at(std::size_t(y), std::size_t(x), ch) = color[ch];
  };
  for (long d = 0; d < 2; ++d) {
    for (long x = l; x <= r; ++x) put(t + d, x), put(btm - d, x);
    for (long y = t; y <= btm; ++y) put(y, l + d), put(y, r - d);
  }
}

struct render_options {
  fs::path frames;  // one sequence directory
  fs::path tracks;
  fs::path out;
  std::string video;  // defaults to the frames directory name
  bool include_candidates = false;
  bool force = false;
};

inline void cmd_render(const render_options& opt, std::ostream& log) {
  const auto frames = load_frames(opt.frames);
  const auto rows = read_tracks(opt.tracks.string());
  const std::string video = opt.video.empty() ? fs::path(opt.frames).filename().string() : opt.video;
  prepare_output_dir(opt.out, opt.force);
  std::vector<rgb_image> out = frames;
  std::size_t drawn = 0;
  for (const auto& r : rows) {
    if (r.video != video) continue;
    if (r.frame >= frames.size())
      throw track_file_error("track file: frame " + std::to_string(r.frame) + " beyond the " +
                             std::to_string(frames.size()) + " frames of " + video);
    if (r.status == track_status::deleted || (r.status == track_status::candidate && !opt.include_candidates)) continue;
    draw_box(out[r.frame], r.box, id_color(r.id));
    ++drawn;
  }
  for (std::size_t t = 0; t < out.size(); ++t) write_ppm((opt.out / frame_file_name(t)).string(), out[t]);
  log << "rendered " << drawn << " boxes on " << out.size() << " frames into " << opt.out.string() << '\n';
}

// ---------------------------------------------------------------------------

/// Prints one line per check; true when all pass.
inline bool cmd_gradcheck(std::uint64_t seed, std::ostream& log) {
  bool ok = true;
  double total = 0;
  for (const auto& r : run_gradient_suite(seed)) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-20s %s  max_rel=%.3e  tol=%.0e  checked=%zu  %.2fs", r.name.c_str(),
                  r.report.passed ? "PASS" : "FAIL", r.report.max_relative_error, r.tolerance, r.report.checked,
                  r.seconds);
    log << buf << '\n';
    ok = ok && r.report.passed;
    total += r.seconds;
  }
  log << (ok ? "all gradient checks passed" : "gradient checks FAILED") << " in " << total << "s\n";
  return ok;
}

}  // namespace gcnet
