#include <gtest/gtest.h>

#include <unistd.h>

#include <cstdlib>
#include <set>

#include "gcnet/commands.hpp"

using namespace gcnet;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("gcnet_cli_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p.parent_path());
  return p;
}

run_config tiny() {
  run_config c;
  c.network.input_h = c.scene.height = 32;
  c.network.input_w = c.scene.width = 64;
  c.network.channels = 8;
  c.network.corr_channels = 6;
  c.network.confidence_hidden = 5;
  c.scene.min_size = 6;
  c.scene.max_size = 14;
  c.scene.max_objects = 3;
  c.scene.frames = 6;
  c.train.batch_size = 2;
  c.train.pretrain_steps = 4;
  c.train.finetune_steps = 4;
  c.train.checkpoint_every = 2;
  c.train_sequences = 2;
  c.test_sequences = 1;
  return c;
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file(e.path());
  return out;
}

std::ostringstream sink;

fs::path make_data(const run_config& c, const std::string& name, std::size_t count = 2) {
  const auto dir = scratch(name);
  gen_options g;
  g.out = dir;
  g.count = count;
  cmd_gen(c, g, sink);
  return dir;
}

}  // namespace

TEST(Gen, WritesSequencesAndConfig) {
  auto c = tiny();
  c.scene.frames = 40;
  const auto dir = make_data(c, "gen_default", 1);
  EXPECT_TRUE(fs::exists(dir / "config.toml"));
  EXPECT_TRUE(fs::exists(dir / "seq000" / "gt.txt"));
  EXPECT_TRUE(fs::exists(dir / "seq000" / frame_file_name(39)));
  EXPECT_FALSE(fs::exists(dir / "seq000" / frame_file_name(40)));
  EXPECT_EQ(load_run_config((dir / "config.toml").string()).to_sections(), c.to_sections());
}

TEST(Gen, SameSeedIsByteIdenticalAcrossThreadCounts) {
  const auto c = tiny();
  const auto a = make_data(c, "gen_a", 3);
  const auto b = scratch("gen_b");
  gen_options g;
  g.out = b;
  g.count = 3;
  g.threads = 3;
  cmd_gen(c, g, sink);
  EXPECT_EQ(tree(a), tree(b));
  auto other = c;
  other.scene.seed = 2;
  const auto d = make_data(other, "gen_d", 3);
  EXPECT_NE(tree(a)["seq000/gt.txt"], tree(d)["seq000/gt.txt"]);
}

TEST(Gen, RejectsBadDimensionsAndNonEmptyDirs) {
  auto c = tiny();
  c.scene.height = c.network.input_h = 30;
  gen_options g;
  g.out = scratch("gen_bad");
  try {
    cmd_gen(c, g, sink);
    FAIL();
  } catch (const config_error& e) {
    EXPECT_NE(std::string(e.what()).find("multiples of 8"), std::string::npos) << e.what();
  }
  const auto dir = make_data(tiny(), "gen_twice", 1);
  g.out = dir;
  EXPECT_THROW(cmd_gen(tiny(), g, sink), usage_error);
  g.force = true;
  g.count = 1;
  EXPECT_NO_THROW(cmd_gen(tiny(), g, sink));
}

TEST(Train, LogsEveryStepAndResumesWhereItStopped) {
  const auto c = tiny();
  const auto data = make_data(c, "train_data");
  train_options t;
  t.data = data;
  t.out = scratch("train_full");
  t.log_every = 0;
  cmd_train(c, t, sink);
  const auto full = tree(t.out);
  EXPECT_TRUE(full.count("config.toml") && full.count("checkpoint.bin") && full.count("manifest.txt"));
  std::istringstream csv(full.at("loss.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line + "\n", loss_log_header);
  std::size_t rows = 0;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 4u);
  EXPECT_NE(full.at("manifest.txt").find(hex64(fnv1a64(full.at("checkpoint.bin")))), std::string::npos);

  // Stop after two steps, then resume with the full budget.
  auto half = c;
  half.train.pretrain_steps = 2;
  t.out = scratch("train_split");
  cmd_train(half, t, sink);
  EXPECT_NE(read_file(t.out / "manifest.txt").find("step = 2"), std::string::npos);
  t.resume = true;
  cmd_train(c, t, sink);
  EXPECT_EQ(read_file(t.out / "checkpoint.bin"), full.at("checkpoint.bin"));
  EXPECT_EQ(read_file(t.out / "loss.csv"), full.at("loss.csv"));

  t.resume = false;
  t.force = false;
  EXPECT_THROW(cmd_train(c, t, sink), usage_error);
}

TEST(Train, StageOrderIsEnforced) {
  auto c = tiny();
  const auto data = make_data(c, "stage_data");
  train_options t;
  t.data = data;
  t.log_every = 0;
  c.stage = train_stage::joint_finetune;
  t.out = scratch("stage_noinit");
  EXPECT_THROW(cmd_train(c, t, sink), usage_error);

  auto pre = tiny();
  pre.train.pretrain_steps = 2;
  t.out = scratch("stage_pre");
  cmd_train(pre, t, sink);
  const auto pre_ck = t.out / "checkpoint.bin";

  // A checkpoint whose own config asked for more steps is unfinished.
  auto unfinished = checkpoint::load(pre_ck.string());
  unfinished.set_meta("train.pretrain_steps", "10");
  const auto bad = scratch("stage_bad.bin");
  unfinished.save(bad.string());
  t.init = bad;
  t.out = scratch("stage_unfinished");
  EXPECT_THROW(cmd_train(c, t, sink), usage_error);

  t.init = pre_ck;
  t.out = scratch("stage_joint");
  const auto l = cmd_train(c, t, sink);
  EXPECT_GT(l.t_cla, 0.0);
  EXPECT_GT(l.t_reg, 0.0);
  EXPECT_NE(read_file(t.out / "manifest.txt").find("joint-finetune"), std::string::npos);

  // A joint checkpoint cannot seed another joint run.
  t.init = t.out / "checkpoint.bin";
  t.out = scratch("stage_joint2");
  EXPECT_THROW(cmd_train(c, t, sink), usage_error);
}

TEST(TrackEval, EndToEndFilesAreDeterministic) {
  const auto c = tiny();
  const auto data = make_data(c, "te_data");
  train_options t;
  t.data = data;
  t.out = scratch("te_train");
  t.log_every = 0;
  cmd_train(c, t, sink);

  std::string first_tracks, first_report;
  for (int run = 0; run < 2; ++run) {
    track_options tr;
    tr.checkpoint = t.out / "checkpoint.bin";
    tr.frames = data;
    tr.out = scratch("te_tracks" + std::to_string(run) + ".txt");
    tr.threads = run + 1;
    cmd_track(c, tr, sink);
    const auto rows = read_tracks(tr.out.string());
    for (const auto& r : rows) EXPECT_TRUE(r.video == "seq000" || r.video == "seq001");

    eval_options ev;
    ev.predictions = tr.out;
    ev.ground_truth = data;
    ev.checkpoint = t.out / "checkpoint.bin";
    ev.out = scratch("te_eval" + std::to_string(run));
    const auto report = cmd_eval(c, ev, sink);
    EXPECT_TRUE(report.has("mota") && report.has("ap") && report.has("ids_per_sequence"));
    EXPECT_EQ(report.get("sequences"), 2.0);
    for (const char* f : {"metrics.txt", "metrics.json", "pr_curve.csv", "config.toml"})
      EXPECT_TRUE(fs::exists(ev.out / f)) << f;
    if (run == 0) {
      first_tracks = read_file(tr.out);
      first_report = read_file(ev.out / "metrics.txt");
    } else {
      EXPECT_EQ(read_file(tr.out), first_tracks);
      EXPECT_EQ(read_file(ev.out / "metrics.txt"), first_report);
    }
  }
}

TEST(Eval, PerfectPredictionsScorePerfectly) {
  const auto c = tiny();
  const auto data = make_data(c, "perfect_data");
  std::ostringstream os;
  write_track_header(os);
  for (const auto& d : sequence_dirs(data)) {
    std::istringstream gt(read_file(d / "gt.txt"));
    std::string line;
    std::getline(gt, line);
    while (std::getline(gt, line)) os << line << '\n';
  }
  const auto pred = scratch("perfect.txt");
  write_file_atomic(pred, os.str());
  eval_options ev;
  ev.predictions = pred;
  ev.ground_truth = data;
  ev.out = scratch("perfect_eval");
  const auto r = cmd_eval(c, ev, sink);
  EXPECT_DOUBLE_EQ(r.get("mota"), 1.0);
  EXPECT_DOUBLE_EQ(r.get("ids"), 0.0);
  EXPECT_FALSE(r.has("ap"));
  EXPECT_FALSE(fs::exists(ev.out / "pr_curve.csv"));
}

TEST(Eval, MalformedTrackFileNamesTheLine) {
  const auto data = make_data(tiny(), "bad_eval_data", 1);
  const auto pred = scratch("bad.txt");
  write_file_atomic(pred, std::string(track_file_magic) + "\nseq000,0,1,2,3\n");
  eval_options ev;
  ev.predictions = pred;
  ev.ground_truth = data;
  ev.out = scratch("bad_eval");
  try {
    cmd_eval(tiny(), ev, sink);
    FAIL();
  } catch (const track_file_error& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(Render, ColorIsFixedPerId) {
  std::set<std::array<std::uint8_t, 3>> colors;
  for (int id = 1; id <= 12; ++id) {
    EXPECT_EQ(id_color(id), id_color(id));
    colors.insert(id_color(id));
  }
  EXPECT_GE(colors.size(), 11u);

  const auto data = make_data(tiny(), "render_data", 1);
  const auto seq = data / "seq000";
  render_options r;
  r.frames = seq;
  r.tracks = seq / "gt.txt";
  r.out = scratch("render_out");
  cmd_render(r, sink);
  const auto rows = read_tracks((seq / "gt.txt").string());
  ASSERT_FALSE(rows.empty());
  std::size_t checked = 0;
  for (const auto& row : rows) {
    const auto im = read_ppm((r.out / frame_file_name(row.frame)).string());
    const long y = std::lround(row.box.top()), x = std::lround(row.box.left());
    if (y < 0 || x < 0 || y >= long(im.height) || x >= long(im.width)) continue;
    // The top-left corner belongs to this box unless another box overlaps it.
    bool alone = true;
    for (const auto& o : rows)
      if (o.frame == row.frame && o.id != row.id && intersection_area(o.box, row.box) > 0) alone = false;
    if (!alone) continue;
    const auto col = id_color(row.id);
    for (std::size_t ch = 0; ch < 3; ++ch) EXPECT_EQ(im.at(std::size_t(y), std::size_t(x), ch), col[ch]);
    ++checked;
  }
  EXPECT_GT(checked, 0u);
}

TEST(Binary, ExitCodes) {
  const std::string exe = GCNET_CLI_PATH;
  const auto bad = scratch("bad.toml");
  write_file_atomic(bad, "[scene]\nheight = 30\n");
  auto run = [&](const std::string& args) {
    const int status = std::system((exe + " " + args + " >/dev/null 2>&1").c_str());
    return WEXITSTATUS(status);
  };
  EXPECT_EQ(run("gen --config " + bad.string() + " --out " + scratch("x").string()), 1);
  EXPECT_EQ(run("track --checkpoint " + bad.string() + " --frames . --out " + scratch("t.txt").string()), 1);
  const auto cfg = scratch("tiny.toml");
  save_run_config(cfg.string(), tiny());
  const auto out = scratch("bin_gen");
  EXPECT_EQ(run("gen --config " + cfg.string() + " --count 1 --out " + out.string()), 0);
  EXPECT_EQ(run("gen --config " + cfg.string() + " --count 1 --out " + out.string()), 1);
  EXPECT_TRUE(fs::exists(out / "seq000" / "gt.txt"));
  EXPECT_EQ(run("gradcheck"), 0);
}
