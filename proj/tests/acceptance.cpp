// End-to-end acceptance run: one PASS/FAIL line per criterion, exit status 1
// if any criterion fails.
#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>

#include "gcnet/commands.hpp"
#include "oracles.hpp"

using namespace gcnet;

namespace {

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

struct outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const std::string& criterion, const outcome& o) {
  std::cout << (o.pass ? "PASS  " : "FAIL  ") << criterion << ": " << o.detail << std::endl;
  if (!o.pass) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

struct settings {
  fs::path work = "acceptance_run";
  std::size_t pretrain_steps = 2000;
  std::size_t finetune_steps = 2000;
  std::size_t ablation_steps = 1000;
  std::size_t repro_steps = 10;
  std::uint64_t seed = 1;
  double pretrain_budget_s = 15 * 60;
  double gradient_budget_s = 120;
  bool skip_training = false;
};

outcome gradient_criterion(const settings& s) {
  const auto t0 = clock_type::now();
  const auto results = run_gradient_suite(s.seed);
  const double secs = seconds_since(t0);
  bool ok = secs < s.gradient_budget_s;
  double worst_op = 0, worst_net = 0;
  std::string failed;
  for (const auto& r : results) {
    ok = ok && r.report.passed;
    if (!r.report.passed) failed += " " + r.name;
    double& worst = r.name.rfind("network.", 0) == 0 ? worst_net : worst_op;
    worst = std::max(worst, r.report.max_relative_error);
  }
  return {ok, fmt("%.0f checks, worst per-op rel err %.2e (< 1e-4), worst composed %.2e (< 1e-3), %.1fs (< 120s)",
                  double(results.size()), worst_op, worst_net, secs) +
                  (failed.empty() ? "" : "; failed:" + failed)};
}

outcome oracle_criterion() {
  const std::pair<const char*, std::string (*)()> checks[] = {
      {"(a) correlation", [] { return oracle::check_correlation(); }},
      {"(b) peaks", [] { return oracle::check_peaks(); }},
      {"(c) heatmap", [] { return oracle::check_heatmap(); }},
      {"(d) positives", [] { return oracle::check_assign_positives(); }},
      {"(e) iou", [] { return oracle::check_iou(); }}};
  outcome o{true, ""};
  for (const auto& [name, run] : checks) {
    const std::string err = run();
    o.pass = o.pass && err.empty();
    o.detail += std::string(o.detail.empty() ? "" : ", ") + name + (err.empty() ? " ok" : " FAILED (" + err + ")");
  }
  return o;
}

outcome state_machine_criterion() {
  outcome o{true, ""};
  for (const auto& sc : oracle::state_machine_scenarios()) {
    std::string err;
    try {
      err = sc.run();
    } catch (const std::exception& e) {
      err = e.what();
    }
    o.pass = o.pass && err.empty();
    o.detail += (o.detail.empty() ? "" : ", ") + sc.name + (err.empty() ? " ok" : " FAILED (" + err + ")");
  }
  return o;
}

/// Trains detect-pretrain for `steps` and returns the held-out AP; `at_step`
/// additionally records AP after that many steps (0 disables).
struct pretrain_result {
  double ap = 0, seconds = 0, first_loss = 0, final_loss = 0;
  double ap_at_step = -1;
  fs::path checkpoint;
};

pretrain_result pretrain(run_config cfg, const fs::path& data, const std::vector<sequence>& test,
                         const fs::path& out, std::size_t at_step) {
  cfg.stage = train_stage::detect_pretrain;
  pretrain_result r;
  train_options t;
  t.data = data;
  t.out = out;
  t.force = true;
  t.log_every = 250;
  std::vector<double> losses;
  t.on_step = [&](std::size_t step, const loss_breakdown& l, gcnet_model<float>& model) {
    losses.push_back(l.total);
    if (at_step && step + 1 == at_step) r.ap_at_step = evaluate_detection(model, test, cfg.peak_threshold).ap;
  };
  const auto t0 = clock_type::now();
  cmd_train(cfg, t, std::cerr);
  r.seconds = seconds_since(t0);
  r.checkpoint = out / "checkpoint.bin";
  auto model = load_model<float>(checkpoint::load(r.checkpoint.string()));
  r.ap = evaluate_detection(model, test, cfg.peak_threshold, cfg.iou_threshold).ap;
  const std::size_t tail = std::min<std::size_t>(100, losses.size());
  r.first_loss = losses.empty() ? 0 : losses.front();
  for (std::size_t i = losses.size() - tail; i < losses.size(); ++i) r.final_loss += losses[i] / double(tail);
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  settings s;
  CLI::App app{"gcnet acceptance run"};
  app.add_option("--work", s.work, "scratch directory (recreated)");
  app.add_option("--pretrain-steps", s.pretrain_steps);
  app.add_option("--finetune-steps", s.finetune_steps);
  app.add_option("--ablation-steps", s.ablation_steps, "equal budget for the full model and each ablation");
  app.add_option("--seed", s.seed);
  app.add_flag("--skip-training", s.skip_training, "only the fast criteria");
  CLI11_PARSE(app, argc, argv);

  std::cout << "gcnet acceptance (seed " << s.seed << ")" << std::endl;
  report("gradient suite", gradient_criterion(s));
  report("oracle equivalence", oracle_criterion());
  report("state-machine scenarios", state_machine_criterion());
  if (s.skip_training) return failures ? 1 : 0;

  fs::remove_all(s.work);
  fs::create_directories(s.work);
  run_config cfg;
  cfg.scene.seed = cfg.train.seed = s.seed;
  cfg.train.pretrain_steps = s.pretrain_steps;
  cfg.train.finetune_steps = s.finetune_steps;
  std::ostringstream log;

  // Data: training clips 0..47, held-out clips 48..57 from the same generator.
  const fs::path train_dir = s.work / "train", test_dir = s.work / "test";
  {
    gen_options g;
    g.out = train_dir;
    g.count = cfg.train_sequences;
    cmd_gen(cfg, g, log);
    g.out = test_dir;
    g.first_index = cfg.train_sequences;
    g.count = cfg.test_sequences;
    cmd_gen(cfg, g, log);
  }
  const auto test = load_dataset(test_dir);

  // Detection.
  const std::size_t ablation_steps = std::min(s.ablation_steps, s.pretrain_steps);
  const auto full = pretrain(cfg, train_dir, test, s.work / "pretrain", ablation_steps);
  const double ratio = full.final_loss > 0 ? full.first_loss / full.final_loss : 0;
  report("end-to-end detection",
         {full.ap >= 0.80 && ratio >= 10 && full.seconds <= s.pretrain_budget_s,
          fmt("AP@0.5 %.4f (>= 0.80) on 10 held-out clips; loss %.4f -> %.4f, ", full.ap, full.first_loss,
              full.final_loss) +
              fmt("%.1fx decrease (>= 10x); %.1f min (<= 15)", ratio, full.seconds / 60)});

  // Tracking.
  {
    auto joint = cfg;
    joint.stage = train_stage::joint_finetune;
    train_options t;
    t.data = train_dir;
    t.out = s.work / "finetune";
    t.init = full.checkpoint;
    t.force = true;
    t.log_every = 250;
    const auto t0 = clock_type::now();
    cmd_train(joint, t, std::cerr);
    const double train_s = seconds_since(t0);
    track_options tr;
    tr.checkpoint = t.out / "checkpoint.bin";
    tr.frames = test_dir;
    tr.out = s.work / "tracks.txt";
    cmd_track(joint, tr, log);
    eval_options ev;
    ev.predictions = tr.out;
    ev.ground_truth = test_dir;
    ev.out = s.work / "eval";
    ev.force = true;
    const auto r = cmd_eval(joint, ev, log);
    const double mota = r.get("mota"), ids = r.get("ids_per_sequence"), mt = r.get("mt"),
                 cov = r.get("full_track_id_coverage_mean");
    report("end-to-end tracking",
           {mota >= 0.6 && ids <= 1.0 && mt >= 0.7 && cov >= 0.9,
            fmt("MOTA %.4f (>= 0.6), IDS/seq %.2f (<= 1), MT %.3f (>= 0.7), ", mota, ids, mt) +
                fmt("full-track id coverage %.3f (>= 0.9, min %.3f); MOTP %.3f, finetune %.1f min", cov,
                    r.get("full_track_id_coverage_min"), r.get("motp"), train_s / 60)});

    // Sparse tracking cost with the trained model on a held-out frame.
    auto model = load_model<float>(checkpoint::load(tr.checkpoint.string()));
    network_tracker<float> net(model, cfg.pipeline.p2);
    auto analysis = net.analyze(to_tensor<float>(test.front().frames.front()));
    std::vector<track_query<float>> qs;
    for (std::size_t i = 0; i < 8; ++i)
      qs.push_back(model.query_at(analysis.out.q, analysis.out.v, 0, (3 * i) % cfg.network.feature_h(), 2 * i));
    auto cost = [&](std::size_t n) {
      op_counter::reset();
      net.track(analysis, std::span<const track_query<float>>(qs.data(), n));
      return double(op_counter::value());
    };
    const double one = cost(1), eight = cost(8);
    report("sparse-inference contract",
           {one > 0 && eight / one <= 8.5,
            fmt("ops for 1 track %.0f, 8 tracks %.0f, ratio %.3f (<= 8.5)", one, eight, eight / one)});
  }

  // Ablations at an equal training budget.
  {
    struct variant {
      const char* name;
      void (*apply)(network_config&);
    };
    const variant variants[] = {{"gate off", [](network_config& n) { n.use_gate = false; }},
                                {"V-concat off", [](network_config& n) { n.use_value_concat = false; }},
                                {"explicit position embedding",
                                 [](network_config& n) { n.position_embedding = position_embedding_kind::explicit_index; }}};
    outcome o{true, fmt("full model AP %.4f after %.0f steps", full.ap_at_step, double(ablation_steps))};
    for (const auto& v : variants) {
      auto c = cfg;
      c.train.pretrain_steps = ablation_steps;
      v.apply(c.network);
      const auto r = pretrain(c, train_dir, test, s.work / (std::string("ablation_") + v.name), 0);
      const bool ok = full.ap_at_step >= r.ap - 0.02;
      o.pass = o.pass && ok;
      o.detail += std::string("; ") + v.name + fmt(" %.4f", r.ap) + (ok ? "" : " (exceeds full + 0.02)");
    }
    report("ablation direction", o);
  }

  // Reproducibility: the whole command chain twice with identical config.
  {
    auto c = cfg;
    c.train.pretrain_steps = c.train.finetune_steps = s.repro_steps;
    c.train.checkpoint_every = 0;
    c.train_sequences = 4;
    c.test_sequences = 2;
    std::string files[2][4];
    for (int run = 0; run < 2; ++run) {
      const auto dir = s.work / ("repro" + std::to_string(run));
      gen_options g;
      g.out = dir / "data";
      g.count = 4;
      cmd_gen(c, g, log);
      train_options t;
      t.data = g.out;
      t.log_every = 0;
      t.out = dir / "pre";
      cmd_train(c, t, log);
      auto joint = c;
      joint.stage = train_stage::joint_finetune;
      t.init = dir / "pre" / "checkpoint.bin";
      t.out = dir / "joint";
      cmd_train(joint, t, log);
      track_options tr;
      tr.checkpoint = t.out / "checkpoint.bin";
      tr.frames = g.out;
      tr.out = dir / "tracks.txt";
      cmd_track(joint, tr, log);
      eval_options ev;
      ev.predictions = tr.out;
      ev.ground_truth = g.out;
      ev.checkpoint = tr.checkpoint;
      ev.out = dir / "eval";
      cmd_eval(joint, ev, log);
      files[run][0] = read_file(dir / "pre" / "checkpoint.bin");
      files[run][1] = read_file(dir / "joint" / "checkpoint.bin");
      files[run][2] = read_file(tr.out);
      files[run][3] = read_file(ev.out / "metrics.txt") + read_file(ev.out / "metrics.json");
    }
    const char* names[] = {"pretrain checkpoint", "joint checkpoint", "track file", "metric reports"};
    outcome o{true, ""};
    for (int i = 0; i < 4; ++i) {
      const bool same = files[0][i] == files[1][i];
      o.pass = o.pass && same;
      o.detail += std::string(i ? ", " : "") + names[i] + (same ? " identical" : " DIFFER") + " (" +
                  std::to_string(files[0][i].size()) + " bytes)";
    }
    report("reproducibility", o);
  }

  std::cout << (failures ? std::to_string(failures) + " criteria failed" : "all criteria passed") << std::endl;
  return failures ? 1 : 0;
}
