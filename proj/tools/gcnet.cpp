#include <CLI11.hpp>

#include <iostream>

#include "gcnet/commands.hpp"

namespace {

struct common_flags {
  std::string config;
  std::int64_t seed = -1;
  std::size_t threads = 1;
  bool force = false;
};

void add_common(CLI::App* cmd, common_flags& f, bool with_force = true) {
  cmd->add_option("--config", f.config, "run configuration file");
  cmd->add_option("--seed", f.seed, "override every seed in the configuration");
  cmd->add_option("--threads", f.threads, "worker threads; 1 is bitwise reproducible")->check(CLI::PositiveNumber);
  if (with_force) cmd->add_flag("--force", f.force, "allow a non-empty output directory");
}

gcnet::run_config load(const common_flags& f) {
  gcnet::run_config c = f.config.empty() ? gcnet::run_config{} : gcnet::load_run_config(f.config);
  if (f.seed >= 0) {
    c.scene.seed = std::uint64_t(f.seed);
    c.train.seed = std::uint64_t(f.seed);
  }
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gcnet: joint detection and tracking with a global correlation network"};
  app.require_subcommand(1);
  common_flags flags;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gcnet::gen_options gen_opt;
  std::string gen_split = "train";
  add_common(gen, flags);
  gen->add_option("--out", gen_opt.out, "output directory")->required();
  gen->add_option("--count", gen_opt.count, "number of sequences (default: the split size in the config)");
  gen->add_option("--offset", gen_opt.first_index, "index of the first sequence");
  gen->add_option("--split", gen_split, "train or test; test sequences start after every train index")
      ->check(CLI::IsMember({"train", "test"}));

  auto* train = app.add_subcommand("train", "train one stage");
  gcnet::train_options train_opt;
  std::string stage;
  add_common(train, flags);
  train->add_option("--data", train_opt.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", train_opt.out, "run directory")->required();
  train->add_option("--stage", stage, "detect-pretrain or joint-finetune (default: from the config)")
      ->check(CLI::IsMember({"detect-pretrain", "joint-finetune"}));
  train->add_option("--init", train_opt.init, "detect-pretrain checkpoint to fine-tune")->check(CLI::ExistingFile);
  train->add_flag("--resume", train_opt.resume, "continue from the checkpoint in --out");
  train->add_option("--log-every", train_opt.log_every, "progress line interval (0 disables)");

  auto* track = app.add_subcommand("track", "run the online tracker over sequences");
  gcnet::track_options track_opt;
  add_common(track, flags, false);
  track->add_option("--checkpoint", track_opt.checkpoint)->required()->check(CLI::ExistingFile);
  track->add_option("--frames", track_opt.frames, "sequence directory or dataset root")->required();
  track->add_option("--out", track_opt.out, "track file to write")->required();

  auto* eval = app.add_subcommand("eval", "score a track file against ground truth");
  gcnet::eval_options eval_opt;
  add_common(eval, flags);
  eval->add_option("--pred", eval_opt.predictions, "track file")->required()->check(CLI::ExistingFile);
  eval->add_option("--gt", eval_opt.ground_truth, "sequence directory or dataset root")->required();
  eval->add_option("--out", eval_opt.out, "report directory")->required();
  eval->add_option("--checkpoint", eval_opt.checkpoint, "also measure detection AP with this model")
      ->check(CLI::ExistingFile);

  auto* render = app.add_subcommand("render", "draw tracks onto copies of the frames");
  gcnet::render_options render_opt;
  add_common(render, flags);
  render->add_option("--frames", render_opt.frames, "sequence directory")->required()->check(CLI::ExistingDirectory);
  render->add_option("--tracks", render_opt.tracks, "track file")->required()->check(CLI::ExistingFile);
  render->add_option("--out", render_opt.out, "output directory")->required();
  render->add_option("--video", render_opt.video, "video name in the track file");
  render->add_flag("--candidates", render_opt.include_candidates, "also draw candidates");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  std::uint64_t grad_seed = 1;
  grad->add_option("--seed", grad_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      auto cfg = load(flags);
      gen_opt.force = flags.force;
      gen_opt.threads = flags.threads;
      if (gen_split == "test" && gen->count("--offset") == 0) gen_opt.first_index = cfg.train_sequences;
      if (gen->count("--count") == 0) gen_opt.count = gen_split == "test" ? cfg.test_sequences : cfg.train_sequences;
      gcnet::cmd_gen(cfg, gen_opt, std::cout);
    } else if (train->parsed()) {
      auto cfg = load(flags);
      if (!stage.empty()) cfg.stage = gcnet::parse_train_stage(stage);
      train_opt.force = flags.force;
      gcnet::cmd_train(cfg, train_opt, std::cout);
    } else if (track->parsed()) {
      track_opt.threads = flags.threads;
      gcnet::cmd_track(load(flags), track_opt, std::cout);
    } else if (eval->parsed()) {
      eval_opt.force = flags.force;
      eval_opt.threads = flags.threads;
      gcnet::cmd_eval(load(flags), eval_opt, std::cout);
    } else if (render->parsed()) {
      render_opt.force = flags.force;
      gcnet::cmd_render(render_opt, std::cout);
    } else if (grad->parsed()) {
      return gcnet::cmd_gradcheck(grad_seed, std::cout) ? 0 : 2;
    }
  } catch (const gcnet::numeric_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
