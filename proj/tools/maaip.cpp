// maaip command line: train, eval, gen-demos, serve.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "maaip/evalkit.hpp"
#include "maaip/livebridge_server.hpp"

using namespace maaip;

namespace {

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

std::string checkpoint_id(const std::string& path) {
  return std::filesystem::path(path).stem().string();
}

int cmd_train(const std::string& config_path, const std::optional<std::string>& resume, const std::string& out,
              bool allow_mismatch, bool quiet) {
  const TrainConfig config = load_config(config_path);
  RunOptions opts;
  opts.out_dir = out;
  opts.resume = resume;
  opts.allow_config_mismatch = allow_mismatch;
  const std::int64_t total = planned_iterations(config);
  if (!quiet) {
    opts.on_iteration = [total](const IterationMetrics& m) {
      std::printf("iter %lld/%lld  step %lld  reward %.4f  r^M %.4f  r^I %.4f  r^C %.4f  damage %.2f\n",
                  static_cast<long long>(m.iteration + 1), static_cast<long long>(total),
                  static_cast<long long>(m.global_step), m.mean_reward, m.mean_r_motion, m.mean_r_interaction,
                  m.mean_r_control, m.mean_damage);
      std::fflush(stdout);
    };
  }
  std::filesystem::create_directories(out);
  run_training(config, opts);
  std::printf("wrote %s\n", (std::filesystem::path(out) / "final.ckpt").string().c_str());
  return 0;
}

struct EvalArgs {
  std::string mode;
  std::vector<std::string> ckpts;
  std::string demos;
  int episodes = 32;
  int length = 0;  // 0: scenario default
  std::uint64_t seed = 0;
  int workers = 1;
  int agent = -1;
  std::string out;
};

int cmd_eval(const EvalArgs& a) {
  std::vector<TrainState> states;
  for (const auto& p : a.ckpts) states.push_back(checkpoint_load(p));
  EvalOptions o = a.mode == "heading" ? heading_defaults() : EvalOptions{};
  if (a.mode == "style") o.length = 900;
  o.episodes = a.episodes;
  o.seed = a.seed;
  o.workers = a.workers;
  if (a.length > 0) o.length = a.length;

  EvalReport r;
  if (a.mode == "damage") {
    if (states.size() > 2) throw ConfigError("eval damage: at most two checkpoints");
    r = eval_damage(states[0], states.back(), o);
  } else if (a.mode == "heading") {
    if (states.size() != 1) throw ConfigError("eval heading: exactly one checkpoint");
    r = eval_heading(states[0], o);
  } else if (a.mode == "style") {
    if (states.size() != 1) throw ConfigError("eval style: exactly one checkpoint");
    if (a.demos.empty()) throw ConfigError("eval style: --demos is required");
    r = style_report(PolicyController(states[0]), read_dataset(a.demos), states[0].config, o, a.agent);
  } else {
    if (states.size() != 2) throw ConfigError("eval cross: exactly two checkpoints");
    r = eval_cross_style(states[0], states[1], o);
  }
  const nlohmann::json j = report_json(r);
  if (a.out.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    write_report(r, a.out);
    for (const auto& ag : r.agents) {
      std::printf("%s: received %.2f N  dealt %.2f N  attack-contact %.4f\n", ag.label.c_str(),
                  ag.mean_damage_received, ag.mean_damage_dealt, ag.attack_contact_rate);
    }
    if (r.mean_normalized_return) std::printf("mean normalized return %.4f\n", *r.mean_normalized_return);
    if (r.style_divergence) std::printf("style divergence %.4f\n", *r.style_divergence);
    if (r.out_of_distribution) std::printf("out of distribution: checkpoints trained on different datasets\n");
    std::printf("wrote %s\n", a.out.c_str());
  }
  return 0;
}

int cmd_gen_demos(const std::string& style, double seconds, double round_seconds, std::uint64_t seed,
                  const std::string& out) {
  DemoDataset d;
  const auto colon = style.find(':');
  if (colon == std::string::npos) {
    d = generate_single_dataset(style_by_id(style), seconds, seed);
  } else {
    const int rounds = std::max(1, static_cast<int>(std::ceil(seconds / round_seconds - 1e-9)));
    d = generate_interaction_dataset(style_by_id(style.substr(0, colon)), style_by_id(style.substr(colon + 1)), rounds,
                                     seed, {}, round_seconds);
  }
  write_dataset(out, d);
  std::size_t frames = 0;
  for (const auto& c : d.clips) frames += static_cast<std::size_t>(c.n_frames());
  std::printf("wrote %zu clips, %zu frames to %s\n", d.clips.size(), frames, out.c_str());
  return 0;
}

int cmd_serve(const std::vector<std::string>& ckpts, unsigned short port, const std::string& address,
              std::uint64_t seed, bool stochastic) {
  std::vector<LiveCheckpoint> list;
  for (const auto& p : ckpts) {
    list.push_back({checkpoint_id(p), std::make_shared<const TrainState>(checkpoint_load(p))});
  }
  LiveServer server(LiveSession(std::move(list), seed, stochastic), port, address);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  server.start();
  std::printf("serving on ws://%s:%u\n", address.c_str(), server.port());
  std::fflush(stdout);
  while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  std::printf("stopped after %lld frames\n", static_cast<long long>(server.frames_sent()));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-agent adversarial imitation: training, evaluation, demos and live steering"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "Train policies and discriminators from a config file");
  std::string config_path, out_dir = "run";
  std::optional<std::string> resume;
  bool allow_mismatch = false, quiet = false;
  train->add_option("--config", config_path, "INI config")->required()->check(CLI::ExistingFile);
  train->add_option("--resume", resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
  train->add_option("--out", out_dir, "Output directory for metrics and checkpoints");
  train->add_flag("--allow-config-mismatch", allow_mismatch, "Resume even if the config hash differs");
  train->add_flag("-q,--quiet", quiet, "No per-iteration progress");

  auto* eval = app.add_subcommand("eval", "Evaluate checkpoints and write a JSON report");
  EvalArgs ea;
  eval->add_option("mode", ea.mode, "damage | heading | style | cross")
      ->required()
      ->check(CLI::IsMember({"damage", "heading", "style", "cross"}));
  eval->add_option("--ckpt", ea.ckpts, "Checkpoint (repeat for two)")->required()->check(CLI::ExistingFile);
  eval->add_option("--demos", ea.demos, "Demo dataset (style mode)")->check(CLI::ExistingFile);
  eval->add_option("--episodes", ea.episodes, "Episodes")->check(CLI::PositiveNumber);
  eval->add_option("--length", ea.length, "Steps per episode (default 1200; heading 500; style 900)");
  eval->add_option("--seed", ea.seed, "Master seed");
  eval->add_option("--workers", ea.workers, "Parallel episodes")->check(CLI::PositiveNumber);
  eval->add_option("--agent", ea.agent, "Style mode: compare only this slot with demo character of the same index");
  eval->add_option("--out", ea.out, "Report path (stdout when omitted)");

  auto* gen = app.add_subcommand("gen-demos", "Generate a scripted demonstration dataset");
  std::string style, gen_out;
  double seconds = 60.0, round_seconds = 30.0;
  std::uint64_t gen_seed = 0;
  gen->add_option("--style", style, "Style id for single-actor clips, or a:b for interaction clips")->required();
  gen->add_option("--seconds", seconds, "Total seconds of demonstration")->check(CLI::PositiveNumber);
  gen->add_option("--round-seconds", round_seconds, "Interaction round length")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Master seed");
  gen->add_option("--out", gen_out, "Output .jsonl path")->required();

  auto* serve = app.add_subcommand("serve", "Run a live fight over WebSocket");
  std::vector<std::string> serve_ckpts;
  unsigned short port = 8787;
  std::string address = "0.0.0.0";
  std::uint64_t serve_seed = 0;
  serve->add_option("--ckpt", serve_ckpts, "Checkpoint (repeatable)")->required()->check(CLI::ExistingFile);
  serve->add_option("--port", port, "TCP port");
  serve->add_option("--address", address, "Bind address");
  bool stochastic = false;
  serve->add_option("--seed", serve_seed, "Spawn seed");
  serve->add_flag("--stochastic", stochastic, "Sample actions instead of using the policy mean");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(config_path, resume, out_dir, allow_mismatch, quiet);
    if (*eval) return cmd_eval(ea);
    if (*gen) return cmd_gen_demos(style, seconds, round_seconds, gen_seed, gen_out);
    if (*serve) return cmd_serve(serve_ckpts, port, address, serve_seed, stochastic);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "maaip: %s\n", e.what());
    return 1;
  }
  return 0;
}
