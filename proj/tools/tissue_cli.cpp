// tissue: headless experiments and the teleoperation service.

#include "tissue/experiment.hpp"
#include "tissue/service/server.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <iostream>
#include <sstream>
#include <thread>

namespace {

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted = true; }

std::vector<std::uint64_t> parse_seeds(const std::string& text)
{
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw tissue::ConfigError("bad seed '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw tissue::ConfigError("--seed needs at least one value");
  return out;
}

int serve(const tissue::ExperimentConfig& c, const std::string& address, int port, const std::string& static_dir,
          bool fast, bool quiet)
{
  tissue::service::SessionConfig s;
  s.scene = c.scene;
  s.sampling = c.sampling;
  s.mpc = c.mpc;
  s.greedy = c.eval;
  s.lfd = c.lfd;
  s.realtime = !fast;
  s.demo_dir = (tissue::fs::path(c.out) / "demos").string();
  s.run_dir = (tissue::fs::path(c.out) / "runs").string();
  const auto demos = tissue::load_demos(c.demo_paths);
  if (!demos.empty()) tissue::check_demos_for(c, demos);

  tissue::service::ServerConfig sc;
  sc.address = address;
  sc.port = static_cast<unsigned short>(port);
  sc.static_dir = static_dir;
  tissue::service::Server server(std::move(s), sc);
  for (std::size_t i = 0; i < demos.size(); ++i) {
    server.session().demos().add(demos[i], tissue::fs::path(c.demo_paths[i]).stem().stem().string());
  }
  server.start();
  if (!quiet) std::cout << "listening on http://" << address << ':' << server.port() << std::endl;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Soft tissue manipulation experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  std::string seeds_text;
  std::string out_dir;
  bool quiet = false;
  app.add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
  app.add_option("--seed", seeds_text, "Comma-separated seeds, overrides the config");
  app.add_option("--out", out_dir, "Output directory, overrides the config");
  app.add_flag("--quiet", quiet, "Only print errors");

  std::vector<std::string> demo_paths;
  std::string checkpoint;
  int count = 3;
  std::string replay_path;
  std::string address = "127.0.0.1";
  int port = 8765;
  std::string static_dir;
  bool fast = false;

  auto* rl = app.add_subcommand("rl", "Train by exploration, then evaluate greedily");
  auto* lfd = app.add_subcommand("lfd", "Pretrain on demos, then control to the target");
  lfd->add_option("--demo", demo_paths, "Demo files (.demo.jsonl)");
  auto* step = app.add_subcommand("step-study", "Compare fixed and variable step schedules");
  step->add_option("--checkpoint", checkpoint, "Trained model checkpoint");
  auto* scripted = app.add_subcommand("scripted-demo", "Generate demos with the simulator-backed oracle");
  scripted->add_option("--count", count, "Number of demos")->check(CLI::PositiveNumber);
  auto* pretrain = app.add_subcommand("pretrain", "Pretrain the dynamics model on demos only");
  pretrain->add_option("--demo", demo_paths, "Demo files (.demo.jsonl)");
  auto* srv = app.add_subcommand("serve", "Run the teleoperation service");
  srv->add_option("--address", address, "Bind address");
  srv->add_option("--port", port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535));
  srv->add_option("--static", static_dir, "Directory with the UI bundle")->check(CLI::ExistingDirectory);
  srv->add_option("--demo", demo_paths, "Demos preloaded into the session");
  srv->add_flag("--fast", fast, "Run the simulation as fast as possible");
  auto* replay = app.add_subcommand("replay", "Re-drive the simulator through a recorded demo");
  replay->add_option("demo", replay_path, "Demo file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  tissue::ExperimentConfig cfg;
  try {
    if (!config_path.empty()) cfg = tissue::load_config(config_path);
    if (!seeds_text.empty()) cfg.seeds = parse_seeds(seeds_text);
    if (!out_dir.empty()) cfg.out = out_dir;
    if (!demo_paths.empty()) cfg.demo_paths = demo_paths;
    if (!checkpoint.empty()) cfg.step_study.checkpoint = checkpoint;
    cfg.quiet = quiet;
    cfg.validate();
  } catch (const tissue::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  }

  const tissue::Progress progress = [&](const std::string& msg) {
    if (!quiet) std::cerr << msg << std::endl;
  };
  try {
    tissue::ojson summary;
    if (*rl) {
      summary = tissue::cmd_rl(cfg, progress);
    } else if (*lfd) {
      summary = tissue::cmd_lfd(cfg, tissue::load_demos(cfg.demo_paths), progress);
    } else if (*pretrain) {
      summary = tissue::cmd_pretrain(cfg, tissue::load_demos(cfg.demo_paths), progress);
    } else if (*step) {
      summary = tissue::cmd_step_study(cfg, progress);
    } else if (*scripted) {
      summary = tissue::cmd_scripted_demo(cfg, count, progress);
    } else if (*replay) {
      summary = tissue::cmd_replay(cfg, replay_path);
    } else if (*srv) {
      return serve(cfg, address, port, static_dir, fast, quiet);
    }
    if (!quiet) std::cout << summary.dump(2) << '\n';
  } catch (const tissue::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
