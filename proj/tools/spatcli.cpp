// Command-line front end for the simulator: rate sweeps, latency Monte Carlo,
// BER sweeps, training, and end-to-end PSNR-vs-SNR runs. All outputs are CSV
// or JSON files under --out.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "spat/checkpoint.hpp"
#include "spat/expcli.hpp"

namespace fs = std::filesystem;
using spat::expcli::ExperimentConfig;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::vector<std::string> protocols;
  std::vector<double> snr;
  int trials = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "key=value config file");
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--seed", args.seed, "RNG seed")->each([&args](const std::string&) {
    args.seed_set = true;
  });
  cmd->add_option("--protocol", args.protocols, "protocol (repeatable): tcp udp sitp spat");
  cmd->add_option("--snr", args.snr, "SNR grid points in dB (repeatable)");
  cmd->add_option("--trials", args.trials, "Monte Carlo trials");
}

ExperimentConfig make_config(const CommonArgs& args, const std::string& kind) {
  ExperimentConfig cfg;
  if (!args.config_path.empty()) cfg = spat::expcli::load_config_file(args.config_path);
  cfg.kind = kind;
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  if (args.seed_set) cfg.seed = args.seed;
  if (!args.protocols.empty()) {
    cfg.protocols.clear();
    for (const std::string& p : args.protocols) {
      cfg.protocols.push_back(spat::transport::protocol_from_name(p));
    }
  }
  if (!args.snr.empty()) cfg.snr_grid = args.snr;
  if (args.trials > 0) cfg.latency_trials = args.trials;
  fs::create_directories(cfg.out_dir);
  return cfg;
}

std::ofstream open_out(const ExperimentConfig& cfg, const std::string& name) {
  fs::path p = fs::path(cfg.out_dir) / name;
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot open " + p.string());
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Run record: ties every output to the exact configuration and checkpoint
// content that produced it.
void write_run_record(const ExperimentConfig& cfg, const std::string& name,
                      const std::vector<std::string>& checkpoint_paths, double wall_s) {
  nlohmann::ordered_json rec;
  rec["config_hash"] = spat::expcli::config_hash(cfg);
  nlohmann::ordered_json digests;
  for (const std::string& p : checkpoint_paths) {
    digests[fs::path(p).filename().string()] = spat::expcli::content_digest(read_file(p));
  }
  rec["checkpoint_digests"] = digests;
  rec["wall_clock_s"] = wall_s;
  std::ofstream out(fs::path(cfg.out_dir) / name);
  out << rec.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SPAT semantic transport protocol simulator"};
  app.require_subcommand(1);

  CommonArgs rate_args, latency_args, ber_args, train_args, e2e_args;
  CLI::App* rate_cmd = app.add_subcommand("rate-sweep", "SNR-to-channel-budget sweep CSV");
  add_common(rate_cmd, rate_args);

  CLI::App* latency_cmd = app.add_subcommand("latency", "latency Monte Carlo CSV + summary JSON");
  add_common(latency_cmd, latency_args);

  CLI::App* ber_cmd = app.add_subcommand("ber", "QAM/AWGN bit-error-rate sweep CSV");
  add_common(ber_cmd, ber_args);

  CLI::App* train_cmd = app.add_subcommand("train", "train codec checkpoints + loss traces");
  add_common(train_cmd, train_args);
  int epochs = 0;
  train_cmd->add_option("--epochs", epochs, "training epochs");

  CLI::App* e2e_cmd = app.add_subcommand("e2e", "end-to-end PSNR vs SNR per protocol");
  add_common(e2e_cmd, e2e_args);
  std::string direction = "uplink";
  std::string image_folder;
  e2e_cmd->add_option("--direction", direction, "uplink or downlink");
  e2e_cmd->add_option("--images", image_folder, "optional folder of PNG/PPM images");

  CLI11_PARSE(app, argc, argv);

  try {
    if (rate_cmd->parsed()) {
      ExperimentConfig cfg = make_config(rate_args, "rate_sweep");
      std::ofstream csv = open_out(cfg, "rate_sweep.csv");
      spat::expcli::run_rate_sweep(cfg, csv);
      std::cout << "wrote " << (fs::path(cfg.out_dir) / "rate_sweep.csv").string() << "\n";
    } else if (latency_cmd->parsed()) {
      ExperimentConfig cfg = make_config(latency_args, "latency");
      std::ofstream csv = open_out(cfg, "latency.csv");
      std::ofstream js = open_out(cfg, "latency_summary.json");
      spat::expcli::run_latency(cfg, csv, js);
      std::cout << "wrote latency.csv and latency_summary.json under " << cfg.out_dir << "\n";
    } else if (ber_cmd->parsed()) {
      ExperimentConfig cfg = make_config(ber_args, "ber_sweep");
      if (!ber_args.snr.empty()) cfg.ber_snr_grid = ber_args.snr;
      std::ofstream csv = open_out(cfg, "ber_sweep.csv");
      spat::expcli::run_ber_sweep(cfg, csv);
      std::cout << "wrote " << (fs::path(cfg.out_dir) / "ber_sweep.csv").string() << "\n";
    } else if (train_cmd->parsed()) {
      ExperimentConfig cfg = make_config(train_args, "train");
      if (epochs > 0) cfg.train_options.epochs = epochs;
      auto t0 = std::chrono::steady_clock::now();
      spat::expcli::train_and_save(cfg);
      double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      write_run_record(cfg, "train_run.json",
                       {(fs::path(cfg.out_dir) / cfg.checkpoint_uplink).string(),
                        (fs::path(cfg.out_dir) / cfg.checkpoint_downlink).string()},
                       wall);
      std::cout << "wrote checkpoints and loss traces under " << cfg.out_dir << "\n";
    } else if (e2e_cmd->parsed()) {
      ExperimentConfig cfg = make_config(e2e_args, direction == "downlink" ? "e2e_downlink"
                                                                           : "e2e_uplink");
      spat::codec::Direction dir = direction == "downlink" ? spat::codec::Direction::downlink
                                                           : spat::codec::Direction::uplink;
      std::string ckpt = dir == spat::codec::Direction::downlink ? cfg.checkpoint_downlink
                                                                 : cfg.checkpoint_uplink;
      std::string ckpt_path = (fs::path(cfg.out_dir) / ckpt).string();
      auto t0 = std::chrono::steady_clock::now();
      spat::codec::SpatModel model =
          spat::codec::model_from_json(nlohmann::json::parse(read_file(ckpt_path)));
      std::vector<spat::codec::Sample> dataset;
      if (image_folder.empty()) {
        dataset = spat::expcli::generate_toy_dataset(cfg.test_images, cfg.codec_cfg.image_h,
                                                     cfg.codec_cfg.image_w,
                                                     spat::Rng::derive(cfg.seed, 6),
                                                     cfg.codec_cfg.n_ports);
      } else {
        std::vector<spat::codec::ToyImage> images = spat::expcli::load_image_folder(
            image_folder, cfg.codec_cfg.image_h, cfg.codec_cfg.image_w);
        for (std::size_t i = 0; i < images.size(); ++i) {
          spat::codec::Sample s;
          s.image = images[i];
          s.ports.src = static_cast<int>(i) % cfg.codec_cfg.n_ports;
          s.ports.dst = (5 * s.ports.src + 3) % cfg.codec_cfg.n_ports;
          dataset.push_back(std::move(s));
        }
      }
      std::string name = dir == spat::codec::Direction::downlink ? "e2e_downlink.csv"
                                                                 : "e2e_uplink.csv";
      std::ofstream csv = open_out(cfg, name);
      spat::expcli::run_e2e(cfg, model, dir, dataset, csv);
      double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      write_run_record(cfg, dir == spat::codec::Direction::downlink ? "e2e_downlink_run.json"
                                                                    : "e2e_uplink_run.json",
                       {ckpt_path}, wall);
      std::cout << "wrote " << (fs::path(cfg.out_dir) / name).string() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
