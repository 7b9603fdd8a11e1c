#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "spat/codec.hpp"
#include "spat/transport.hpp"

namespace spat::expcli {

struct ExperimentConfig {
  std::string kind = "latency";  // latency | rate_sweep | e2e_uplink | e2e_downlink | ber_sweep | train
  std::vector<transport::ProtocolKind> protocols = {
      transport::ProtocolKind::tcp, transport::ProtocolKind::udp, transport::ProtocolKind::sitp,
      transport::ProtocolKind::spat};
  std::vector<double> snr_grid = {4.0, 8.0, 12.0, 16.0, 20.0};
  std::uint64_t seed = 1;
  std::string out_dir = ".";

  codec::CodecConfig codec_cfg;
  codec::TrainOptions train_options;
  transport::LatencyConfig latency;
  int latency_trials = 100000;

  int train_images = 64;
  int test_images = 32;

  // Digital link settings (Table-style desk defaults).
  int quant_bits = 4;
  int mod_order = 16;
  std::size_t packet_bits = 768;
  std::uint64_t interleaver_seed = 0x5EA1;

  std::string checkpoint_uplink = "uplink.json";
  std::string checkpoint_downlink = "downlink.json";

  long ber_bits_per_point = 1000000;
  std::vector<double> ber_snr_grid = {6.0, 8.0, 10.0, 12.0};
  std::vector<int> ber_orders = {4, 16, 64};
};

// Flat key=value config text ('#' comments); unknown keys are an error.
void apply_key_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
ExperimentConfig load_config_file(const std::string& path);

// Canonical sorted key=value rendering of the configuration, and the FNV-1a 64
// digest (hex) over it. Every emitted CSV row carries this hash.
std::string canonical_text(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);
std::string content_digest(const std::string& text);  // FNV-1a 64 hex of arbitrary text

// Procedural shape images with deterministic class-to-port assignment.
std::vector<codec::Sample> generate_toy_dataset(int n, int height, int width, std::uint64_t seed,
                                                int n_ports);

// Reads PNG/PPM/PGM images from a directory (sorted by filename), grayscale,
// nearest-neighbor resized, normalized to [0,1]. Unreadable files are skipped
// with a warning; an empty result is an error.
std::vector<codec::ToyImage> load_image_folder(const std::string& path, int target_h,
                                               int target_w);

// ---- experiment runners (CSV bodies are byte-stable for a fixed config) ----

void run_rate_sweep(const ExperimentConfig& cfg, std::ostream& csv);
void run_latency(const ExperimentConfig& cfg, std::ostream& csv, std::ostream& summary_json);
void run_ber_sweep(const ExperimentConfig& cfg, std::ostream& csv);

struct TrainOutput {
  codec::SpatModel uplink;
  codec::SpatModel downlink;
};

// Trains both directional variants on the toy dataset and writes versioned
// checkpoints plus per-epoch loss traces under cfg.out_dir.
TrainOutput train_and_save(const ExperimentConfig& cfg);

// ---- end-to-end digital pipeline ----

struct E2eMessageResult {
  bool delivered = false;
  transport::LossCause loss_cause = transport::LossCause::none;
  int retransmissions = 0;
  double psnr_db = 0.0;
};

// Full digital chain for one message: encode -> (SPAT: port injection) ->
// modnet -> rate selection -> quantize -> interleave -> packetize -> per-packet
// framing -> 16-QAM -> AWGN -> demodulate -> protocol delivery semantics ->
// restore -> port identification / gating -> decode. Lost messages are scored
// against the zero-feature reconstruction. In downlink mode the receiver gates
// at its own local port: sample.ports.dst by default, or gate_port_override
// when >= 0 (a non-target terminal).
E2eMessageResult e2e_message(const codec::SpatModel& model, const codec::Sample& sample,
                             transport::ProtocolKind kind, double gamma_db,
                             codec::Direction direction, const ExperimentConfig& cfg,
                             std::uint64_t stream_seed, int gate_port_override = -1);

void run_e2e(const ExperimentConfig& cfg, const codec::SpatModel& model,
             codec::Direction direction, std::span<const codec::Sample> dataset,
             std::ostream& csv);

}  // namespace spat::expcli
