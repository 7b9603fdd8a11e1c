#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "spat/numkit.hpp"
#include "spat/portsem.hpp"
#include "spat/ratectl.hpp"

namespace spat::codec {

struct ToyImage {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<double> pixels;  // row-major, in [0,1]

  std::size_t pixel_count() const { return pixels.size(); }
};

ToyImage null_image(int height, int width, int channels);

struct CodecConfig {
  int m_t = 192;  // latent length; equals the rate controller's c_max
  int image_h = 16;
  int image_w = 16;
  int channels = 1;

  int enc_hidden = 192;
  int dec_hidden = 192;
  int branch_hidden = 96;
  int id_hidden = 96;
  int modnet_hidden = 32;
  int gate_hidden = 64;
  int imp_hidden = 64;
  int snr_embed_dim = 16;

  int n_ports = 16;
  int port_dim = 64;
  int gate_port_dim = 16;
  std::size_t pool_groups = 16;

  double lambda1 = 1.0;
  double lambda2 = 10.0;
  double lambda3 = 3.0;
  double rate_alpha = 1.0;
  double rate_beta = 1.0;

  // Channel ModNet modulation is bounded to keep the plain encoder/decoder
  // path usable at any SNR; the gate head is unbounded so it can null features.
  double modnet_bound = 0.5;

  double train_snr_low = 4.0;
  double train_snr_high = 20.0;

  ratectl::RateConfig rate;

  std::size_t image_len() const {
    return static_cast<std::size_t>(image_h) * static_cast<std::size_t>(image_w) *
           static_cast<std::size_t>(channels);
  }
  void validate() const;
};

struct SpatModel {
  CodecConfig config;
  numkit::DenseNet encoder;
  numkit::DenseNet decoder;
  portsem::PortEncoder port_encoder;
  numkit::DenseNet modnet_tx;  // [snr/20] -> 2*m_t, sigmoid, zero-initialized head
  numkit::DenseNet modnet_rx;
  portsem::Identifier identifier;
  portsem::GateParams gate;
  ratectl::ImportanceHead importance;
};

SpatModel make_model(const CodecConfig& cfg, std::uint64_t seed);

// Named views over every trainable vector of the model, in a fixed order.
struct ParamBlock {
  std::string name;
  std::span<double> values;
};
std::vector<ParamBlock> model_param_blocks(SpatModel& model);

struct ModelGrads {
  std::vector<std::vector<double>> blocks;  // aligned with model_param_blocks order
  explicit ModelGrads(SpatModel& model);
  void zero();
  std::span<double> block(std::size_t i) { return blocks[i]; }
};

// ---- Inference-path operations ----

std::vector<double> encode(const ToyImage& image, const numkit::DenseNet& encoder);
ToyImage decode(std::span<const double> feature, const numkit::DenseNet& decoder, int height,
                int width, int channels);
// SNR-conditioned feature-wise affine modulation (scale and shift predicted
// from the SNR embedding, both bounded to +-bound).
std::vector<double> channel_modnet(std::span<const double> feature, double gamma_db,
                                   const numkit::DenseNet& net, double bound);

// 10*log10(1/MSE) with peak 1.0; identical images hit the 99 dB sentinel cap.
double psnr(const ToyImage& a, const ToyImage& b);

// ---- Training ----

struct Sample {
  ToyImage image;
  portsem::PortPair ports;
};

enum class Direction { uplink, downlink };

// Deterministic context for one batch: every stochastic choice is sampled up
// front so the loss is a pure function of the parameters (finite-difference
// checkable). noise_raw holds standard-normal draws scaled inside the pass by
// 10^(-snr/20) relative to the transmitted signal power.
struct TrainContext {
  double gamma_db = 20.0;
  std::vector<std::vector<double>> noise_raw;  // per sample, length m_t
  std::vector<int> wrong_ports;                // downlink only, per sample

  static TrainContext noiseless(double gamma_db, std::size_t batch, std::size_t m_t);
  static TrainContext sample(double gamma_db, std::size_t batch, std::size_t m_t,
                             Direction direction, std::span<const Sample> samples, int n_ports,
                             Rng& rng);
};

struct LossBreakdown {
  double total = 0.0;
  double rec = 0.0;
  double port = 0.0;
  double rate = 0.0;
};

LossBreakdown total_loss(const SpatModel& model, std::span<const Sample> batch,
                         Direction direction, const TrainContext& ctx);
LossBreakdown total_loss_and_grads(const SpatModel& model, std::span<const Sample> batch,
                                   Direction direction, const TrainContext& ctx,
                                   ModelGrads& grads);

struct TrainOptions {
  int epochs = 600;
  int batch_size = 8;
  double learning_rate = 1e-3;
};

struct TrainResult {
  std::vector<LossBreakdown> epoch_trace;
};

// Joint optimization of every trainable block; reproducible per seed. Throws
// on divergence (non-finite loss).
TrainResult train(SpatModel& model, std::span<const Sample> dataset, Direction direction,
                  const TrainOptions& options, std::uint64_t seed);

// ---- Analog semantic pipeline (training-equivalent forward) ----

struct SemanticPassResult {
  ToyImage reconstruction;       // uplink or downlink target-path output
  std::vector<double> z_hat;     // restored feature at the receiver
  int predicted_src = -1;
  int predicted_dst = -1;        // uplink only
  int c_r = 0;
};

// Runs encode -> port injection -> modnet -> rate selection -> feature-domain
// AWGN (omitted when noise_rng is null) -> restoration -> identification ->
// (downlink: gating at p_d_local) -> modnet -> decode.
SemanticPassResult semantic_pass(const SpatModel& model, const ToyImage& image,
                                 portsem::PortPair ports, double gamma_db, Direction direction,
                                 int p_d_local, Rng* noise_rng);

// ---- Checkpoints ----

nlohmann::json model_to_json(const SpatModel& model);
SpatModel model_from_json(const nlohmann::json& j);

}  // namespace spat::codec
