#include "spat/codec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "spat/checkpoint.hpp"

namespace spat::codec {

namespace {

constexpr double kSnrNorm = 20.0;
constexpr double kPowerEps = 1e-12;

using numkit::Activation;
using numkit::DenseNet;
using numkit::ForwardTrace;

}  // namespace

ToyImage null_image(int height, int width, int channels) {
  ToyImage img;
  img.height = height;
  img.width = width;
  img.channels = channels;
  img.pixels.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width) *
                        static_cast<std::size_t>(channels),
                    0.0);
  return img;
}

void CodecConfig::validate() const {
  if (m_t != rate.c_max) throw std::invalid_argument("CodecConfig: m_t must equal rate.c_max");
  if (!rate.valid()) throw std::invalid_argument("CodecConfig: invalid rate config");
  if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0) {
    throw std::invalid_argument("CodecConfig: loss weights must be non-negative");
  }
  if (pool_groups == 0 || static_cast<std::size_t>(m_t) % pool_groups != 0) {
    throw std::invalid_argument("CodecConfig: pool_groups must divide m_t");
  }
  if (n_ports < 2) throw std::invalid_argument("CodecConfig: need at least two ports");
  if (image_len() == 0) throw std::invalid_argument("CodecConfig: empty image");
}

SpatModel make_model(const CodecConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SpatModel m;
  m.config = cfg;
  std::size_t img = cfg.image_len();
  std::size_t mt = static_cast<std::size_t>(cfg.m_t);

  Rng r0(Rng::derive(seed, 0));
  m.encoder = DenseNet::glorot({img, static_cast<std::size_t>(cfg.enc_hidden), mt},
                               {Activation::relu, Activation::linear}, r0);
  Rng r1(Rng::derive(seed, 1));
  m.decoder = DenseNet::glorot({mt, static_cast<std::size_t>(cfg.dec_hidden), img},
                               {Activation::relu, Activation::sigmoid}, r1);

  Rng r2(Rng::derive(seed, 2));
  m.port_encoder.src_table = portsem::PortEmbeddingTable::make(cfg.n_ports, cfg.port_dim, r2);
  m.port_encoder.dst_table = portsem::PortEmbeddingTable::make(cfg.n_ports, cfg.port_dim, r2);
  m.port_encoder.src_branch = DenseNet::glorot(
      {static_cast<std::size_t>(cfg.port_dim), static_cast<std::size_t>(cfg.branch_hidden), mt},
      {Activation::relu, Activation::sigmoid}, r2);
  m.port_encoder.dst_branch = DenseNet::glorot(
      {static_cast<std::size_t>(cfg.port_dim), static_cast<std::size_t>(cfg.branch_hidden), mt},
      {Activation::relu, Activation::sigmoid}, r2);

  Rng r3(Rng::derive(seed, 3));
  m.modnet_tx = DenseNet::glorot({1, static_cast<std::size_t>(cfg.modnet_hidden), 2 * mt},
                                 {Activation::relu, Activation::sigmoid}, r3);
  m.modnet_tx.zero_final_layer();
  m.modnet_rx = DenseNet::glorot({1, static_cast<std::size_t>(cfg.modnet_hidden), 2 * mt},
                                 {Activation::relu, Activation::sigmoid}, r3);
  m.modnet_rx.zero_final_layer();

  Rng r4(Rng::derive(seed, 4));
  m.identifier.attention = DenseNet::glorot({mt, mt}, {Activation::sigmoid}, r4);
  m.identifier.trunk = DenseNet::glorot({mt, static_cast<std::size_t>(cfg.id_hidden)},
                                        {Activation::relu}, r4);
  m.identifier.head_src =
      DenseNet::glorot({static_cast<std::size_t>(cfg.id_hidden),
                        static_cast<std::size_t>(cfg.n_ports)},
                       {Activation::linear}, r4);
  m.identifier.head_dst =
      DenseNet::glorot({static_cast<std::size_t>(cfg.id_hidden),
                        static_cast<std::size_t>(cfg.n_ports)},
                       {Activation::linear}, r4);

  Rng r5(Rng::derive(seed, 5));
  m.gate.table = portsem::PortEmbeddingTable::make(cfg.n_ports, cfg.gate_port_dim, r5);
  m.gate.mlp = DenseNet::glorot({cfg.pool_groups + static_cast<std::size_t>(cfg.gate_port_dim),
                                 static_cast<std::size_t>(cfg.gate_hidden), 2 * mt},
                                {Activation::relu, Activation::linear}, r5);
  m.gate.mlp.zero_final_layer();
  m.gate.pool_groups = cfg.pool_groups;
  m.gate.m_t = mt;

  Rng r6(Rng::derive(seed, 6));
  m.importance.snr_embed =
      DenseNet::glorot({1, static_cast<std::size_t>(cfg.snr_embed_dim)}, {Activation::relu}, r6);
  m.importance.mlp = DenseNet::glorot(
      {cfg.pool_groups + static_cast<std::size_t>(cfg.snr_embed_dim),
       static_cast<std::size_t>(cfg.imp_hidden), mt},
      {Activation::relu, Activation::sigmoid}, r6);
  m.importance.pool_groups = cfg.pool_groups;
  return m;
}

std::vector<ParamBlock> model_param_blocks(SpatModel& m) {
  std::vector<ParamBlock> blocks;
  auto add = [&blocks](const std::string& name, std::span<double> values) {
    blocks.push_back({name, values});
  };
  add("encoder", m.encoder.params());
  add("decoder", m.decoder.params());
  add("src_table", m.port_encoder.src_table.rows);
  add("dst_table", m.port_encoder.dst_table.rows);
  add("src_branch", m.port_encoder.src_branch.params());
  add("dst_branch", m.port_encoder.dst_branch.params());
  add("alphas", std::span<double>(m.port_encoder.alpha.data(), 2));
  add("modnet_tx", m.modnet_tx.params());
  add("modnet_rx", m.modnet_rx.params());
  add("id_attention", m.identifier.attention.params());
  add("id_trunk", m.identifier.trunk.params());
  add("id_head_src", m.identifier.head_src.params());
  add("id_head_dst", m.identifier.head_dst.params());
  add("gate_table", m.gate.table.rows);
  add("gate_mlp", m.gate.mlp.params());
  add("imp_snr", m.importance.snr_embed.params());
  add("imp_mlp", m.importance.mlp.params());
  return blocks;
}

ModelGrads::ModelGrads(SpatModel& model) {
  for (const ParamBlock& b : model_param_blocks(model)) {
    blocks.emplace_back(b.values.size(), 0.0);
  }
}

void ModelGrads::zero() {
  for (auto& b : blocks) std::fill(b.begin(), b.end(), 0.0);
}

std::vector<double> encode(const ToyImage& image, const DenseNet& encoder) {
  return encoder.forward(image.pixels);
}

ToyImage decode(std::span<const double> feature, const DenseNet& decoder, int height, int width,
                int channels) {
  ToyImage img;
  img.height = height;
  img.width = width;
  img.channels = channels;
  img.pixels = decoder.forward(feature);
  if (img.pixels.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width) *
                               static_cast<std::size_t>(channels)) {
    throw std::invalid_argument("decode: decoder output does not match image dims");
  }
  return img;
}

namespace {

// Maps the sigmoid-terminated modulation head output to bounded scale/shift
// pairs: scale_i = (2 y_i - 1) * bound, shift_i = (2 y_{m+i} - 1) * bound.
void film_params(std::span<const double> raw, double bound, std::vector<double>& scale,
                 std::vector<double>& shift) {
  std::size_t m = raw.size() / 2;
  scale.resize(m);
  shift.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    scale[i] = (2.0 * raw[i] - 1.0) * bound;
    shift[i] = (2.0 * raw[m + i] - 1.0) * bound;
  }
}

}  // namespace

std::vector<double> channel_modnet(std::span<const double> feature, double gamma_db,
                                   const DenseNet& net, double bound) {
  if (!std::isfinite(gamma_db)) throw std::invalid_argument("channel_modnet: non-finite SNR");
  std::vector<double> raw = net.forward(std::vector<double>{gamma_db / kSnrNorm});
  if (raw.size() != 2 * feature.size()) {
    throw std::invalid_argument("channel_modnet: head width does not match feature");
  }
  std::vector<double> scale, shift;
  film_params(raw, bound, scale, shift);
  std::vector<double> out(feature.size());
  for (std::size_t i = 0; i < feature.size(); ++i) {
    out[i] = feature[i] * (1.0 + scale[i]) + shift[i];
  }
  return out;
}

double psnr(const ToyImage& a, const ToyImage& b) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels) {
    throw std::invalid_argument("psnr: image dims differ");
  }
  double mse = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    double d = a.pixels[i] - b.pixels[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.pixels.size());
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

TrainContext TrainContext::noiseless(double gamma_db, std::size_t batch, std::size_t m_t) {
  TrainContext ctx;
  ctx.gamma_db = gamma_db;
  ctx.noise_raw.assign(batch, std::vector<double>(m_t, 0.0));
  ctx.wrong_ports.assign(batch, 0);
  return ctx;
}

TrainContext TrainContext::sample(double gamma_db, std::size_t batch, std::size_t m_t,
                                  Direction direction, std::span<const Sample> samples,
                                  int n_ports, Rng& rng) {
  TrainContext ctx;
  ctx.gamma_db = gamma_db;
  ctx.noise_raw.resize(batch);
  ctx.wrong_ports.assign(batch, 0);
  for (std::size_t i = 0; i < batch; ++i) {
    ctx.noise_raw[i].resize(m_t);
    for (double& n : ctx.noise_raw[i]) n = rng.gaussian();
    // Half the samples additionally see impulsive corruption, approximating
    // the heavy-tailed errors the digital chain produces when quantized code
    // bits flip. The hit rate tapers with SNR like the bit-flip probability;
    // impulse amplitude stays at signal scale (the raw draws are rescaled by
    // 10^(-snr/20) downstream, hence the 1/sigma factor here).
    if (rng.uniform() < 0.5) {
      double sigma = std::pow(10.0, -gamma_db / 20.0);
      double hit_rate = 0.2 * std::pow(10.0, (4.0 - gamma_db) / 10.0);
      double amplitude = 2.5 / sigma;
      for (double& n : ctx.noise_raw[i]) {
        if (rng.uniform() < hit_rate) n = rng.gaussian() * amplitude;
      }
    }
    if (direction == Direction::downlink && i < samples.size()) {
      int wrong = static_cast<int>(rng.integer(static_cast<std::uint64_t>(n_ports - 1)));
      if (wrong >= samples[i].ports.dst) ++wrong;
      ctx.wrong_ports[i] = wrong;
    }
  }
  return ctx;
}

namespace {

// Everything shared by all samples of one batch (the SNR is batch-constant).
struct BatchCommon {
  int c_r = 0;
  double sigma = 0.0;  // 10^(-snr/20)
  ForwardTrace modtx_trace;
  std::vector<double> tx_scale, tx_shift;
  ForwardTrace modrx_trace;
  std::vector<double> rx_scale, rx_shift;
  ForwardTrace snr_trace;
  std::vector<double> snr_emb;
};

struct DecodePath {
  int port = -1;                        // gate condition (downlink only)
  std::vector<double> gate_input;       // pooled ++ embedding
  ForwardTrace gate_trace;
  std::vector<double> gate_gamma, gate_beta;
  std::vector<double> z_tilde;          // gated feature (downlink) or z_hat (uplink)
  std::vector<double> x_hat;
  ForwardTrace dec_trace;
  std::vector<double> s_hat;
};

struct SamplePass {
  ForwardTrace enc_trace;
  std::vector<double> x;
  ForwardTrace src_branch_trace, dst_branch_trace;
  std::vector<double> b_src, b_dst;  // raw sigmoid branch outputs
  std::vector<double> u;
  std::vector<double> v;
  std::vector<double> imp_input;
  ForwardTrace imp_trace;
  std::vector<double> w;
  std::vector<std::uint8_t> mask;
  double r = 0.0;
  std::vector<double> z_sel;  // full length; v*w on selected positions
  std::vector<double> z_hat;
  ForwardTrace att_trace;
  std::vector<double> att, attended;
  ForwardTrace trunk_trace;
  std::vector<double> latent;
  ForwardTrace head_src_trace, head_dst_trace;
  std::vector<double> src_logits, dst_logits;
  DecodePath primary;  // uplink reconstruction or downlink target path
  DecodePath wrong;    // downlink non-target path
};

BatchCommon batch_common(const SpatModel& m, double gamma_db) {
  BatchCommon bc;
  bc.c_r = ratectl::budget_from_snr(gamma_db, m.config.rate);
  bc.sigma = std::pow(10.0, -gamma_db / 20.0);
  std::vector<double> gamma_in = {gamma_db / kSnrNorm};
  bc.modtx_trace = m.modnet_tx.forward_trace(gamma_in);
  film_params(bc.modtx_trace.output, m.config.modnet_bound, bc.tx_scale, bc.tx_shift);
  bc.modrx_trace = m.modnet_rx.forward_trace(gamma_in);
  film_params(bc.modrx_trace.output, m.config.modnet_bound, bc.rx_scale, bc.rx_shift);
  bc.snr_trace = m.importance.snr_embed.forward_trace(gamma_in);
  bc.snr_emb = bc.snr_trace.output;
  return bc;
}

void forward_decode_path(const SpatModel& m, const BatchCommon& bc,
                         std::span<const double> z_hat, int gate_port, DecodePath& path) {
  std::size_t mt = static_cast<std::size_t>(m.config.m_t);
  path.port = gate_port;
  if (gate_port >= 0) {
    std::vector<double> pooled = numkit::group_mean_pool(z_hat, m.gate.pool_groups);
    auto emb = m.gate.table.row(gate_port);
    pooled.insert(pooled.end(), emb.begin(), emb.end());
    path.gate_input = pooled;
    path.gate_trace = m.gate.mlp.forward_trace(path.gate_input);
    const std::vector<double>& mod = path.gate_trace.output;
    path.gate_gamma.assign(mod.begin(), mod.begin() + static_cast<std::ptrdiff_t>(mt));
    path.gate_beta.assign(mod.begin() + static_cast<std::ptrdiff_t>(mt), mod.end());
    path.z_tilde.resize(mt);
    for (std::size_t i = 0; i < mt; ++i) {
      path.z_tilde[i] = z_hat[i] * (1.0 + path.gate_gamma[i]) + path.gate_beta[i];
    }
  } else {
    path.z_tilde.assign(z_hat.begin(), z_hat.end());
  }
  path.x_hat.resize(mt);
  for (std::size_t i = 0; i < mt; ++i) {
    path.x_hat[i] = path.z_tilde[i] * (1.0 + bc.rx_scale[i]) + bc.rx_shift[i];
  }
  path.dec_trace = m.decoder.forward_trace(path.x_hat);
  path.s_hat = path.dec_trace.output;
}

void forward_sample(const SpatModel& m, const BatchCommon& bc, const Sample& sample,
                    std::span<const double> noise_raw, Direction direction, int wrong_port,
                    SamplePass& sp) {
  const CodecConfig& cfg = m.config;
  std::size_t mt = static_cast<std::size_t>(cfg.m_t);
  if (sample.image.pixels.size() != cfg.image_len()) {
    throw std::invalid_argument("forward_sample: image dims mismatch");
  }

  sp.enc_trace = m.encoder.forward_trace(sample.image.pixels);
  sp.x = sp.enc_trace.output;

  sp.src_branch_trace =
      m.port_encoder.src_branch.forward_trace(m.port_encoder.src_table.row(sample.ports.src));
  sp.dst_branch_trace =
      m.port_encoder.dst_branch.forward_trace(m.port_encoder.dst_table.row(sample.ports.dst));
  sp.b_src = sp.src_branch_trace.output;
  sp.b_dst = sp.dst_branch_trace.output;

  sp.u.resize(mt);
  for (std::size_t i = 0; i < mt; ++i) {
    double bias = m.port_encoder.alpha[0] * portsem::branch_to_bias(sp.b_src[i]) +
                  m.port_encoder.alpha[1] * portsem::branch_to_bias(sp.b_dst[i]);
    sp.u[i] = sp.x[i] + bias;
  }

  sp.v.resize(mt);
  for (std::size_t i = 0; i < mt; ++i) {
    sp.v[i] = sp.u[i] * (1.0 + bc.tx_scale[i]) + bc.tx_shift[i];
  }

  sp.imp_input = numkit::group_mean_pool(sp.v, m.importance.pool_groups);
  sp.imp_input.insert(sp.imp_input.end(), bc.snr_emb.begin(), bc.snr_emb.end());
  sp.imp_trace = m.importance.mlp.forward_trace(sp.imp_input);
  sp.w = sp.imp_trace.output;

  sp.mask = ratectl::topk_select(sp.v, sp.w, bc.c_r).mask;

  // Soft-scaled transmission on the hard-selected channels; additive noise is
  // scaled by the transmitted signal power so the SNR matches gamma.
  sp.z_sel.assign(mt, 0.0);
  double power = 0.0;
  for (std::size_t i = 0; i < mt; ++i) {
    if (sp.mask[i]) {
      sp.z_sel[i] = sp.v[i] * sp.w[i];
      power += sp.z_sel[i] * sp.z_sel[i];
    }
  }
  power /= static_cast<double>(bc.c_r);
  sp.r = std::sqrt(power + kPowerEps);
  sp.z_hat.assign(mt, 0.0);
  for (std::size_t i = 0; i < mt; ++i) {
    if (sp.mask[i]) sp.z_hat[i] = sp.z_sel[i] + sp.r * bc.sigma * noise_raw[i];
  }

  sp.att_trace = m.identifier.attention.forward_trace(sp.z_hat);
  sp.att = sp.att_trace.output;
  sp.attended.resize(mt);
  for (std::size_t i = 0; i < mt; ++i) sp.attended[i] = sp.z_hat[i] * sp.att[i];
  sp.trunk_trace = m.identifier.trunk.forward_trace(sp.attended);
  sp.latent = sp.trunk_trace.output;
  sp.head_src_trace = m.identifier.head_src.forward_trace(sp.latent);
  sp.src_logits = sp.head_src_trace.output;
  if (direction == Direction::uplink) {
    sp.head_dst_trace = m.identifier.head_dst.forward_trace(sp.latent);
    sp.dst_logits = sp.head_dst_trace.output;
  }

  if (direction == Direction::uplink) {
    forward_decode_path(m, bc, sp.z_hat, -1, sp.primary);
  } else {
    forward_decode_path(m, bc, sp.z_hat, sample.ports.dst, sp.primary);
    forward_decode_path(m, bc, sp.z_hat, wrong_port, sp.wrong);
  }
}

// Gradient block indices, aligned with model_param_blocks().
enum BlockIndex : std::size_t {
  kEncoder = 0,
  kDecoder,
  kSrcTable,
  kDstTable,
  kSrcBranch,
  kDstBranch,
  kAlphas,
  kModnetTx,
  kModnetRx,
  kIdAttention,
  kIdTrunk,
  kIdHeadSrc,
  kIdHeadDst,
  kGateTable,
  kGateMlp,
  kImpSnr,
  kImpMlp,
};

// Backward through one decode path; accumulates into grads and g_z_hat.
void backward_decode_path(const SpatModel& m, const BatchCommon& bc, const DecodePath& path,
                          std::span<const double> z_hat, std::span<const double> g_s_hat,
                          ModelGrads& grads, std::vector<double>& g_z_hat,
                          std::vector<double>& g_modrx_raw) {
  std::size_t mt = static_cast<std::size_t>(m.config.m_t);
  std::vector<double> g_x_hat =
      m.decoder.backward(path.dec_trace, g_s_hat, grads.block(kDecoder));

  // Receiver-side FiLM: x_hat = z~ * (1 + scale) + shift.
  std::vector<double> g_z_tilde(mt);
  for (std::size_t i = 0; i < mt; ++i) {
    g_z_tilde[i] = g_x_hat[i] * (1.0 + bc.rx_scale[i]);
    g_modrx_raw[i] += 2.0 * m.config.modnet_bound * g_x_hat[i] * path.z_tilde[i];
    g_modrx_raw[mt + i] += 2.0 * m.config.modnet_bound * g_x_hat[i];
  }

  if (path.port < 0) {
    for (std::size_t i = 0; i < mt; ++i) g_z_hat[i] += g_z_tilde[i];
    return;
  }

  // Gate FiLM: z~ = z_hat * (1 + gamma) + beta.
  std::vector<double> g_mod(2 * mt);
  for (std::size_t i = 0; i < mt; ++i) {
    g_z_hat[i] += g_z_tilde[i] * (1.0 + path.gate_gamma[i]);
    g_mod[i] = g_z_tilde[i] * z_hat[i];
    g_mod[mt + i] = g_z_tilde[i];
  }
  std::vector<double> g_gate_in =
      m.gate.mlp.backward(path.gate_trace, g_mod, grads.block(kGateMlp));
  numkit::group_mean_pool_backward(
      std::span<const double>(g_gate_in.data(), m.gate.pool_groups), mt, g_z_hat);
  std::span<double> g_table = grads.block(kGateTable);
  std::size_t dim = static_cast<std::size_t>(m.gate.table.dim);
  for (std::size_t i = 0; i < dim; ++i) {
    g_table[static_cast<std::size_t>(path.port) * dim + i] += g_gate_in[m.gate.pool_groups + i];
  }
}

}  // namespace

LossBreakdown total_loss_and_grads(const SpatModel& model, std::span<const Sample> batch,
                                   Direction direction, const TrainContext& ctx,
                                   ModelGrads& grads) {
  const CodecConfig& cfg = model.config;
  if (batch.empty()) throw std::invalid_argument("total_loss: empty batch");
  if (ctx.noise_raw.size() < batch.size()) {
    throw std::invalid_argument("total_loss: context smaller than batch");
  }
  std::size_t mt = static_cast<std::size_t>(cfg.m_t);
  double inv_b = 1.0 / static_cast<double>(batch.size());
  BatchCommon bc = batch_common(model, ctx.gamma_db);
  ToyImage s_null = null_image(cfg.image_h, cfg.image_w, cfg.channels);

  LossBreakdown bd;
  std::vector<double> g_modtx_raw, g_modrx_raw;
  SamplePass sp;
  for (std::size_t bi = 0; bi < batch.size(); ++bi) {
    const Sample& sample = batch[bi];
    sp = SamplePass{};
    forward_sample(model, bc, sample, ctx.noise_raw[bi], direction,
                   direction == Direction::downlink ? ctx.wrong_ports[bi] : -1, sp);

    // ---- losses ----
    // Target-path reconstruction is compared against the source image in both
    // directions; the downlink non-target path is pulled toward the null image.
    numkit::LossResult rec_primary = numkit::mse_loss(sp.primary.s_hat, sample.image.pixels);
    double rec_i = rec_primary.value;
    numkit::LossResult rec_wrong;
    if (direction == Direction::downlink) {
      rec_wrong = numkit::mse_loss(sp.wrong.s_hat, s_null.pixels);
      rec_i += rec_wrong.value;
    }
    numkit::LossResult xent_src =
        numkit::softmax_xent(sp.src_logits, static_cast<std::size_t>(sample.ports.src));
    double port_i = xent_src.value;
    numkit::LossResult xent_dst;
    if (direction == Direction::uplink) {
      xent_dst = numkit::softmax_xent(sp.dst_logits, static_cast<std::size_t>(sample.ports.dst));
      port_i += xent_dst.value;
    }
    double rate_i = ratectl::rate_loss(sp.w, bc.c_r, cfg.rate_alpha, cfg.rate_beta, cfg.m_t);

    bd.rec += rec_i * inv_b;
    bd.port += port_i * inv_b;
    bd.rate += rate_i * inv_b;

    // ---- backward ----
    g_modtx_raw.assign(2 * mt, 0.0);
    g_modrx_raw.assign(2 * mt, 0.0);
    std::vector<double> g_z_hat(mt, 0.0);

    // Reconstruction paths.
    std::vector<double> g_s(rec_primary.grad.size());
    for (std::size_t i = 0; i < g_s.size(); ++i) g_s[i] = cfg.lambda1 * inv_b * rec_primary.grad[i];
    backward_decode_path(model, bc, sp.primary, sp.z_hat, g_s, grads, g_z_hat, g_modrx_raw);
    if (direction == Direction::downlink) {
      for (std::size_t i = 0; i < g_s.size(); ++i) g_s[i] = cfg.lambda1 * inv_b * rec_wrong.grad[i];
      backward_decode_path(model, bc, sp.wrong, sp.z_hat, g_s, grads, g_z_hat, g_modrx_raw);
    }

    // Identification heads.
    std::vector<double> g_logits(xent_src.grad.size());
    for (std::size_t i = 0; i < g_logits.size(); ++i) {
      g_logits[i] = cfg.lambda2 * inv_b * xent_src.grad[i];
    }
    std::vector<double> g_latent =
        model.identifier.head_src.backward(sp.head_src_trace, g_logits, grads.block(kIdHeadSrc));
    if (direction == Direction::uplink) {
      for (std::size_t i = 0; i < g_logits.size(); ++i) {
        g_logits[i] = cfg.lambda2 * inv_b * xent_dst.grad[i];
      }
      std::vector<double> g_latent_dst =
          model.identifier.head_dst.backward(sp.head_dst_trace, g_logits, grads.block(kIdHeadDst));
      for (std::size_t i = 0; i < g_latent.size(); ++i) g_latent[i] += g_latent_dst[i];
    }
    std::vector<double> g_attended =
        model.identifier.trunk.backward(sp.trunk_trace, g_latent, grads.block(kIdTrunk));
    std::vector<double> g_att(mt);
    for (std::size_t i = 0; i < mt; ++i) {
      g_z_hat[i] += g_attended[i] * sp.att[i];
      g_att[i] = g_attended[i] * sp.z_hat[i];
    }
    std::vector<double> g_z_from_att =
        model.identifier.attention.backward(sp.att_trace, g_att, grads.block(kIdAttention));
    for (std::size_t i = 0; i < mt; ++i) g_z_hat[i] += g_z_from_att[i];

    // Channel: z_hat = z_sel + r * sigma * n (selected positions only), with
    // r = sqrt(mean_sel(z_sel^2) + eps); the noise-scale path is kept exact.
    std::vector<double> g_v(mt, 0.0);
    std::vector<double> g_w(mt, 0.0);
    double dot = 0.0;
    for (std::size_t i = 0; i < mt; ++i) {
      if (sp.mask[i]) dot += g_z_hat[i] * bc.sigma * ctx.noise_raw[bi][i];
    }
    double r_coeff = dot / (static_cast<double>(bc.c_r) * sp.r);
    for (std::size_t i = 0; i < mt; ++i) {
      if (!sp.mask[i]) continue;
      double g_zsel = g_z_hat[i] + r_coeff * sp.z_sel[i];
      g_v[i] += g_zsel * sp.w[i];
      g_w[i] += g_zsel * sp.v[i];
    }

    // Rate regularizer.
    ratectl::rate_loss_backward(sp.w, bc.c_r, cfg.rate_alpha, cfg.rate_beta, cfg.m_t,
                                cfg.lambda3 * inv_b, g_w);

    // Importance head: w = mlp(pool(v) ++ snr_emb).
    std::vector<double> g_imp_in =
        model.importance.mlp.backward(sp.imp_trace, g_w, grads.block(kImpMlp));
    numkit::group_mean_pool_backward(
        std::span<const double>(g_imp_in.data(), model.importance.pool_groups), mt, g_v);
    std::vector<double> g_emb(g_imp_in.begin() + static_cast<std::ptrdiff_t>(
                                                     model.importance.pool_groups),
                              g_imp_in.end());
    model.importance.snr_embed.backward(bc.snr_trace, g_emb, grads.block(kImpSnr));

    // Transmitter FiLM: v = u * (1 + scale) + shift.
    std::vector<double> g_u(mt);
    for (std::size_t i = 0; i < mt; ++i) {
      g_u[i] = g_v[i] * (1.0 + bc.tx_scale[i]);
      g_modtx_raw[i] += 2.0 * cfg.modnet_bound * g_v[i] * sp.u[i];
      g_modtx_raw[mt + i] += 2.0 * cfg.modnet_bound * g_v[i];
    }
    model.modnet_tx.backward(bc.modtx_trace, g_modtx_raw, grads.block(kModnetTx));
    model.modnet_rx.backward(bc.modrx_trace, g_modrx_raw, grads.block(kModnetRx));

    // Port bias: u = x + alpha_s*(2 b_s - 1) + alpha_d*(2 b_d - 1).
    std::span<double> g_alpha = grads.block(kAlphas);
    std::vector<double> g_branch(mt);
    for (std::size_t i = 0; i < mt; ++i) {
      g_alpha[0] += g_u[i] * portsem::branch_to_bias(sp.b_src[i]);
      g_branch[i] = g_u[i] * model.port_encoder.alpha[0] * 2.0;
    }
    std::vector<double> g_emb_src = model.port_encoder.src_branch.backward(
        sp.src_branch_trace, g_branch, grads.block(kSrcBranch));
    for (std::size_t i = 0; i < mt; ++i) {
      g_alpha[1] += g_u[i] * portsem::branch_to_bias(sp.b_dst[i]);
      g_branch[i] = g_u[i] * model.port_encoder.alpha[1] * 2.0;
    }
    std::vector<double> g_emb_dst = model.port_encoder.dst_branch.backward(
        sp.dst_branch_trace, g_branch, grads.block(kDstBranch));
    std::size_t pdim = static_cast<std::size_t>(cfg.port_dim);
    std::span<double> g_src_table = grads.block(kSrcTable);
    std::span<double> g_dst_table = grads.block(kDstTable);
    for (std::size_t i = 0; i < pdim; ++i) {
      g_src_table[static_cast<std::size_t>(sample.ports.src) * pdim + i] += g_emb_src[i];
      g_dst_table[static_cast<std::size_t>(sample.ports.dst) * pdim + i] += g_emb_dst[i];
    }

    model.encoder.backward(sp.enc_trace, g_u, grads.block(kEncoder));
  }

  bd.total = cfg.lambda1 * bd.rec + cfg.lambda2 * bd.port + cfg.lambda3 * bd.rate;
  return bd;
}

LossBreakdown total_loss(const SpatModel& model, std::span<const Sample> batch,
                         Direction direction, const TrainContext& ctx) {
  const CodecConfig& cfg = model.config;
  if (batch.empty()) throw std::invalid_argument("total_loss: empty batch");
  if (ctx.noise_raw.size() < batch.size()) {
    throw std::invalid_argument("total_loss: context smaller than batch");
  }
  double inv_b = 1.0 / static_cast<double>(batch.size());
  BatchCommon bc = batch_common(model, ctx.gamma_db);
  ToyImage s_null = null_image(cfg.image_h, cfg.image_w, cfg.channels);

  LossBreakdown bd;
  SamplePass sp;
  for (std::size_t bi = 0; bi < batch.size(); ++bi) {
    const Sample& sample = batch[bi];
    sp = SamplePass{};
    forward_sample(model, bc, sample, ctx.noise_raw[bi], direction,
                   direction == Direction::downlink ? ctx.wrong_ports[bi] : -1, sp);
    double rec_i = numkit::mse_loss(sp.primary.s_hat, sample.image.pixels).value;
    if (direction == Direction::downlink) {
      rec_i += numkit::mse_loss(sp.wrong.s_hat, s_null.pixels).value;
    }
    double port_i =
        numkit::softmax_xent(sp.src_logits, static_cast<std::size_t>(sample.ports.src)).value;
    if (direction == Direction::uplink) {
      port_i +=
          numkit::softmax_xent(sp.dst_logits, static_cast<std::size_t>(sample.ports.dst)).value;
    }
    double rate_i = ratectl::rate_loss(sp.w, bc.c_r, cfg.rate_alpha, cfg.rate_beta, cfg.m_t);
    bd.rec += rec_i * inv_b;
    bd.port += port_i * inv_b;
    bd.rate += rate_i * inv_b;
  }
  bd.total = cfg.lambda1 * bd.rec + cfg.lambda2 * bd.port + cfg.lambda3 * bd.rate;
  return bd;
}

TrainResult train(SpatModel& model, std::span<const Sample> dataset, Direction direction,
                  const TrainOptions& options, std::uint64_t seed) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  const CodecConfig& cfg = model.config;
  Rng rng(Rng::derive(seed, 0x5EED));

  std::vector<ParamBlock> blocks = model_param_blocks(model);
  std::vector<numkit::AdamState> states(blocks.size());
  numkit::AdamConfig adam;
  adam.learning_rate = options.learning_rate;

  ModelGrads grads(model);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  result.epoch_trace.reserve(static_cast<std::size_t>(options.epochs));
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::size_t j = rng.integer(i);
      std::swap(order[i - 1], order[j]);
    }
    LossBreakdown epoch_bd;
    int batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(options.batch_size)) {
      std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
      std::vector<Sample> batch;
      batch.reserve(end - start);
      for (std::size_t k = start; k < end; ++k) batch.push_back(dataset[order[k]]);

      double gamma = rng.uniform(cfg.train_snr_low, cfg.train_snr_high);
      TrainContext ctx = TrainContext::sample(gamma, batch.size(),
                                              static_cast<std::size_t>(cfg.m_t), direction, batch,
                                              cfg.n_ports, rng);
      grads.zero();
      LossBreakdown bd = total_loss_and_grads(model, batch, direction, ctx, grads);
      if (!std::isfinite(bd.total)) {
        throw std::runtime_error("train: loss diverged (non-finite) at epoch " +
                                 std::to_string(epoch));
      }
      for (std::size_t b = 0; b < blocks.size(); ++b) {
        numkit::adam_step(blocks[b].values, grads.block(b), states[b], adam);
      }
      epoch_bd.total += bd.total;
      epoch_bd.rec += bd.rec;
      epoch_bd.port += bd.port;
      epoch_bd.rate += bd.rate;
      ++batches;
    }
    epoch_bd.total /= batches;
    epoch_bd.rec /= batches;
    epoch_bd.port /= batches;
    epoch_bd.rate /= batches;
    result.epoch_trace.push_back(epoch_bd);
  }
  return result;
}

SemanticPassResult semantic_pass(const SpatModel& model, const ToyImage& image,
                                 portsem::PortPair ports, double gamma_db, Direction direction,
                                 int p_d_local, Rng* noise_rng) {
  const CodecConfig& cfg = model.config;
  std::size_t mt = static_cast<std::size_t>(cfg.m_t);

  std::vector<double> x = encode(image, model.encoder);
  auto [e_s, e_d] = portsem::embed_ports(ports, model.port_encoder);
  std::vector<double> bias = portsem::synthesize_bias(e_s, e_d, model.port_encoder);
  std::vector<double> u = portsem::inject_ports(x, bias);
  std::vector<double> v = channel_modnet(u, gamma_db, model.modnet_tx, cfg.modnet_bound);
  std::vector<double> w = ratectl::predict_importance(v, gamma_db, model.importance);

  SemanticPassResult res;
  res.c_r = ratectl::budget_from_snr(gamma_db, cfg.rate);
  ratectl::Selection sel = ratectl::topk_select(v, w, res.c_r);

  std::vector<double> received = sel.kept;
  if (noise_rng != nullptr) {
    double power = 0.0;
    for (double z : received) power += z * z;
    power /= static_cast<double>(res.c_r);
    double scale = std::sqrt(power + kPowerEps) * std::pow(10.0, -gamma_db / 20.0);
    for (double& z : received) z += scale * noise_rng->gaussian();
  }
  res.z_hat = ratectl::zero_fill(received, sel.mask, mt);

  portsem::IdentifyResult ident = portsem::identify_ports(
      res.z_hat, model.identifier,
      direction == Direction::uplink ? portsem::LinkMode::uplink : portsem::LinkMode::downlink);
  res.predicted_src = portsem::predicted_port(ident.src_logits);
  if (direction == Direction::uplink) res.predicted_dst = portsem::predicted_port(ident.dst_logits);

  std::vector<double> feature = res.z_hat;
  if (direction == Direction::downlink) {
    feature = portsem::conditional_gate(feature, p_d_local, model.gate);
  }
  std::vector<double> x_hat = channel_modnet(feature, gamma_db, model.modnet_rx, cfg.modnet_bound);
  res.reconstruction = decode(x_hat, model.decoder, cfg.image_h, cfg.image_w, cfg.channels);
  return res;
}

namespace {

nlohmann::json table_to_json(const portsem::PortEmbeddingTable& t) {
  return {{"n_ports", t.n_ports}, {"dim", t.dim}, {"rows", t.rows}};
}

portsem::PortEmbeddingTable table_from_json(const nlohmann::json& j) {
  portsem::PortEmbeddingTable t;
  t.n_ports = j.at("n_ports").get<int>();
  t.dim = j.at("dim").get<int>();
  t.rows = j.at("rows").get<std::vector<double>>();
  if (t.rows.size() != static_cast<std::size_t>(t.n_ports) * static_cast<std::size_t>(t.dim)) {
    throw std::runtime_error("checkpoint: embedding table size mismatch");
  }
  return t;
}

}  // namespace

nlohmann::json model_to_json(const SpatModel& m) {
  const CodecConfig& c = m.config;
  nlohmann::json j;
  j["version"] = 1;
  j["config"] = {{"m_t", c.m_t},
                 {"image_h", c.image_h},
                 {"image_w", c.image_w},
                 {"channels", c.channels},
                 {"enc_hidden", c.enc_hidden},
                 {"dec_hidden", c.dec_hidden},
                 {"branch_hidden", c.branch_hidden},
                 {"id_hidden", c.id_hidden},
                 {"modnet_hidden", c.modnet_hidden},
                 {"gate_hidden", c.gate_hidden},
                 {"imp_hidden", c.imp_hidden},
                 {"snr_embed_dim", c.snr_embed_dim},
                 {"n_ports", c.n_ports},
                 {"port_dim", c.port_dim},
                 {"gate_port_dim", c.gate_port_dim},
                 {"pool_groups", c.pool_groups},
                 {"lambda1", c.lambda1},
                 {"lambda2", c.lambda2},
                 {"lambda3", c.lambda3},
                 {"rate_alpha", c.rate_alpha},
                 {"rate_beta", c.rate_beta},
                 {"modnet_bound", c.modnet_bound},
                 {"train_snr_low", c.train_snr_low},
                 {"train_snr_high", c.train_snr_high},
                 {"rate_c_min", c.rate.c_min},
                 {"rate_c_max", c.rate.c_max},
                 {"rate_gamma_low", c.rate.gamma_low},
                 {"rate_gamma_high", c.rate.gamma_high},
                 {"rate_tau", c.rate.tau}};
  j["encoder"] = numkit::net_to_json(m.encoder);
  j["decoder"] = numkit::net_to_json(m.decoder);
  j["src_table"] = table_to_json(m.port_encoder.src_table);
  j["dst_table"] = table_to_json(m.port_encoder.dst_table);
  j["src_branch"] = numkit::net_to_json(m.port_encoder.src_branch);
  j["dst_branch"] = numkit::net_to_json(m.port_encoder.dst_branch);
  j["alphas"] = m.port_encoder.alpha;
  j["modnet_tx"] = numkit::net_to_json(m.modnet_tx);
  j["modnet_rx"] = numkit::net_to_json(m.modnet_rx);
  j["id_attention"] = numkit::net_to_json(m.identifier.attention);
  j["id_trunk"] = numkit::net_to_json(m.identifier.trunk);
  j["id_head_src"] = numkit::net_to_json(m.identifier.head_src);
  j["id_head_dst"] = numkit::net_to_json(m.identifier.head_dst);
  j["gate_table"] = table_to_json(m.gate.table);
  j["gate_mlp"] = numkit::net_to_json(m.gate.mlp);
  j["imp_snr"] = numkit::net_to_json(m.importance.snr_embed);
  j["imp_mlp"] = numkit::net_to_json(m.importance.mlp);
  return j;
}

SpatModel model_from_json(const nlohmann::json& j) {
  if (j.at("version").get<int>() != 1) throw std::runtime_error("checkpoint: unknown version");
  const nlohmann::json& c = j.at("config");
  CodecConfig cfg;
  cfg.m_t = c.at("m_t").get<int>();
  cfg.image_h = c.at("image_h").get<int>();
  cfg.image_w = c.at("image_w").get<int>();
  cfg.channels = c.at("channels").get<int>();
  cfg.enc_hidden = c.at("enc_hidden").get<int>();
  cfg.dec_hidden = c.at("dec_hidden").get<int>();
  cfg.branch_hidden = c.at("branch_hidden").get<int>();
  cfg.id_hidden = c.at("id_hidden").get<int>();
  cfg.modnet_hidden = c.at("modnet_hidden").get<int>();
  cfg.gate_hidden = c.at("gate_hidden").get<int>();
  cfg.imp_hidden = c.at("imp_hidden").get<int>();
  cfg.snr_embed_dim = c.at("snr_embed_dim").get<int>();
  cfg.n_ports = c.at("n_ports").get<int>();
  cfg.port_dim = c.at("port_dim").get<int>();
  cfg.gate_port_dim = c.at("gate_port_dim").get<int>();
  cfg.pool_groups = c.at("pool_groups").get<std::size_t>();
  cfg.lambda1 = c.at("lambda1").get<double>();
  cfg.lambda2 = c.at("lambda2").get<double>();
  cfg.lambda3 = c.at("lambda3").get<double>();
  cfg.rate_alpha = c.at("rate_alpha").get<double>();
  cfg.rate_beta = c.at("rate_beta").get<double>();
  cfg.modnet_bound = c.at("modnet_bound").get<double>();
  cfg.train_snr_low = c.at("train_snr_low").get<double>();
  cfg.train_snr_high = c.at("train_snr_high").get<double>();
  cfg.rate.c_min = c.at("rate_c_min").get<int>();
  cfg.rate.c_max = c.at("rate_c_max").get<int>();
  cfg.rate.gamma_low = c.at("rate_gamma_low").get<double>();
  cfg.rate.gamma_high = c.at("rate_gamma_high").get<double>();
  cfg.rate.tau = c.at("rate_tau").get<double>();

  SpatModel m;
  m.config = cfg;
  m.encoder = numkit::net_from_json(j.at("encoder"));
  m.decoder = numkit::net_from_json(j.at("decoder"));
  m.port_encoder.src_table = table_from_json(j.at("src_table"));
  m.port_encoder.dst_table = table_from_json(j.at("dst_table"));
  m.port_encoder.src_branch = numkit::net_from_json(j.at("src_branch"));
  m.port_encoder.dst_branch = numkit::net_from_json(j.at("dst_branch"));
  auto alphas = j.at("alphas").get<std::vector<double>>();
  if (alphas.size() != 2) throw std::runtime_error("checkpoint: bad alphas");
  m.port_encoder.alpha = {alphas[0], alphas[1]};
  m.modnet_tx = numkit::net_from_json(j.at("modnet_tx"));
  m.modnet_rx = numkit::net_from_json(j.at("modnet_rx"));
  m.identifier.attention = numkit::net_from_json(j.at("id_attention"));
  m.identifier.trunk = numkit::net_from_json(j.at("id_trunk"));
  m.identifier.head_src = numkit::net_from_json(j.at("id_head_src"));
  m.identifier.head_dst = numkit::net_from_json(j.at("id_head_dst"));
  m.gate.table = table_from_json(j.at("gate_table"));
  m.gate.mlp = numkit::net_from_json(j.at("gate_mlp"));
  m.gate.pool_groups = cfg.pool_groups;
  m.gate.m_t = static_cast<std::size_t>(cfg.m_t);
  m.importance.snr_embed = numkit::net_from_json(j.at("imp_snr"));
  m.importance.mlp = numkit::net_from_json(j.at("imp_mlp"));
  m.importance.pool_groups = cfg.pool_groups;
  return m;
}

}  // namespace spat::codec
