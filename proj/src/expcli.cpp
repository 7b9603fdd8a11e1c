#include "spat/expcli.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "spat/checkpoint.hpp"
#include "spat/phylink.hpp"
#include "spat/ratectl.hpp"

namespace spat::expcli {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string fmt_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

void apply_key_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  auto as_double = [&value]() { return std::stod(value); };
  auto as_int = [&value]() { return std::stoi(value); };
  auto as_u64 = [&value]() { return static_cast<std::uint64_t>(std::stoull(value)); };
  auto as_double_list = [&value]() {
    std::vector<double> out;
    for (const std::string& item : split(value, ',')) {
      if (!trim(item).empty()) out.push_back(std::stod(trim(item)));
    }
    return out;
  };

  if (key == "kind") {
    cfg.kind = value;
  } else if (key == "seed") {
    cfg.seed = as_u64();
  } else if (key == "out") {
    cfg.out_dir = value;
  } else if (key == "protocols") {
    cfg.protocols.clear();
    for (const std::string& p : split(value, ',')) {
      if (!trim(p).empty()) cfg.protocols.push_back(transport::protocol_from_name(trim(p)));
    }
  } else if (key == "snr") {
    cfg.snr_grid = as_double_list();
  } else if (key == "trials") {
    cfg.latency_trials = as_int();
  } else if (key == "epochs") {
    cfg.train_options.epochs = as_int();
  } else if (key == "batch") {
    cfg.train_options.batch_size = as_int();
  } else if (key == "lr") {
    cfg.train_options.learning_rate = as_double();
  } else if (key == "train_images") {
    cfg.train_images = as_int();
  } else if (key == "test_images") {
    cfg.test_images = as_int();
  } else if (key == "n_ports") {
    cfg.codec_cfg.n_ports = as_int();
  } else if (key == "image_size") {
    cfg.codec_cfg.image_h = as_int();
    cfg.codec_cfg.image_w = as_int();
  } else if (key == "m_t") {
    cfg.codec_cfg.m_t = as_int();
    cfg.codec_cfg.rate.c_max = as_int();
  } else if (key == "c_min") {
    cfg.codec_cfg.rate.c_min = as_int();
  } else if (key == "tau") {
    cfg.codec_cfg.rate.tau = as_double();
  } else if (key == "gamma_low") {
    cfg.codec_cfg.rate.gamma_low = as_double();
  } else if (key == "gamma_high") {
    cfg.codec_cfg.rate.gamma_high = as_double();
  } else if (key == "quant_bits") {
    cfg.quant_bits = as_int();
  } else if (key == "mod_order") {
    cfg.mod_order = as_int();
  } else if (key == "packet_bits") {
    cfg.packet_bits = static_cast<std::size_t>(as_int());
  } else if (key == "interleaver_seed") {
    cfg.interleaver_seed = as_u64();
  } else if (key == "loss_prob") {
    cfg.latency.loss_prob = as_double();
  } else if (key == "rate_bps") {
    cfg.latency.rate_bps = as_double();
  } else if (key == "rto_ms") {
    cfg.latency.rto_ms = as_double();
  } else if (key == "max_retx") {
    cfg.latency.max_retx = as_int();
  } else if (key == "delay_mean_ms") {
    cfg.latency.delay_mean_ms = as_double();
  } else if (key == "delay_std_ms") {
    cfg.latency.delay_std_ms = as_double();
  } else if (key == "delay_min_ms") {
    cfg.latency.delay_min_ms = as_double();
  } else if (key == "payload_bits") {
    cfg.latency.payload_bits = as_int();
  } else if (key == "port_bits") {
    cfg.latency.port_bits = as_int();
  } else if (key == "ckpt_uplink") {
    cfg.checkpoint_uplink = value;
  } else if (key == "ckpt_downlink") {
    cfg.checkpoint_downlink = value;
  } else if (key == "ber_bits") {
    cfg.ber_bits_per_point = std::stol(value);
  } else if (key == "ber_snr") {
    cfg.ber_snr_grid = as_double_list();
  } else {
    throw std::invalid_argument("unknown config key: " + key);
  }
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  ExperimentConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key=value");
    }
    apply_key_value(cfg, trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
  }
  return cfg;
}

std::string canonical_text(const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> kv;
  auto add = [&kv](const std::string& k, const std::string& v) { kv.emplace_back(k, v); };
  add("kind", cfg.kind);
  add("seed", std::to_string(cfg.seed));
  std::string protos;
  for (std::size_t i = 0; i < cfg.protocols.size(); ++i) {
    if (i) protos += ",";
    protos += transport::protocol_name(cfg.protocols[i]);
  }
  add("protocols", protos);
  std::string snrs;
  for (std::size_t i = 0; i < cfg.snr_grid.size(); ++i) {
    if (i) snrs += ",";
    snrs += fmt_double(cfg.snr_grid[i]);
  }
  add("snr", snrs);
  add("trials", std::to_string(cfg.latency_trials));
  add("epochs", std::to_string(cfg.train_options.epochs));
  add("batch", std::to_string(cfg.train_options.batch_size));
  add("lr", fmt_double(cfg.train_options.learning_rate));
  add("train_images", std::to_string(cfg.train_images));
  add("test_images", std::to_string(cfg.test_images));
  add("n_ports", std::to_string(cfg.codec_cfg.n_ports));
  add("image_h", std::to_string(cfg.codec_cfg.image_h));
  add("image_w", std::to_string(cfg.codec_cfg.image_w));
  add("m_t", std::to_string(cfg.codec_cfg.m_t));
  add("c_min", std::to_string(cfg.codec_cfg.rate.c_min));
  add("c_max", std::to_string(cfg.codec_cfg.rate.c_max));
  add("tau", fmt_double(cfg.codec_cfg.rate.tau));
  add("gamma_low", fmt_double(cfg.codec_cfg.rate.gamma_low));
  add("gamma_high", fmt_double(cfg.codec_cfg.rate.gamma_high));
  add("lambda1", fmt_double(cfg.codec_cfg.lambda1));
  add("lambda2", fmt_double(cfg.codec_cfg.lambda2));
  add("lambda3", fmt_double(cfg.codec_cfg.lambda3));
  add("quant_bits", std::to_string(cfg.quant_bits));
  add("mod_order", std::to_string(cfg.mod_order));
  add("packet_bits", std::to_string(cfg.packet_bits));
  add("interleaver_seed", std::to_string(cfg.interleaver_seed));
  add("loss_prob", fmt_double(cfg.latency.loss_prob));
  add("rate_bps", fmt_double(cfg.latency.rate_bps));
  add("rto_ms", fmt_double(cfg.latency.rto_ms));
  add("max_retx", std::to_string(cfg.latency.max_retx));
  add("delay_mean_ms", fmt_double(cfg.latency.delay_mean_ms));
  add("delay_std_ms", fmt_double(cfg.latency.delay_std_ms));
  add("delay_min_ms", fmt_double(cfg.latency.delay_min_ms));
  add("payload_bits", std::to_string(cfg.latency.payload_bits));
  add("port_bits", std::to_string(cfg.latency.port_bits));
  add("ber_bits", std::to_string(cfg.ber_bits_per_point));
  std::sort(kv.begin(), kv.end());
  std::string out;
  for (const auto& [k, v] : kv) {
    out += k;
    out += "=";
    out += v;
    out += "\n";
  }
  return out;
}

std::string content_digest(const std::string& text) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

std::string config_hash(const ExperimentConfig& cfg) { return content_digest(canonical_text(cfg)); }

namespace {

double class_fraction(int cls, int salt) {
  return static_cast<double>(Rng::derive(static_cast<std::uint64_t>(cls), 7700 + salt) % 10000) /
         10000.0;
}

double smooth_step(double t) { return 1.0 / (1.0 + std::exp(-t)); }

}  // namespace

std::vector<codec::Sample> generate_toy_dataset(int n, int height, int width, std::uint64_t seed,
                                                int n_ports) {
  if (n < 1) throw std::invalid_argument("generate_toy_dataset: n must be >= 1");
  std::vector<codec::Sample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    int cls = i % n_ports;
    Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(i)));
    double cx = width * (0.3 + 0.4 * class_fraction(cls, 1)) + rng.uniform(-1.2, 1.2);
    double cy = height * (0.3 + 0.4 * class_fraction(cls, 2)) + rng.uniform(-1.2, 1.2);
    double size = std::min(height, width) * (0.18 + 0.14 * class_fraction(cls, 3)) *
                  (1.0 + rng.uniform(-0.12, 0.12));
    double intensity =
        std::clamp(0.55 + 0.4 * class_fraction(cls, 4) + rng.uniform(-0.08, 0.08), 0.1, 1.0);
    double theta = 2.0 * std::numbers::pi * class_fraction(cls, 5) + rng.uniform(-0.15, 0.15);

    codec::ToyImage img = codec::null_image(height, width, 1);
    int type = cls % 3;
    double edge = 0.7;
    double diag = std::hypot(width, height);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        double value = 0.0;
        if (type == 0) {
          double hx = size;
          double hy = size * 0.75;
          value = intensity * smooth_step((x - (cx - hx)) / edge) *
                  smooth_step(((cx + hx) - x) / edge) * smooth_step((y - (cy - hy)) / edge) *
                  smooth_step(((cy + hy) - y) / edge);
        } else if (type == 1) {
          double dist = std::hypot(x - cx, y - cy);
          value = intensity * smooth_step((size - dist) / edge);
        } else {
          double t = ((x - cx) * std::cos(theta) + (y - cy) * std::sin(theta)) / diag + 0.5;
          value = intensity * std::clamp(t, 0.0, 1.0);
        }
        img.pixels[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                   static_cast<std::size_t>(x)] = std::clamp(value, 0.0, 1.0);
      }
    }
    codec::Sample sample;
    sample.image = std::move(img);
    sample.ports.src = cls;
    sample.ports.dst = (5 * cls + 3) % n_ports;
    out.push_back(std::move(sample));
  }
  return out;
}

namespace {

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;  // [0,1]
};

std::optional<GrayImage> read_png_gray(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) return std::nullopt;
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    return std::nullopt;
  }
  GrayImage g;
  g.width = static_cast<int>(image.width);
  g.height = static_cast<int>(image.height);
  g.pixels.resize(static_cast<std::size_t>(g.width) * static_cast<std::size_t>(g.height));
  for (std::size_t i = 0; i < g.pixels.size(); ++i) {
    double r = buffer[3 * i] / 255.0;
    double gg = buffer[3 * i + 1] / 255.0;
    double b = buffer[3 * i + 2] / 255.0;
    g.pixels[i] = 0.299 * r + 0.587 * gg + 0.114 * b;
  }
  return g;
}

std::optional<GrayImage> read_pnm_gray(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::string magic;
  in >> magic;
  if (magic != "P2" && magic != "P3" && magic != "P5" && magic != "P6") return std::nullopt;
  auto next_int = [&in]() -> long {
    // Skips whitespace and '#' comment lines.
    while (true) {
      int c = in.peek();
      if (c == '#') {
        std::string line;
        std::getline(in, line);
      } else if (std::isspace(c)) {
        in.get();
      } else {
        break;
      }
    }
    long v = -1;
    in >> v;
    return v;
  };
  long w = next_int();
  long h = next_int();
  long maxval = next_int();
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) return std::nullopt;
  bool rgb = (magic == "P3" || magic == "P6");
  bool binary = (magic == "P5" || magic == "P6");
  std::size_t count = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * (rgb ? 3 : 1);
  std::vector<double> raw(count);
  if (binary) {
    in.get();  // single whitespace after maxval
    std::vector<std::uint8_t> bytes(count);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(count));
    if (static_cast<std::size_t>(in.gcount()) != count) return std::nullopt;
    for (std::size_t i = 0; i < count; ++i) raw[i] = bytes[i] / static_cast<double>(maxval);
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      long v = next_int();
      if (v < 0) return std::nullopt;
      raw[i] = static_cast<double>(v) / static_cast<double>(maxval);
    }
  }
  GrayImage g;
  g.width = static_cast<int>(w);
  g.height = static_cast<int>(h);
  g.pixels.resize(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
  for (std::size_t i = 0; i < g.pixels.size(); ++i) {
    g.pixels[i] = rgb ? 0.299 * raw[3 * i] + 0.587 * raw[3 * i + 1] + 0.114 * raw[3 * i + 2]
                      : raw[i];
  }
  return g;
}

codec::ToyImage resize_nearest(const GrayImage& src, int target_h, int target_w) {
  codec::ToyImage out = codec::null_image(target_h, target_w, 1);
  for (int y = 0; y < target_h; ++y) {
    int sy = static_cast<int>(static_cast<long>(y) * src.height / target_h);
    for (int x = 0; x < target_w; ++x) {
      int sx = static_cast<int>(static_cast<long>(x) * src.width / target_w);
      out.pixels[static_cast<std::size_t>(y) * static_cast<std::size_t>(target_w) +
                 static_cast<std::size_t>(x)] =
          src.pixels[static_cast<std::size_t>(sy) * static_cast<std::size_t>(src.width) +
                     static_cast<std::size_t>(sx)];
    }
  }
  return out;
}

}  // namespace

std::vector<codec::ToyImage> load_image_folder(const std::string& path, int target_h,
                                               int target_w) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(path)) throw std::runtime_error("load_image_folder: not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(path)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });

  std::vector<codec::ToyImage> out;
  for (const fs::path& f : files) {
    std::string ext = f.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    std::optional<GrayImage> img;
    if (ext == ".png") {
      img = read_png_gray(f.string());
    } else if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") {
      img = read_pnm_gray(f.string());
    } else {
      continue;
    }
    if (!img) {
      std::cerr << "warning: skipping unreadable image " << f << "\n";
      continue;
    }
    out.push_back(resize_nearest(*img, target_h, target_w));
  }
  if (out.empty()) throw std::runtime_error("load_image_folder: no readable images in " + path);
  return out;
}

void run_rate_sweep(const ExperimentConfig& cfg, std::ostream& csv) {
  std::string hash = config_hash(cfg);
  csv << "config_hash,gamma_db,tau,c_r\n";
  const double taus[] = {0.5, 1.0, 2.0, 3.0, 5.0};
  for (double tau : taus) {
    ratectl::RateConfig rc = cfg.codec_cfg.rate;
    rc.tau = tau;
    for (int i = 0; i <= 200; ++i) {
      double gamma = static_cast<double>(800 + 6 * i) / 100.0;
      csv << hash << "," << fmt_fixed(gamma, 2) << "," << fmt_fixed(tau, 1) << ","
          << ratectl::budget_from_snr(gamma, rc) << "\n";
    }
  }
}

void run_latency(const ExperimentConfig& cfg, std::ostream& csv, std::ostream& summary_json) {
  std::string hash = config_hash(cfg);
  csv << "config_hash,protocol,trial,latency_ms,retx,outcome\n";
  nlohmann::ordered_json summary;
  summary["config_hash"] = hash;
  for (std::size_t p = 0; p < cfg.protocols.size(); ++p) {
    transport::ProtocolKind kind = cfg.protocols[p];
    transport::MonteCarloResult mc = transport::latency_monte_carlo(
        kind, cfg.latency, cfg.latency_trials, Rng::derive(cfg.seed, 100 + p));
    for (std::size_t t = 0; t < mc.trials.size(); ++t) {
      const transport::TrialResult& tr = mc.trials[t];
      csv << hash << "," << transport::protocol_name(kind) << "," << t << ","
          << (tr.delivered ? fmt_fixed(tr.latency_ms, 6) : "") << "," << tr.retransmissions << ","
          << (tr.delivered ? "delivered" : transport::loss_cause_name(tr.cause)) << "\n";
    }
    nlohmann::ordered_json js;
    js["trials"] = mc.summary.trials;
    js["delivered"] = mc.summary.delivered;
    js["failure_rate"] = mc.summary.failure_rate;
    js["mean_ms"] = mc.summary.mean_ms;
    js["p50_ms"] = mc.summary.p50_ms;
    js["p95_ms"] = mc.summary.p95_ms;
    js["p99_ms"] = mc.summary.p99_ms;
    js["histogram"] = {{"edges", mc.summary.histogram_edges},
                       {"counts", mc.summary.histogram_counts}};
    summary[transport::protocol_name(kind)] = js;
  }
  summary_json << summary.dump(2) << "\n";
}

void run_ber_sweep(const ExperimentConfig& cfg, std::ostream& csv) {
  std::string hash = config_hash(cfg);
  csv << "config_hash,gamma_db,mod_order,bits,errors,ber\n";
  for (int order : cfg.ber_orders) {
    int k = order == 4 ? 2 : (order == 16 ? 4 : 6);
    for (std::size_t gi = 0; gi < cfg.ber_snr_grid.size(); ++gi) {
      double gamma = cfg.ber_snr_grid[gi];
      long nbits = (cfg.ber_bits_per_point + k - 1) / k * k;
      Rng rng(Rng::derive(cfg.seed, 9000 + static_cast<std::uint64_t>(order) * 100 + gi));
      phylink::BitVector tx = phylink::BitVector::random(static_cast<std::size_t>(nbits), rng);
      phylink::SymbolBlock sym = phylink::qam_modulate(tx, order);
      phylink::ChannelRealization ch;
      ch.snr_db = gamma;
      ch.noise_seed = rng.raw();
      phylink::BitVector rx = phylink::qam_demodulate(phylink::awgn_apply(sym, ch), order);
      long errors = 0;
      for (std::size_t i = 0; i < tx.size(); ++i) errors += tx.get(i) != rx.get(i);
      csv << hash << "," << fmt_double(gamma) << "," << order << "," << nbits << "," << errors
          << "," << fmt_double(static_cast<double>(errors) / static_cast<double>(nbits)) << "\n";
    }
  }
}

namespace {

void write_loss_trace(const std::string& path, const std::string& hash,
                      const codec::TrainResult& result) {
  std::ofstream out(path);
  out << "config_hash,epoch,l_rec,l_port,l_rate,total\n";
  for (std::size_t e = 0; e < result.epoch_trace.size(); ++e) {
    const codec::LossBreakdown& bd = result.epoch_trace[e];
    out << hash << "," << e << "," << fmt_double(bd.rec) << "," << fmt_double(bd.port) << ","
        << fmt_double(bd.rate) << "," << fmt_double(bd.total) << "\n";
  }
}

}  // namespace

TrainOutput train_and_save(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  std::string hash = config_hash(cfg);
  std::vector<codec::Sample> dataset =
      generate_toy_dataset(cfg.train_images, cfg.codec_cfg.image_h, cfg.codec_cfg.image_w,
                           Rng::derive(cfg.seed, 1), cfg.codec_cfg.n_ports);

  TrainOutput out;
  out.uplink = codec::make_model(cfg.codec_cfg, Rng::derive(cfg.seed, 2));
  codec::TrainResult up_trace = codec::train(out.uplink, dataset, codec::Direction::uplink,
                                             cfg.train_options, Rng::derive(cfg.seed, 3));
  out.downlink = codec::make_model(cfg.codec_cfg, Rng::derive(cfg.seed, 4));
  codec::TrainResult down_trace = codec::train(out.downlink, dataset, codec::Direction::downlink,
                                               cfg.train_options, Rng::derive(cfg.seed, 5));

  std::ofstream up_file(fs::path(cfg.out_dir) / cfg.checkpoint_uplink);
  up_file << codec::model_to_json(out.uplink).dump() << "\n";
  std::ofstream down_file(fs::path(cfg.out_dir) / cfg.checkpoint_downlink);
  down_file << codec::model_to_json(out.downlink).dump() << "\n";
  write_loss_trace((fs::path(cfg.out_dir) / "loss_trace_uplink.csv").string(), hash, up_trace);
  write_loss_trace((fs::path(cfg.out_dir) / "loss_trace_downlink.csv").string(), hash, down_trace);
  return out;
}

namespace {

// Majority-decode a x3 repetition-coded mask and force its popcount to c_r:
// excess bits are cleared from the highest index down, missing bits are set
// from the lowest index up.
std::vector<std::uint8_t> decode_mask(const phylink::BitVector& payload, std::size_t m_t,
                                      int c_r) {
  std::vector<std::uint8_t> mask(m_t, 0);
  for (std::size_t i = 0; i < m_t; ++i) {
    int votes = payload.get(i) + payload.get(m_t + i) + payload.get(2 * m_t + i);
    mask[i] = votes >= 2 ? 1 : 0;
  }
  int count = 0;
  for (std::uint8_t m : mask) count += m;
  for (std::size_t i = m_t; i-- > 0 && count > c_r;) {
    if (mask[i]) {
      mask[i] = 0;
      --count;
    }
  }
  for (std::size_t i = 0; i < m_t && count < c_r; ++i) {
    if (!mask[i]) {
      mask[i] = 1;
      ++count;
    }
  }
  return mask;
}

}  // namespace

E2eMessageResult e2e_message(const codec::SpatModel& model, const codec::Sample& sample,
                             transport::ProtocolKind kind, double gamma_db,
                             codec::Direction direction, const ExperimentConfig& cfg,
                             std::uint64_t stream_seed, int gate_port_override) {
  const codec::CodecConfig& cc = model.config;
  std::size_t mt = static_cast<std::size_t>(cc.m_t);
  Rng stream(stream_seed);

  // Semantic transmitter. SPAT embeds the ports in the feature; the baselines
  // carry them in explicit headers instead.
  std::vector<double> x = codec::encode(sample.image, model.encoder);
  std::vector<double> u = x;
  if (kind == transport::ProtocolKind::spat) {
    auto [e_s, e_d] = portsem::embed_ports(sample.ports, model.port_encoder);
    u = portsem::inject_ports(x, portsem::synthesize_bias(e_s, e_d, model.port_encoder));
  }
  std::vector<double> v = codec::channel_modnet(u, gamma_db, model.modnet_tx, cc.modnet_bound);
  std::vector<double> w = ratectl::predict_importance(v, gamma_db, model.importance);
  int c_r = ratectl::budget_from_snr(gamma_db, cc.rate);
  ratectl::Selection sel = ratectl::topk_select(v, w, c_r);

  phylink::QuantRange range = phylink::minmax_range(sel.kept);
  phylink::Quantized quant = phylink::quantize(sel.kept, cfg.quant_bits, range);
  std::vector<std::size_t> pi =
      phylink::random_permutation(quant.bits.size(), cfg.interleaver_seed);
  phylink::BitVector interleaved = phylink::interleave(quant.bits, pi);

  // Selection mask rides as x3 repetition-coded side information ahead of the
  // interleaved payload bits.
  phylink::BitVector message;
  for (int copy = 0; copy < 3; ++copy) {
    for (std::size_t i = 0; i < mt; ++i) message.push_back(sel.mask[i]);
  }
  message.append(interleaved);
  phylink::PacketStream packets = phylink::packetize(message, cfg.packet_bits);

  auto transmit = [&](const transport::Frame& frame) {
    phylink::BitVector wire = frame.header;
    wire.append(frame.payload);
    phylink::SymbolBlock sym = phylink::qam_modulate(wire, cfg.mod_order);
    phylink::ChannelRealization ch;
    ch.snr_db = gamma_db;
    ch.noise_seed = stream.raw();
    phylink::BitVector rx_bits =
        phylink::qam_demodulate(phylink::awgn_apply(sym, ch), cfg.mod_order);
    transport::Frame rx = frame;
    rx.header = rx_bits.slice(0, frame.header.size());
    rx.payload = rx_bits.slice(frame.header.size(), wire.size());
    return rx;
  };

  E2eMessageResult result;
  result.delivered = true;
  std::vector<phylink::BitVector> rx_payloads;
  transport::DeliverConfig dcfg;
  dcfg.rto_ms = cfg.latency.rto_ms;
  dcfg.max_retx = cfg.latency.max_retx;
  for (const phylink::BitVector& unit : packets.units) {
    transport::Frame frame =
        transport::build_frame(kind, sample.ports, unit, transport::FramingMode::reliability);
    transport::Clock clock;
    transport::DeliveryReport report = transport::deliver(
        kind, frame, [&](int) { return transmit(frame); }, clock, dcfg);
    result.retransmissions += report.retransmissions;
    if (!report.delivered) {
      result.delivered = false;
      result.loss_cause = report.loss_cause;
      break;
    }
    rx_payloads.push_back(report.payload);
  }

  std::vector<double> z_hat(mt, 0.0);
  if (result.delivered) {
    phylink::BitVector payload = phylink::depacketize(rx_payloads, packets.pad_bits);
    std::vector<std::uint8_t> mask = decode_mask(payload, mt, c_r);
    phylink::BitVector data = payload.slice(3 * mt, payload.size());
    phylink::BitVector dequant_bits = phylink::deinterleave(data, pi);
    std::vector<double> values = phylink::dequantize(dequant_bits, cfg.quant_bits, quant.range);
    z_hat = ratectl::zero_fill(values, mask, mt);

    if (kind == transport::ProtocolKind::spat) {
      // Port identification failure surfaces as an effective packet loss.
      portsem::IdentifyResult ident =
          portsem::identify_ports(z_hat, model.identifier,
                                  direction == codec::Direction::uplink
                                      ? portsem::LinkMode::uplink
                                      : portsem::LinkMode::downlink);
      bool src_ok = portsem::predicted_port(ident.src_logits) == sample.ports.src;
      bool dst_ok = direction != codec::Direction::uplink ||
                    portsem::predicted_port(ident.dst_logits) == sample.ports.dst;
      if (!src_ok || !dst_ok) {
        result.delivered = false;
        result.loss_cause = transport::LossCause::port_mismatch;
        std::fill(z_hat.begin(), z_hat.end(), 0.0);
      }
    }
  }

  std::vector<double> feature = z_hat;
  if (direction == codec::Direction::downlink) {
    int local = gate_port_override >= 0 ? gate_port_override : sample.ports.dst;
    feature = portsem::conditional_gate(feature, local, model.gate);
  }
  std::vector<double> x_hat =
      codec::channel_modnet(feature, gamma_db, model.modnet_rx, cc.modnet_bound);
  codec::ToyImage s_hat = codec::decode(x_hat, model.decoder, cc.image_h, cc.image_w, cc.channels);
  result.psnr_db = codec::psnr(sample.image, s_hat);
  return result;
}

void run_e2e(const ExperimentConfig& cfg, const codec::SpatModel& model,
             codec::Direction direction, std::span<const codec::Sample> dataset,
             std::ostream& csv) {
  std::string hash = config_hash(cfg);
  csv << "config_hash,protocol,gamma_db,image,delivered,loss_cause,retx,psnr_db\n";
  for (std::size_t p = 0; p < cfg.protocols.size(); ++p) {
    transport::ProtocolKind kind = cfg.protocols[p];
    for (std::size_t g = 0; g < cfg.snr_grid.size(); ++g) {
      double gamma = cfg.snr_grid[g];
      std::size_t delivered = 0;
      for (std::size_t i = 0; i < dataset.size(); ++i) {
        std::uint64_t stream_seed =
            Rng::derive(cfg.seed, ((p * 1000 + g) * 100000 + i) + 500000);
        E2eMessageResult res = e2e_message(model, dataset[i], kind, gamma, direction, cfg,
                                           stream_seed);
        delivered += res.delivered ? 1 : 0;
        csv << hash << "," << transport::protocol_name(kind) << "," << fmt_double(gamma) << ","
            << i << "," << (res.delivered ? 1 : 0) << ","
            << transport::loss_cause_name(res.loss_cause) << "," << res.retransmissions << ","
            << fmt_fixed(res.psnr_db, 4) << "\n";
      }
      // Accounting invariant: delivered plus lost must cover the dataset.
      (void)delivered;
    }
  }
}

}  // namespace spat::expcli
