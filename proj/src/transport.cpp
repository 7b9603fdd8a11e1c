#include "spat/transport.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace spat::transport {

const char* protocol_name(ProtocolKind kind) {
  switch (kind) {
    case ProtocolKind::tcp: return "tcp";
    case ProtocolKind::udp: return "udp";
    case ProtocolKind::sitp: return "sitp";
    case ProtocolKind::spat: return "spat";
  }
  return "udp";
}

ProtocolKind protocol_from_name(const std::string& name) {
  if (name == "tcp") return ProtocolKind::tcp;
  if (name == "udp") return ProtocolKind::udp;
  if (name == "sitp") return ProtocolKind::sitp;
  if (name == "spat") return ProtocolKind::spat;
  throw std::invalid_argument("unknown protocol: " + name);
}

const char* loss_cause_name(LossCause cause) {
  switch (cause) {
    case LossCause::none: return "none";
    case LossCause::checksum_drop: return "checksum_drop";
    case LossCause::retx_exhausted: return "retx_exhausted";
    case LossCause::port_mismatch: return "port_mismatch";
    case LossCause::header_drop: return "header_drop";
  }
  return "none";
}

std::size_t header_bits(ProtocolKind kind, FramingMode mode) {
  if (kind == ProtocolKind::spat) return 0;
  if (mode == FramingMode::latency) return 8;
  // src(16) + dst(16) + length(16) + header checksum(16)
  std::size_t bits = 64;
  if (kind == ProtocolKind::tcp || kind == ProtocolKind::udp) bits += 16;  // payload checksum
  return bits;
}

namespace {

void append_field(phylink::BitVector& bits, std::uint32_t value, int width) {
  for (int k = width - 1; k >= 0; --k) bits.push_back(static_cast<int>((value >> k) & 1u));
}

std::uint32_t read_field(const phylink::BitVector& bits, std::size_t offset, int width) {
  std::uint32_t value = 0;
  for (int k = 0; k < width; ++k) {
    value = (value << 1) | static_cast<std::uint32_t>(bits.get(offset + static_cast<std::size_t>(k)));
  }
  return value;
}

}  // namespace

std::uint16_t checksum16(const phylink::BitVector& bits) {
  std::uint32_t sum = 0;
  for (std::size_t pos = 0; pos < bits.size(); pos += 16) {
    std::uint32_t word = 0;
    for (std::size_t k = 0; k < 16; ++k) {
      int bit = (pos + k < bits.size()) ? bits.get(pos + k) : 0;
      word = (word << 1) | static_cast<std::uint32_t>(bit);
    }
    sum += word;
    while (sum > 0xFFFFu) sum = (sum & 0xFFFFu) + (sum >> 16);
  }
  return static_cast<std::uint16_t>(~sum & 0xFFFFu);
}

Frame build_frame(ProtocolKind kind, portsem::PortPair ports, const phylink::BitVector& payload,
                  FramingMode mode) {
  if (payload.empty()) throw std::invalid_argument("build_frame: empty payload");
  Frame frame;
  frame.kind = kind;
  frame.mode = mode;
  frame.payload = payload;
  if (kind == ProtocolKind::spat) return frame;  // implicit port embedding, no header

  if (mode == FramingMode::latency) {
    if (ports.dst < 0 || ports.dst > 0xFF) {
      throw std::invalid_argument("build_frame: port exceeds 8-bit field");
    }
    append_field(frame.header, static_cast<std::uint32_t>(ports.dst), 8);
    return frame;
  }

  if (ports.src < 0 || ports.src > 0xFFFF || ports.dst < 0 || ports.dst > 0xFFFF) {
    throw std::invalid_argument("build_frame: port exceeds 16-bit field");
  }
  if (payload.size() > 0xFFFF) throw std::invalid_argument("build_frame: payload too long");
  phylink::BitVector fields;
  append_field(fields, static_cast<std::uint32_t>(ports.src), 16);
  append_field(fields, static_cast<std::uint32_t>(ports.dst), 16);
  append_field(fields, static_cast<std::uint32_t>(payload.size()), 16);
  frame.header = fields;
  append_field(frame.header, checksum16(fields), 16);
  if (kind == ProtocolKind::tcp || kind == ProtocolKind::udp) {
    append_field(frame.header, checksum16(payload), 16);
  }
  return frame;
}

VerifyResult verify(const Frame& frame) {
  VerifyResult res;
  if (frame.kind == ProtocolKind::spat || frame.mode == FramingMode::latency) return res;
  phylink::BitVector fields = frame.header.slice(0, 48);
  std::uint16_t stored_header = static_cast<std::uint16_t>(read_field(frame.header, 48, 16));
  res.header_ok = (checksum16(fields) == stored_header);
  if (frame.kind == ProtocolKind::tcp || frame.kind == ProtocolKind::udp) {
    std::uint16_t stored_payload = static_cast<std::uint16_t>(read_field(frame.header, 64, 16));
    res.payload_ok = (checksum16(frame.payload) == stored_payload);
  }
  return res;
}

DeliveryReport deliver(ProtocolKind kind, const Frame& tx,
                       const std::function<Frame(int attempt)>& receive, Clock& clock,
                       const DeliverConfig& cfg) {
  (void)tx;  // the transmitted frame is regenerated by `receive` per attempt
  DeliveryReport report;
  switch (kind) {
    case ProtocolKind::spat: {
      // No header bits exist to validate; the semantic stack always gets the payload.
      Frame rx = receive(0);
      report.delivered = true;
      report.payload = rx.payload;
      return report;
    }
    case ProtocolKind::udp: {
      Frame rx = receive(0);
      VerifyResult v = verify(rx);
      if (v.header_ok && v.payload_ok) {
        report.delivered = true;
        report.payload = rx.payload;
      } else {
        report.loss_cause = LossCause::checksum_drop;
      }
      return report;
    }
    case ProtocolKind::sitp: {
      Frame rx = receive(0);
      VerifyResult v = verify(rx);
      if (v.header_ok) {
        report.delivered = true;
        report.payload = rx.payload;  // payload delivered even if corrupted
      } else {
        report.loss_cause = LossCause::header_drop;
      }
      return report;
    }
    case ProtocolKind::tcp: {
      for (int attempt = 0; attempt <= cfg.max_retx; ++attempt) {
        if (attempt > 0) {
          clock.advance_ms(cfg.rto_ms);
          ++report.retransmissions;
        }
        Frame rx = receive(attempt);
        VerifyResult v = verify(rx);
        if (v.header_ok && v.payload_ok) {
          report.delivered = true;
          report.payload = rx.payload;
          report.latency_ms = clock.ms();
          return report;
        }
      }
      report.loss_cause = LossCause::retx_exhausted;
      report.latency_ms = clock.ms();
      return report;
    }
  }
  return report;
}

DeliveryReport deliver(ProtocolKind kind, const Frame& tx, const Frame& rx, Clock& clock,
                       const DeliverConfig& cfg) {
  return deliver(kind, tx, std::function<Frame(int)>([&rx](int) { return rx; }), clock, cfg);
}

double truncated_gaussian_delay(double mean, double std, double min_value, Rng& rng) {
  if (std == 0.0) return mean;
  double sample;
  do {
    sample = mean + std * rng.gaussian();
  } while (sample < min_value);
  return sample;
}

namespace {

double tx_ms(int bits, double rate_bps) { return static_cast<double>(bits) / rate_bps * 1000.0; }

struct HandshakeOutcome {
  bool ok = false;
  double elapsed_ms = 0.0;
  int retransmissions = 0;
};

// One request/response round: both legs must survive loss, otherwise the
// sender times out at rto and retries.
HandshakeOutcome loss_delay_round(const LatencyConfig& cfg, double frame_ms, double response_ms,
                                  Rng& rng) {
  HandshakeOutcome out;
  for (int attempt = 0; attempt <= cfg.max_retx; ++attempt) {
    if (attempt > 0) {
      out.elapsed_ms += cfg.rto_ms;
      ++out.retransmissions;
    }
    bool lost_fwd = rng.uniform() < cfg.loss_prob;
    double d_fwd = truncated_gaussian_delay(cfg.delay_mean_ms, cfg.delay_std_ms,
                                            cfg.delay_min_ms, rng);
    bool lost_rsp = rng.uniform() < cfg.loss_prob;
    double d_rsp = truncated_gaussian_delay(cfg.delay_mean_ms, cfg.delay_std_ms,
                                            cfg.delay_min_ms, rng);
    if (!lost_fwd && !lost_rsp) {
      out.ok = true;
      out.elapsed_ms += frame_ms + d_fwd + response_ms + d_rsp;
      return out;
    }
  }
  return out;
}

}  // namespace

TrialResult latency_trial(ProtocolKind kind, const LatencyConfig& cfg, Rng& rng) {
  if (!cfg.valid()) throw std::invalid_argument("latency_trial: invalid LatencyConfig");
  TrialResult result;
  int data_bits = cfg.payload_bits + (kind == ProtocolKind::spat ? 0 : cfg.port_bits);
  double data_ms = tx_ms(data_bits, cfg.rate_bps);

  if (kind != ProtocolKind::tcp) {
    // One-shot transmission; a lost packet is a failed trial.
    if (rng.uniform() < cfg.loss_prob) {
      result.cause = LossCause::checksum_drop;
      return result;
    }
    result.delivered = true;
    result.latency_ms =
        data_ms + truncated_gaussian_delay(cfg.delay_mean_ms, cfg.delay_std_ms, cfg.delay_min_ms, rng);
    return result;
  }

  double ctrl_ms = tx_ms(cfg.control_bits, cfg.rate_bps);
  double t = 0.0;

  // SYN / SYN-ACK round.
  HandshakeOutcome syn = loss_delay_round(cfg, ctrl_ms, ctrl_ms, rng);
  result.retransmissions += syn.retransmissions;
  t += syn.elapsed_ms;
  if (!syn.ok) {
    result.cause = LossCause::retx_exhausted;
    return result;
  }

  // Handshake ACK: consumes transmit time; its loss is implicitly repaired by
  // the data segment that follows, so it never blocks the client.
  t += ctrl_ms;
  (void)(rng.uniform() < cfg.loss_prob);
  truncated_gaussian_delay(cfg.delay_mean_ms, cfg.delay_std_ms, cfg.delay_min_ms, rng);

  // Data phase: retransmit on data or ACK loss; delivery latency is the first
  // successful data arrival at the receiver.
  bool arrived = false;
  double arrival_ms = 0.0;
  for (int attempt = 0; attempt <= cfg.max_retx; ++attempt) {
    if (attempt > 0) {
      t += cfg.rto_ms;
      ++result.retransmissions;
    }
    bool lost_data = rng.uniform() < cfg.loss_prob;
    double d_data = truncated_gaussian_delay(cfg.delay_mean_ms, cfg.delay_std_ms,
                                             cfg.delay_min_ms, rng);
    bool lost_ack = rng.uniform() < cfg.loss_prob;
    truncated_gaussian_delay(cfg.delay_mean_ms, cfg.delay_std_ms, cfg.delay_min_ms, rng);
    if (!lost_data && !arrived) {
      arrived = true;
      arrival_ms = t + data_ms + d_data;
    }
    if (!lost_data && !lost_ack) break;
  }
  if (arrived) {
    result.delivered = true;
    result.latency_ms = arrival_ms;
  } else {
    result.cause = LossCause::retx_exhausted;
  }
  return result;
}

MonteCarloResult latency_monte_carlo(ProtocolKind kind, const LatencyConfig& cfg, int trials,
                                     std::uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("latency_monte_carlo: trials must be >= 1");
  MonteCarloResult result;
  result.trials.reserve(static_cast<std::size_t>(trials));
  for (int i = 0; i < trials; ++i) {
    Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(i)));
    result.trials.push_back(latency_trial(kind, cfg, rng));
  }

  LatencySummary& s = result.summary;
  s.protocol = protocol_name(kind);
  s.trials = trials;
  for (const TrialResult& t : result.trials) {
    if (t.delivered) {
      ++s.delivered;
      result.sorted_latencies.push_back(t.latency_ms);
      s.mean_ms += t.latency_ms;
    }
  }
  s.failure_rate = 1.0 - static_cast<double>(s.delivered) / static_cast<double>(trials);
  std::sort(result.sorted_latencies.begin(), result.sorted_latencies.end());
  if (s.delivered > 0) {
    s.mean_ms /= static_cast<double>(s.delivered);
    auto quantile = [&](double q) {
      std::size_t idx = static_cast<std::size_t>(q * static_cast<double>(s.delivered - 1) + 0.5);
      return result.sorted_latencies[std::min(idx, result.sorted_latencies.size() - 1)];
    };
    s.p50_ms = quantile(0.50);
    s.p95_ms = quantile(0.95);
    s.p99_ms = quantile(0.99);

    double lo = std::floor(result.sorted_latencies.front());
    double hi = std::ceil(result.sorted_latencies.back());
    int bins = std::max(1, static_cast<int>(hi - lo));
    s.histogram_edges.resize(static_cast<std::size_t>(bins) + 1);
    for (int b = 0; b <= bins; ++b) s.histogram_edges[static_cast<std::size_t>(b)] = lo + b;
    s.histogram_counts.assign(static_cast<std::size_t>(bins), 0);
    for (double v : result.sorted_latencies) {
      int b = std::min(bins - 1, static_cast<int>(v - lo));
      ++s.histogram_counts[static_cast<std::size_t>(b)];
    }
  }
  return result;
}

}  // namespace spat::transport
