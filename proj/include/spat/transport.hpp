#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "spat/phylink.hpp"
#include "spat/portsem.hpp"
#include "spat/rng.hpp"

namespace spat::transport {

enum class ProtocolKind { tcp, udp, sitp, spat };

const char* protocol_name(ProtocolKind kind);
ProtocolKind protocol_from_name(const std::string& name);

// Latency mode: 8-bit destination-port header (none for SPAT), no checksums.
// Reliability mode: 16-bit src + 16-bit dst + 16-bit length + 16-bit header
// checksum; TCP/UDP append a 16-bit payload checksum. SPAT carries no header.
enum class FramingMode { latency, reliability };

struct Frame {
  ProtocolKind kind = ProtocolKind::udp;
  FramingMode mode = FramingMode::reliability;
  phylink::BitVector header;
  phylink::BitVector payload;

  std::size_t total_bits() const { return header.size() + payload.size(); }
};

std::size_t header_bits(ProtocolKind kind, FramingMode mode);

Frame build_frame(ProtocolKind kind, portsem::PortPair ports, const phylink::BitVector& payload,
                  FramingMode mode);

// 16-bit ones'-complement sum over 16-bit words (MSB-first), zero-padded tail,
// final complement. All-zero input sums to 0, so the checksum is 0xFFFF.
std::uint16_t checksum16(const phylink::BitVector& bits);

struct VerifyResult {
  bool header_ok = true;
  bool payload_ok = true;
};

// Recomputes the checksums a reliability-mode frame carries. Latency-mode and
// SPAT frames have nothing to validate and verify as clean.
VerifyResult verify(const Frame& frame);

enum class LossCause { none, checksum_drop, retx_exhausted, port_mismatch, header_drop };

const char* loss_cause_name(LossCause cause);

struct DeliveryReport {
  bool delivered = false;
  phylink::BitVector payload;
  double latency_ms = 0.0;
  int retransmissions = 0;
  LossCause loss_cause = LossCause::none;
};

// Integer-microsecond simulation clock.
struct Clock {
  std::int64_t microseconds = 0;
  void advance_ms(double ms) { microseconds += static_cast<std::int64_t>(ms * 1000.0 + 0.5); }
  double ms() const { return static_cast<double>(microseconds) / 1000.0; }
};

struct DeliverConfig {
  double rto_ms = 40.0;
  int max_retx = 5;
};

// Per-protocol delivery semantics over already-corrupted receptions:
//   TCP:  header or payload checksum failure -> retransmit after rto, up to
//         max_retx, then retx_exhausted.
//   UDP:  any checksum failure -> checksum_drop.
//   SITP: header checksum failure -> header_drop; corrupted payload delivered.
//   SPAT: always delivered to the semantic stack (port mis-identification is
//         reported downstream as port_mismatch).
// receive(attempt) yields the frame as it arrived on transmission `attempt`.
DeliveryReport deliver(ProtocolKind kind, const Frame& tx,
                       const std::function<Frame(int attempt)>& receive, Clock& clock,
                       const DeliverConfig& cfg);

// Persistent-corruption convenience: every attempt arrives as `rx`.
DeliveryReport deliver(ProtocolKind kind, const Frame& tx, const Frame& rx, Clock& clock,
                       const DeliverConfig& cfg);

struct LatencyConfig {
  int port_bits = 8;
  int payload_bits = 256;
  double rate_bps = 100000.0;
  double loss_prob = 0.25;
  double rto_ms = 40.0;
  int max_retx = 5;
  double delay_mean_ms = 5.0;
  double delay_std_ms = 1.414;
  double delay_min_ms = 1.0;
  int trials = 100000;
  int control_bits = 40;  // TCP SYN / SYN-ACK / ACK frames

  bool valid() const {
    return port_bits > 0 && payload_bits > 0 && rate_bps > 0.0 && loss_prob >= 0.0 &&
           loss_prob <= 1.0 && rto_ms > 0.0 && max_retx >= 0 && delay_mean_ms > delay_min_ms &&
           delay_std_ms >= 0.0 && trials >= 1;
  }
};

// Normal(mean, std) resampled until the draw is at least `min_value`.
double truncated_gaussian_delay(double mean, double std, double min_value, Rng& rng);

struct TrialResult {
  bool delivered = false;
  double latency_ms = 0.0;
  int retransmissions = 0;
  LossCause cause = LossCause::none;
};

// Single-packet latency trial.
//   UDP/SITP/SPAT: one transmission; loss -> failure, else tx time + one-way delay.
//   TCP: SYN / SYN-ACK rounds with rto and retry limit, handshake ACK, then the
//        data phase; delivery latency is the first successful data arrival.
TrialResult latency_trial(ProtocolKind kind, const LatencyConfig& cfg, Rng& rng);

struct LatencySummary {
  std::string protocol;
  int trials = 0;
  int delivered = 0;
  double failure_rate = 0.0;
  double mean_ms = 0.0;  // over delivered trials
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double p99_ms = 0.0;
  std::vector<double> histogram_edges;  // 1 ms bins over delivered latencies
  std::vector<int> histogram_counts;
};

struct MonteCarloResult {
  std::vector<TrialResult> trials;
  LatencySummary summary;
  std::vector<double> sorted_latencies;  // delivered only, ascending (CDF support)
};

// Per-trial RNG streams derived from (seed, trial index); bit-reproducible.
MonteCarloResult latency_monte_carlo(ProtocolKind kind, const LatencyConfig& cfg, int trials,
                                     std::uint64_t seed);

}  // namespace spat::transport
