#include "spat/phylink.hpp"

#include <cmath>
#include <complex>

#include <stdexcept>

#include "doctest.h"
#include "support/oracles.hpp"

using namespace spat;
using phylink::BitVector;

TEST_CASE("quantize: endpoints hit code 0 and full scale") {
  std::vector<double> v = {-2.0, 3.0};
  phylink::QuantRange range{-2.0, 3.0, false};
  for (int b = 2; b <= 8; ++b) {
    phylink::Quantized q = phylink::quantize(v, b, range);
    std::vector<double> back = phylink::dequantize(q.bits, b, q.range);
    CHECK(back[0] == doctest::Approx(-2.0).epsilon(1e-12));
    CHECK(back[1] == doctest::Approx(3.0).epsilon(1e-12));
  }
}

TEST_CASE("quantize: b=2 arithmetic example") {
  // normalized 0.34 -> round(0.34 * 3) = 1 -> bits 01 (MSB first)
  std::vector<double> v = {0.34};
  phylink::Quantized q = phylink::quantize(v, 2, {0.0, 1.0, false});
  REQUIRE(q.bits.size() == 2);
  CHECK(q.bits.get(0) == 0);
  CHECK(q.bits.get(1) == 1);
}

TEST_CASE("quantize: worst-case error bound holds exhaustively for all codes") {
  // For every b and every code, a value dequantized from its own code must be
  // recovered exactly; values swept across the range stay within half a step.
  for (int b = 2; b <= 8; ++b) {
    double lo = -1.5, hi = 2.5;
    int levels = (1 << b) - 1;
    double bound = (hi - lo) / (2.0 * levels);
    std::vector<double> sweep;
    for (int code = 0; code <= levels; ++code) {
      sweep.push_back(lo + (hi - lo) * code / levels);  // exact reconstruction points
    }
    for (int i = 0; i < 257; ++i) sweep.push_back(lo + (hi - lo) * i / 256.0);
    phylink::Quantized q = phylink::quantize(sweep, b, {lo, hi, false});
    std::vector<double> back = phylink::dequantize(q.bits, b, q.range);
    for (std::size_t i = 0; i < sweep.size(); ++i) {
      CHECK(std::abs(back[i] - sweep[i]) <= bound + 1e-12);
    }
  }
}

TEST_CASE("quantize: out-of-range values clamp, degenerate range flags") {
  phylink::Quantized q = phylink::quantize(std::vector<double>{-10.0, 10.0}, 4, {0.0, 1.0, false});
  std::vector<double> back = phylink::dequantize(q.bits, 4, q.range);
  CHECK(back[0] == 0.0);
  CHECK(back[1] == 1.0);

  phylink::Quantized d = phylink::quantize(std::vector<double>{0.7, 0.7}, 4, {0.7, 0.7, false});
  CHECK(d.range.degenerate);
  for (std::size_t i = 0; i < d.bits.size(); ++i) CHECK(d.bits.get(i) == 0);
  std::vector<double> rec = phylink::dequantize(d.bits, 4, d.range);
  CHECK(rec == std::vector<double>{0.7, 0.7});
}

TEST_CASE("interleave: identity and stated permutation") {
  BitVector bits;
  bits.push_back(1);
  bits.push_back(0);
  bits.push_back(1);
  std::vector<std::size_t> identity = {0, 1, 2};
  CHECK(phylink::interleave(bits, identity) == bits);

  // pi = [2, 0, 1] on b0 b1 b2 -> b2 b0 b1
  std::vector<std::size_t> pi = {2, 0, 1};
  BitVector out = phylink::interleave(bits, pi);
  CHECK(out.get(0) == bits.get(2));
  CHECK(out.get(1) == bits.get(0));
  CHECK(out.get(2) == bits.get(1));
}

TEST_CASE("interleave: non-permutation throws") {
  BitVector bits(3);
  std::vector<std::size_t> bad = {0, 0, 1};
  CHECK_THROWS_AS(phylink::interleave(bits, bad), std::invalid_argument);
}

TEST_CASE("interleave round trip over 1000 random seeds") {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng(seed);
    std::size_t n = 16 + rng.integer(64);
    BitVector bits = BitVector::random(n, rng);
    std::vector<std::size_t> pi = phylink::random_permutation(n, seed * 7 + 1);
    CHECK(phylink::deinterleave(phylink::interleave(bits, pi), pi) == bits);
  }
}

TEST_CASE("packetize: exact fit and padded tail") {
  Rng rng(4);
  BitVector bits = BitVector::random(2048, rng);
  phylink::PacketStream s = phylink::packetize(bits, 1024);
  CHECK(s.units.size() == 2);
  CHECK(s.pad_bits == 0);

  BitVector bits2 = BitVector::random(1000, rng);
  phylink::PacketStream s2 = phylink::packetize(bits2, 768);
  CHECK(s2.units.size() == 2);
  CHECK(s2.pad_bits == 536);
  CHECK(phylink::depacketize(s2.units, s2.pad_bits) == bits2);
}

TEST_CASE("packetize: empty input flagged; single short packet; round trips") {
  phylink::PacketStream empty = phylink::packetize(BitVector(), 768);
  CHECK(empty.empty_input);
  CHECK(empty.units.empty());
  CHECK(phylink::depacketize(empty.units, 0).size() == 0);

  Rng rng(9);
  BitVector tiny = BitVector::random(5, rng);
  phylink::PacketStream s = phylink::packetize(tiny, 768);
  CHECK(s.units.size() == 1);
  CHECK(s.pad_bits == 763);
  CHECK(phylink::depacketize(s.units, s.pad_bits) == tiny);

  for (int trial = 0; trial < 50; ++trial) {
    BitVector bits = BitVector::random(1 + rng.integer(4000), rng);
    for (std::size_t unit : {768u, 1024u}) {
      phylink::PacketStream st = phylink::packetize(bits, unit);
      CHECK(phylink::depacketize(st.units, st.pad_bits) == bits);
    }
  }
}

TEST_CASE("qam: 4-QAM Gray quadrants at unit energy") {
  BitVector bits;
  for (int b : {0, 0, 0, 1, 1, 1, 1, 0}) bits.push_back(b);
  phylink::SymbolBlock block = phylink::qam_modulate(bits, 4);
  REQUIRE(block.symbols.size() == 4);
  double s = 1.0 / std::sqrt(2.0);
  // First bit selects I, second selects Q; Gray labels 0 -> -s, 1 -> +s.
  std::vector<std::complex<double>> expected = {{-s, -s}, {-s, s}, {s, s}, {s, -s}};
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(std::abs(block.symbols[i] - expected[i]) < 1e-12);
  }
  for (const auto& sym : block.symbols) CHECK(std::norm(sym) == doctest::Approx(1.0));
}

TEST_CASE("qam: full constellations have unit average energy") {
  for (int order : {4, 16, 64}) {
    int k = order == 4 ? 2 : (order == 16 ? 4 : 6);
    BitVector bits;
    for (int sym = 0; sym < order; ++sym) {
      for (int j = k - 1; j >= 0; --j) bits.push_back((sym >> j) & 1);
    }
    phylink::SymbolBlock block = phylink::qam_modulate(bits, order);
    REQUIRE(block.symbols.size() == static_cast<std::size_t>(order));
    double energy = 0.0;
    for (const auto& s : block.symbols) energy += std::norm(s);
    CHECK(energy / order == doctest::Approx(1.0).epsilon(1e-12));
    // All constellation points distinct.
    for (int a = 0; a < order; ++a) {
      for (int b = a + 1; b < order; ++b) {
        CHECK(std::abs(block.symbols[a] - block.symbols[b]) > 1e-9);
      }
    }
  }
}

TEST_CASE("qam: adjacent levels differ in exactly one bit (Gray property)") {
  // Sweep one axis: symbols with consecutive I levels must differ by one bit.
  for (int order : {16, 64}) {
    int axis_bits = order == 16 ? 2 : 3;
    int levels = 1 << axis_bits;
    std::vector<int> gray_of_level(levels);
    for (int g = 0; g < levels; ++g) {
      int bin = 0;
      for (int v = g; v; v >>= 1) bin ^= v;
      gray_of_level[bin] = g;
    }
    for (int l = 0; l + 1 < levels; ++l) {
      int diff = gray_of_level[l] ^ gray_of_level[l + 1];
      CHECK((diff & (diff - 1)) == 0);  // single bit
    }
  }
}

TEST_CASE("qam: noiseless round trip for all orders") {
  Rng rng(12);
  for (int order : {4, 16, 64}) {
    for (int trial = 0; trial < 20; ++trial) {
      BitVector bits = BitVector::random(1 + rng.integer(600), rng);
      phylink::SymbolBlock block = phylink::qam_modulate(bits, order);
      CHECK(phylink::qam_demodulate(block, order) == bits);
    }
  }
  CHECK_THROWS_AS(phylink::qam_modulate(BitVector(8), 32), std::invalid_argument);
}

TEST_CASE("awgn: near-infinite SNR is a pass-through") {
  Rng rng(5);
  BitVector bits = BitVector::random(256, rng);
  phylink::SymbolBlock tx = phylink::qam_modulate(bits, 16);
  phylink::ChannelRealization ch;
  ch.snr_db = 1000.0;  // capped at 100 dB
  ch.noise_seed = 42;
  phylink::SymbolBlock rx = phylink::awgn_apply(tx, ch);
  for (std::size_t i = 0; i < tx.symbols.size(); ++i) {
    CHECK(std::abs(rx.symbols[i] - tx.symbols[i]) < 1e-4);
  }
}

TEST_CASE("awgn: sample noise variance within 1% at one million symbols") {
  phylink::SymbolBlock tx;
  tx.order = 4;
  tx.symbols.assign(1000000, {0.0, 0.0});
  phylink::ChannelRealization ch;
  ch.snr_db = 10.0;
  ch.noise_seed = 777;
  phylink::SymbolBlock rx = phylink::awgn_apply(tx, ch);
  double var = 0.0;
  for (const auto& s : rx.symbols) var += std::norm(s);
  var /= static_cast<double>(rx.symbols.size());
  CHECK(var == doctest::Approx(0.1).epsilon(0.01));
}

TEST_CASE("awgn: fixed seed reproduces noise exactly") {
  Rng rng(6);
  phylink::SymbolBlock tx = phylink::qam_modulate(BitVector::random(512, rng), 16);
  phylink::ChannelRealization ch;
  ch.snr_db = 8.0;
  ch.noise_seed = 99;
  phylink::SymbolBlock a = phylink::awgn_apply(tx, ch);
  phylink::SymbolBlock b = phylink::awgn_apply(tx, ch);
  for (std::size_t i = 0; i < a.symbols.size(); ++i) CHECK(a.symbols[i] == b.symbols[i]);
}

TEST_CASE("awgn: rayleigh fading with perfect equalization round-trips at high SNR") {
  Rng rng(15);
  BitVector bits = BitVector::random(400, rng);
  phylink::SymbolBlock tx = phylink::qam_modulate(bits, 16);
  phylink::ChannelRealization ch;
  ch.snr_db = 60.0;
  ch.noise_seed = 3;
  ch.fading = phylink::Fading::rayleigh_flat;
  phylink::SymbolBlock rx = phylink::awgn_apply(tx, ch);
  CHECK(phylink::qam_demodulate(rx, 16) == bits);
}

TEST_CASE("full pipeline is bit-exact when noiseless") {
  // quantize -> interleave -> packetize -> modulate -> demodulate ->
  // depacketize -> deinterleave -> dequantize (code-exact values).
  Rng rng(20);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t n = 24 + rng.integer(200);
    int b = 4;
    std::vector<double> values(n);
    for (double& v : values) v = rng.uniform(-1.0, 1.0);
    phylink::Quantized q = phylink::quantize(values, b, phylink::minmax_range(values));
    std::vector<std::size_t> pi = phylink::random_permutation(q.bits.size(), trial);
    BitVector k = phylink::interleave(q.bits, pi);
    for (std::size_t unit : {768u, 1024u}) {
      for (int order : {4, 16, 64}) {
        phylink::PacketStream packets = phylink::packetize(k, unit);
        std::vector<BitVector> rx_units;
        for (const BitVector& u : packets.units) {
          phylink::SymbolBlock sym = phylink::qam_modulate(u, order);
          rx_units.push_back(phylink::qam_demodulate(sym, order));
        }
        BitVector back = phylink::depacketize(rx_units, packets.pad_bits);
        CHECK(phylink::deinterleave(back, pi) == q.bits);
      }
    }
  }
}

TEST_CASE("ber: 16-QAM matches the closed-form oracle within 5% at 10 dB") {
  double gamma_db = 10.0;
  long nbits = 400000;  // quick version; the acceptance suite runs >= 1e6
  Rng rng(31);
  BitVector tx = BitVector::random(nbits, rng);
  phylink::SymbolBlock sym = phylink::qam_modulate(tx, 16);
  phylink::ChannelRealization ch;
  ch.snr_db = gamma_db;
  ch.noise_seed = 4242;
  BitVector rx = phylink::qam_demodulate(phylink::awgn_apply(sym, ch), 16);
  long errors = 0;
  for (std::size_t i = 0; i < tx.size(); ++i) errors += tx.get(i) != rx.get(i);
  double measured = static_cast<double>(errors) / nbits;
  double predicted = oracle::qam_ber(16, std::pow(10.0, gamma_db / 10.0));
  CHECK(std::abs(measured - predicted) / predicted < 0.05);
}

TEST_CASE("ber: monotone non-increasing in SNR") {
  Rng rng(32);
  long nbits = 200000;
  double prev = 1.0;
  for (double gamma_db = 0.0; gamma_db <= 20.0; gamma_db += 2.0) {
    BitVector tx = BitVector::random(nbits, rng);
    phylink::SymbolBlock sym = phylink::qam_modulate(tx, 16);
    phylink::ChannelRealization ch;
    ch.snr_db = gamma_db;
    ch.noise_seed = 10000 + static_cast<std::uint64_t>(gamma_db * 10);
    BitVector rx = phylink::qam_demodulate(phylink::awgn_apply(sym, ch), 16);
    long errors = 0;
    for (std::size_t i = 0; i < tx.size(); ++i) errors += tx.get(i) != rx.get(i);
    double ber = static_cast<double>(errors) / nbits;
    CHECK(ber <= prev + 1e-3);
    prev = ber;
  }
}

TEST_CASE("estimate_snr: noiseless pilots cap at 100 dB; short pilots throw") {
  std::vector<std::complex<double>> pilots(64, {1.0, 0.0});
  CHECK(phylink::estimate_snr(pilots, pilots) == 100.0);
  std::vector<std::complex<double>> small(8, {1.0, 0.0});
  CHECK_THROWS_AS(phylink::estimate_snr(small, small), std::invalid_argument);
}

TEST_CASE("estimate_snr: within half a dB at 4096 pilots over 100 seeds") {
  double gamma_db = 10.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    BitVector bits = BitVector::random(8192, rng);
    phylink::SymbolBlock tx = phylink::qam_modulate(bits, 4);
    REQUIRE(tx.symbols.size() == 4096);
    phylink::ChannelRealization ch;
    ch.snr_db = gamma_db;
    ch.noise_seed = seed + 555;
    phylink::SymbolBlock rx = phylink::awgn_apply(tx, ch);
    double est = phylink::estimate_snr(rx.symbols, tx.symbols);
    CHECK(std::abs(est - gamma_db) < 0.5);
  }
}

TEST_CASE("estimate_snr: unbiased within 0.1 dB at 1e5 pilots") {
  double gamma_db = 10.0;
  double mean_est = 0.0;
  int seeds = 20;
  for (int seed = 0; seed < seeds; ++seed) {
    Rng rng(900 + seed);
    BitVector bits = BitVector::random(200000, rng);
    phylink::SymbolBlock tx = phylink::qam_modulate(bits, 4);
    phylink::ChannelRealization ch;
    ch.snr_db = gamma_db;
    ch.noise_seed = 7000 + static_cast<std::uint64_t>(seed);
    phylink::SymbolBlock rx = phylink::awgn_apply(tx, ch);
    mean_est += phylink::estimate_snr(rx.symbols, tx.symbols);
  }
  mean_est /= seeds;
  CHECK(std::abs(mean_est - gamma_db) < 0.1);
}
