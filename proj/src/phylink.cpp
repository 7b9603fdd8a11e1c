#include "spat/phylink.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace spat::phylink {

BitVector BitVector::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > nbits_) throw std::invalid_argument("BitVector::slice: bad range");
  BitVector out(end - begin);
  for (std::size_t i = begin; i < end; ++i) out.set(i - begin, get(i));
  return out;
}

BitVector BitVector::random(std::size_t nbits, Rng& rng) {
  BitVector out(nbits);
  for (std::size_t i = 0; i < nbits; ++i) out.set(i, static_cast<int>(rng.integer(2)));
  return out;
}

QuantRange minmax_range(std::span<const double> values) {
  QuantRange r;
  if (values.empty()) return r;
  auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  r.lo = *lo;
  r.hi = *hi;
  r.degenerate = (r.hi == r.lo);
  return r;
}

Quantized quantize(std::span<const double> values, int b, QuantRange range) {
  if (b < 2 || b > 8) throw std::invalid_argument("quantize: bits per value must be in [2, 8]");
  Quantized q;
  q.bits_per_value = b;
  q.range = range;
  q.bits = BitVector(values.size() * static_cast<std::size_t>(b));
  if (range.hi <= range.lo) {
    // Degenerate range: all-zero codes, flagged; dequantize recovers lo.
    q.range.degenerate = true;
    q.range.hi = q.range.lo;
    return q;
  }
  q.range.degenerate = false;
  const int levels = (1 << b) - 1;
  std::size_t pos = 0;
  for (double v : values) {
    double norm = (v - range.lo) / (range.hi - range.lo);
    norm = std::clamp(norm, 0.0, 1.0);
    int code = static_cast<int>(std::lround(norm * levels));
    for (int k = b - 1; k >= 0; --k) q.bits.set(pos++, (code >> k) & 1);
  }
  return q;
}

std::vector<double> dequantize(const BitVector& bits, int b, QuantRange range) {
  if (b < 2 || b > 8) throw std::invalid_argument("dequantize: bits per value must be in [2, 8]");
  if (bits.size() % static_cast<std::size_t>(b) != 0) {
    throw std::invalid_argument("dequantize: bit length not divisible by b");
  }
  const int levels = (1 << b) - 1;
  std::vector<double> out(bits.size() / static_cast<std::size_t>(b));
  std::size_t pos = 0;
  for (double& v : out) {
    int code = 0;
    for (int k = 0; k < b; ++k) code = (code << 1) | bits.get(pos++);
    v = range.degenerate
            ? range.lo
            : range.lo + (range.hi - range.lo) * static_cast<double>(code) / levels;
  }
  return out;
}

std::vector<std::size_t> random_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> pi(n);
  for (std::size_t i = 0; i < n; ++i) pi[i] = i;
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = rng.integer(i);
    std::swap(pi[i - 1], pi[j]);
  }
  return pi;
}

namespace {

void check_permutation(std::span<const std::size_t> pi, std::size_t n) {
  if (pi.size() != n) throw std::invalid_argument("interleave: permutation length mismatch");
  std::vector<std::uint8_t> seen(n, 0);
  for (std::size_t p : pi) {
    if (p >= n || seen[p]) throw std::invalid_argument("interleave: not a permutation");
    seen[p] = 1;
  }
}

}  // namespace

BitVector interleave(const BitVector& bits, std::span<const std::size_t> pi) {
  check_permutation(pi, bits.size());
  BitVector out(bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) out.set(i, bits.get(pi[i]));
  return out;
}

BitVector deinterleave(const BitVector& bits, std::span<const std::size_t> pi) {
  check_permutation(pi, bits.size());
  BitVector out(bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) out.set(pi[i], bits.get(i));
  return out;
}

PacketStream packetize(const BitVector& bits, std::size_t unit_bits) {
  if (unit_bits == 0) throw std::invalid_argument("packetize: unit length must be positive");
  PacketStream stream;
  if (bits.empty()) {
    stream.empty_input = true;
    return stream;
  }
  std::size_t count = (bits.size() + unit_bits - 1) / unit_bits;
  stream.pad_bits = count * unit_bits - bits.size();
  stream.units.reserve(count);
  for (std::size_t u = 0; u < count; ++u) {
    BitVector unit(unit_bits);
    for (std::size_t i = 0; i < unit_bits; ++i) {
      std::size_t src = u * unit_bits + i;
      unit.set(i, src < bits.size() ? bits.get(src) : 0);
    }
    stream.units.push_back(std::move(unit));
  }
  return stream;
}

BitVector depacketize(const std::vector<BitVector>& units, std::size_t pad_bits) {
  BitVector out;
  for (const BitVector& unit : units) out.append(unit);
  if (pad_bits > 0) {
    if (units.empty() || pad_bits >= units.front().size()) {
      throw std::invalid_argument("depacketize: pad exceeds unit length");
    }
    out = out.slice(0, out.size() - pad_bits);
  }
  return out;
}

namespace {

int bits_per_symbol(int order) {
  switch (order) {
    case 4: return 2;
    case 16: return 4;
    case 64: return 6;
    default: throw std::invalid_argument("qam: unsupported modulation order");
  }
}

int gray_to_binary(int g) {
  int b = 0;
  for (; g; g >>= 1) b ^= g;
  return b;
}

int binary_to_gray(int b) { return b ^ (b >> 1); }

// Energy-normalizing scale so that the full constellation has unit mean power.
double qam_scale(int order) { return std::sqrt(3.0 / (2.0 * (order - 1))); }

// Per-axis amplitude for an m-bit Gray label (levels -(L-1), ..., -1, 1, ..., L-1).
double axis_level(int gray_label, int axis_bits) {
  int idx = gray_to_binary(gray_label);
  int levels = 1 << axis_bits;
  return static_cast<double>(2 * idx - (levels - 1));
}

int axis_decide(double value, int axis_bits) {
  int levels = 1 << axis_bits;
  int idx = static_cast<int>(std::lround((value + (levels - 1)) / 2.0));
  idx = std::clamp(idx, 0, levels - 1);
  return binary_to_gray(idx);
}

}  // namespace

SymbolBlock qam_modulate(const BitVector& bits, int order) {
  int k = bits_per_symbol(order);
  int axis_bits = k / 2;
  SymbolBlock block;
  block.order = order;
  std::size_t padded = bits.size();
  if (padded % static_cast<std::size_t>(k) != 0) {
    block.pad_bits = k - padded % static_cast<std::size_t>(k);
    padded += block.pad_bits;
  }
  double scale = qam_scale(order);
  block.symbols.reserve(padded / static_cast<std::size_t>(k));
  for (std::size_t pos = 0; pos < padded; pos += static_cast<std::size_t>(k)) {
    int gi = 0;
    int gq = 0;
    for (int j = 0; j < axis_bits; ++j) {
      std::size_t idx = pos + static_cast<std::size_t>(j);
      gi = (gi << 1) | (idx < bits.size() ? bits.get(idx) : 0);
    }
    for (int j = 0; j < axis_bits; ++j) {
      std::size_t idx = pos + static_cast<std::size_t>(axis_bits + j);
      gq = (gq << 1) | (idx < bits.size() ? bits.get(idx) : 0);
    }
    block.symbols.emplace_back(scale * axis_level(gi, axis_bits),
                               scale * axis_level(gq, axis_bits));
  }
  return block;
}

BitVector qam_demodulate(const SymbolBlock& block, int order) {
  if (order != block.order) throw std::invalid_argument("qam_demodulate: order mismatch");
  int k = bits_per_symbol(order);
  int axis_bits = k / 2;
  double scale = qam_scale(order);
  BitVector bits(block.symbols.size() * static_cast<std::size_t>(k));
  std::size_t pos = 0;
  for (const std::complex<double>& s : block.symbols) {
    int gi = axis_decide(s.real() / scale, axis_bits);
    int gq = axis_decide(s.imag() / scale, axis_bits);
    for (int j = axis_bits - 1; j >= 0; --j) bits.set(pos++, (gi >> j) & 1);
    for (int j = axis_bits - 1; j >= 0; --j) bits.set(pos++, (gq >> j) & 1);
  }
  if (block.pad_bits > 0) bits = bits.slice(0, bits.size() - block.pad_bits);
  return bits;
}

SymbolBlock awgn_apply(const SymbolBlock& block, const ChannelRealization& ch) {
  if (!std::isfinite(ch.snr_db)) throw std::invalid_argument("awgn_apply: non-finite SNR");
  double snr_db = std::min(ch.snr_db, 100.0);
  double sigma2 = std::pow(10.0, -snr_db / 10.0);
  double sigma_axis = std::sqrt(sigma2 / 2.0);
  Rng rng(ch.noise_seed);

  SymbolBlock out = block;
  if (ch.fading == Fading::rayleigh_flat) {
    // One CN(0,1) gain per block, perfectly equalized: noise is divided by |h|.
    std::complex<double> h(rng.gaussian() / std::sqrt(2.0), rng.gaussian() / std::sqrt(2.0));
    for (std::complex<double>& s : out.symbols) {
      std::complex<double> noise(sigma_axis * rng.gaussian(), sigma_axis * rng.gaussian());
      s = (h * s + noise) / h;
    }
  } else {
    for (std::complex<double>& s : out.symbols) {
      s += std::complex<double>(sigma_axis * rng.gaussian(), sigma_axis * rng.gaussian());
    }
  }
  return out;
}

double estimate_snr(std::span<const std::complex<double>> rx,
                    std::span<const std::complex<double>> tx) {
  if (rx.size() != tx.size()) throw std::invalid_argument("estimate_snr: pilot length mismatch");
  if (rx.size() < 64) throw std::invalid_argument("estimate_snr: need at least 64 pilots");
  double signal = 0.0;
  double residual = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    signal += std::norm(tx[i]);
    residual += std::norm(rx[i] - tx[i]);
  }
  if (residual <= 0.0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(signal / residual));
}

}  // namespace spat::phylink
