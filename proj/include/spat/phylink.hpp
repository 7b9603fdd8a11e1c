#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <vector>

#include "spat/rng.hpp"

namespace spat::phylink {

// Bit-packed sequence (LSB of byte 0 is bit 0).
class BitVector {
 public:
  BitVector() = default;
  explicit BitVector(std::size_t nbits) : bytes_((nbits + 7) / 8, 0), nbits_(nbits) {}

  std::size_t size() const { return nbits_; }
  bool empty() const { return nbits_ == 0; }

  int get(std::size_t i) const { return (bytes_[i >> 3] >> (i & 7)) & 1; }
  void set(std::size_t i, int v) {
    if (v) {
      bytes_[i >> 3] |= static_cast<std::uint8_t>(1u << (i & 7));
    } else {
      bytes_[i >> 3] &= static_cast<std::uint8_t>(~(1u << (i & 7)));
    }
  }
  void push_back(int v) {
    if ((nbits_ & 7) == 0) bytes_.push_back(0);
    ++nbits_;
    set(nbits_ - 1, v);
  }
  void append(const BitVector& other) {
    for (std::size_t i = 0; i < other.size(); ++i) push_back(other.get(i));
  }
  BitVector slice(std::size_t begin, std::size_t end) const;
  void flip(std::size_t i) { set(i, 1 - get(i)); }

  bool operator==(const BitVector& other) const {
    if (nbits_ != other.nbits_) return false;
    for (std::size_t i = 0; i < nbits_; ++i) {
      if (get(i) != other.get(i)) return false;
    }
    return true;
  }

  static BitVector random(std::size_t nbits, Rng& rng);

 private:
  std::vector<std::uint8_t> bytes_;
  std::size_t nbits_ = 0;
};

struct QuantRange {
  double lo = 0.0;
  double hi = 1.0;
  bool degenerate = false;  // hi == lo on input; all codes forced to zero
};

struct Quantized {
  BitVector bits;
  QuantRange range;
  int bits_per_value = 0;
};

QuantRange minmax_range(std::span<const double> values);

// Uniform b-bit quantizer over [lo, hi]; values clamped, codes emitted MSB first.
Quantized quantize(std::span<const double> values, int b, QuantRange range);
std::vector<double> dequantize(const BitVector& bits, int b, QuantRange range);

// Seeded Fisher-Yates permutation of [0, n).
std::vector<std::size_t> random_permutation(std::size_t n, std::uint64_t seed);

// output[i] = input[pi[i]]; deinterleave inverts exactly.
BitVector interleave(const BitVector& bits, std::span<const std::size_t> pi);
BitVector deinterleave(const BitVector& bits, std::span<const std::size_t> pi);

struct PacketStream {
  std::vector<BitVector> units;  // each exactly L bits
  std::size_t pad_bits = 0;      // zero padding appended to the final unit
  bool empty_input = false;
};

PacketStream packetize(const BitVector& bits, std::size_t unit_bits);
BitVector depacketize(const std::vector<BitVector>& units, std::size_t pad_bits);

struct SymbolBlock {
  std::vector<std::complex<double>> symbols;
  int order = 4;              // M of M-QAM
  std::size_t pad_bits = 0;   // zero bits appended to fill the final symbol
};

// Gray-mapped square constellation with unit average symbol energy. Orders 4/16/64.
SymbolBlock qam_modulate(const BitVector& bits, int order);
// Minimum-distance hard decision; trims the block's recorded pad bits.
BitVector qam_demodulate(const SymbolBlock& block, int order);

enum class Fading { none, rayleigh_flat };

struct ChannelRealization {
  double snr_db = 20.0;
  std::uint64_t noise_seed = 0;
  Fading fading = Fading::none;
};

// Complex AWGN with per-symbol noise variance 10^(-snr/10) (unit signal energy).
// Rayleigh fading applies one CN(0,1) gain per block, perfectly equalized.
SymbolBlock awgn_apply(const SymbolBlock& block, const ChannelRealization& ch);

// 10*log10(signal power / residual power) from known pilots; capped at 100 dB.
double estimate_snr(std::span<const std::complex<double>> rx,
                    std::span<const std::complex<double>> tx);

}  // namespace spat::phylink
