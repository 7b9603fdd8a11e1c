#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "spat/numkit.hpp"

namespace spat::ratectl {

struct RateConfig {
  int c_min = 24;
  int c_max = 192;
  double gamma_low = 8.0;
  double gamma_high = 20.0;
  double tau = 3.0;

  bool valid() const {
    return c_min >= 1 && c_min <= c_max && gamma_low < gamma_high && tau > 0.0;
  }
  double gamma_mid() const { return 0.5 * (gamma_low + gamma_high); }
};

struct RateDecision {
  int c_r = 0;
  std::vector<double> weights;       // soft channel weights in [0,1]^{c_max}
  std::vector<std::uint8_t> mask;    // exactly c_r entries set
};

// Logistic SNR-to-budget mapping, rounded half-to-even, clamped to [c_min, c_max].
int budget_from_snr(double gamma_db, const RateConfig& cfg);

// Channel-importance head: pooled feature descriptor concatenated with an SNR
// embedding, mapped through a sigmoid-terminated MLP to per-channel weights.
struct ImportanceHead {
  numkit::DenseNet snr_embed;  // [gamma/20] -> embedding
  numkit::DenseNet mlp;        // [pooled ++ embedding] -> c_max, sigmoid output
  std::size_t pool_groups = 16;
};

std::vector<double> predict_importance(std::span<const double> v, double gamma_db,
                                       const ImportanceHead& head);

struct Selection {
  std::vector<double> kept;        // selected values in ascending index order
  std::vector<std::uint8_t> mask;  // length of v
};

// Keeps the c_r largest weights; ties broken toward the lower index.
Selection topk_select(std::span<const double> v, std::span<const double> w, int c_r);

// Places kept values at their original indices, zeros elsewhere.
std::vector<double> zero_fill(std::span<const double> kept, std::span<const std::uint8_t> mask,
                              std::size_t m_t);

// alpha * (mean(w) - c_r/c_max)^2 + beta * mean(w * (1 - w))
double rate_loss(std::span<const double> w, int c_r, double alpha, double beta, int c_max);
// Gradient of rate_loss with respect to w, accumulated into g_w.
void rate_loss_backward(std::span<const double> w, int c_r, double alpha, double beta, int c_max,
                        double upstream, std::span<double> g_w);

}  // namespace spat::ratectl
