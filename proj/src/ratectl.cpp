#include "spat/ratectl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace spat::ratectl {

namespace {

// Round half to even; the budget formula lands exactly on .5 at gamma_mid.
double round_half_even(double x) {
  double floor_x = std::floor(x);
  double frac = x - floor_x;
  if (frac > 0.5) return floor_x + 1.0;
  if (frac < 0.5) return floor_x;
  return std::fmod(floor_x, 2.0) == 0.0 ? floor_x : floor_x + 1.0;
}

}  // namespace

int budget_from_snr(double gamma_db, const RateConfig& cfg) {
  if (!cfg.valid()) throw std::invalid_argument("budget_from_snr: invalid RateConfig");
  double s = 1.0 / (1.0 + std::exp(-(gamma_db - cfg.gamma_mid()) / cfg.tau));
  double raw = static_cast<double>(cfg.c_max) - s * static_cast<double>(cfg.c_max - cfg.c_min);
  int c_r = static_cast<int>(round_half_even(raw));
  return std::clamp(c_r, cfg.c_min, cfg.c_max);
}

std::vector<double> predict_importance(std::span<const double> v, double gamma_db,
                                       const ImportanceHead& head) {
  std::vector<double> pooled = numkit::group_mean_pool(v, head.pool_groups);
  std::vector<double> gamma_in = {gamma_db / 20.0};
  std::vector<double> emb = head.snr_embed.forward(gamma_in);
  pooled.insert(pooled.end(), emb.begin(), emb.end());
  return head.mlp.forward(pooled);
}

Selection topk_select(std::span<const double> v, std::span<const double> w, int c_r) {
  if (v.size() != w.size()) throw std::invalid_argument("topk_select: v/w size mismatch");
  if (c_r < 0 || static_cast<std::size_t>(c_r) > v.size()) {
    throw std::invalid_argument("topk_select: c_r out of range");
  }
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return w[a] > w[b]; });

  Selection sel;
  sel.mask.assign(v.size(), 0);
  for (int i = 0; i < c_r; ++i) sel.mask[order[static_cast<std::size_t>(i)]] = 1;
  sel.kept.reserve(static_cast<std::size_t>(c_r));
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (sel.mask[i]) sel.kept.push_back(v[i]);
  }
  return sel;
}

std::vector<double> zero_fill(std::span<const double> kept, std::span<const std::uint8_t> mask,
                              std::size_t m_t) {
  if (mask.size() != m_t) throw std::invalid_argument("zero_fill: mask length mismatch");
  std::size_t count = 0;
  for (std::uint8_t m : mask) count += m ? 1 : 0;
  if (count != kept.size()) throw std::invalid_argument("zero_fill: mask popcount mismatch");
  std::vector<double> out(m_t, 0.0);
  std::size_t k = 0;
  for (std::size_t i = 0; i < m_t; ++i) {
    if (mask[i]) out[i] = kept[k++];
  }
  return out;
}

double rate_loss(std::span<const double> w, int c_r, double alpha, double beta, int c_max) {
  if (w.size() != static_cast<std::size_t>(c_max)) {
    throw std::invalid_argument("rate_loss: w length must equal c_max");
  }
  double mean = 0.0;
  double bin = 0.0;
  for (double wi : w) {
    mean += wi;
    bin += wi * (1.0 - wi);
  }
  mean /= static_cast<double>(c_max);
  bin /= static_cast<double>(c_max);
  double ratio_err = mean - static_cast<double>(c_r) / static_cast<double>(c_max);
  return alpha * ratio_err * ratio_err + beta * bin;
}

void rate_loss_backward(std::span<const double> w, int c_r, double alpha, double beta, int c_max,
                        double upstream, std::span<double> g_w) {
  if (w.size() != static_cast<std::size_t>(c_max) || g_w.size() != w.size()) {
    throw std::invalid_argument("rate_loss_backward: shape mismatch");
  }
  double n = static_cast<double>(c_max);
  double mean = 0.0;
  for (double wi : w) mean += wi;
  mean /= n;
  double ratio_err = mean - static_cast<double>(c_r) / n;
  for (std::size_t i = 0; i < w.size(); ++i) {
    g_w[i] += upstream * (alpha * 2.0 * ratio_err / n + beta * (1.0 - 2.0 * w[i]) / n);
  }
}

}  // namespace spat::ratectl
