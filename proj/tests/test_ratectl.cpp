#include "spat/ratectl.hpp"

#include <cmath>

#include <stdexcept>

#include "doctest.h"
#include "support/oracles.hpp"

using namespace spat;
using ratectl::RateConfig;

namespace {

RateConfig table_config(double tau) {
  RateConfig cfg;
  cfg.c_min = 24;
  cfg.c_max = 192;
  cfg.gamma_low = 8.0;
  cfg.gamma_high = 20.0;
  cfg.tau = tau;
  return cfg;
}

}  // namespace

TEST_CASE("budget: logistic midpoint gives exactly 108") {
  for (double tau : {0.5, 1.0, 2.0, 3.0, 5.0}) {
    CHECK(ratectl::budget_from_snr(14.0, table_config(tau)) == 108);
  }
}

TEST_CASE("budget: sharp-tau endpoints saturate") {
  CHECK(ratectl::budget_from_snr(8.0, table_config(0.5)) == 192);
  CHECK(ratectl::budget_from_snr(20.0, table_config(0.5)) == 24);
}

TEST_CASE("budget: monotone non-increasing over the 0.06 dB grid") {
  for (double tau : {0.5, 1.0, 2.0, 3.0, 5.0}) {
    RateConfig cfg = table_config(tau);
    int prev = ratectl::budget_from_snr(8.0, cfg);
    for (int i = 1; i <= 200; ++i) {
      double gamma = static_cast<double>(800 + 6 * i) / 100.0;
      int cur = ratectl::budget_from_snr(gamma, cfg);
      CHECK(cur <= prev);
      prev = cur;
    }
  }
}

TEST_CASE("budget: smaller tau transitions at least as sharply") {
  double taus[] = {0.5, 1.0, 2.0, 3.0, 5.0};
  for (std::size_t a = 0; a + 1 < 5; ++a) {
    for (std::size_t b = a + 1; b < 5; ++b) {
      RateConfig sharp = table_config(taus[a]);
      RateConfig smooth = table_config(taus[b]);
      int drop_sharp = std::abs(ratectl::budget_from_snr(15.0, sharp) -
                                ratectl::budget_from_snr(13.0, sharp));
      int drop_smooth = std::abs(ratectl::budget_from_snr(15.0, smooth) -
                                 ratectl::budget_from_snr(13.0, smooth));
      CHECK(drop_sharp >= drop_smooth);
    }
  }
}

TEST_CASE("budget: always clamped to range, total function") {
  RateConfig cfg = table_config(3.0);
  for (double gamma : {-50.0, 0.0, 14.0, 50.0, 1000.0}) {
    int c = ratectl::budget_from_snr(gamma, cfg);
    CHECK(c >= cfg.c_min);
    CHECK(c <= cfg.c_max);
  }
}

TEST_CASE("topk: full rate keeps everything in order") {
  std::vector<double> v = {3.0, -1.0, 2.0, 0.5};
  std::vector<double> w = {0.2, 0.9, 0.4, 0.6};
  ratectl::Selection sel = ratectl::topk_select(v, w, 4);
  CHECK(sel.kept == v);
  for (std::uint8_t m : sel.mask) CHECK(m == 1);
}

TEST_CASE("topk: stated example") {
  std::vector<double> v = {9.0, 8.0, 7.0};
  std::vector<double> w = {0.1, 0.9, 0.5};
  ratectl::Selection sel = ratectl::topk_select(v, w, 2);
  CHECK(sel.mask == std::vector<std::uint8_t>{0, 1, 1});
  CHECK(sel.kept == std::vector<double>{8.0, 7.0});
}

TEST_CASE("topk: ties break toward the lower index") {
  std::vector<double> v = {1.0, 2.0};
  std::vector<double> w = {0.5, 0.5};
  ratectl::Selection sel = ratectl::topk_select(v, w, 1);
  CHECK(sel.mask == std::vector<std::uint8_t>{1, 0});
  CHECK(sel.kept == std::vector<double>{1.0});
}

TEST_CASE("zero_fill: examples and round trip") {
  std::vector<std::uint8_t> mask = {0, 1, 1};
  std::vector<double> kept = {8.0, 7.0};
  CHECK(ratectl::zero_fill(kept, mask, 3) == std::vector<double>{0.0, 8.0, 7.0});

  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> v(32);
    std::vector<double> w(32);
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = rng.uniform(-2.0, 2.0);
      w[i] = rng.uniform();
    }
    ratectl::Selection sel = ratectl::topk_select(v, w, 32);
    CHECK(ratectl::zero_fill(sel.kept, sel.mask, 32) == v);

    ratectl::Selection partial = ratectl::topk_select(v, w, 10);
    std::vector<double> filled = ratectl::zero_fill(partial.kept, partial.mask, 32);
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (partial.mask[i]) {
        CHECK(filled[i] == v[i]);
      } else {
        CHECK(filled[i] == 0.0);
      }
    }
  }
}

TEST_CASE("zero_fill: popcount mismatch throws") {
  std::vector<std::uint8_t> mask = {1, 0, 1};
  CHECK_THROWS_AS(ratectl::zero_fill(std::vector<double>{1.0}, mask, 3), std::invalid_argument);
}

TEST_CASE("rate_loss: zeros and stated arithmetic") {
  // Binary w with popcount c_r: both terms vanish.
  std::vector<double> w(8, 0.0);
  w[1] = w[4] = w[6] = 1.0;
  CHECK(ratectl::rate_loss(w, 3, 1.0, 1.0, 8) == 0.0);

  std::vector<double> half(8, 0.5);
  CHECK(ratectl::rate_loss(half, 4, 1.0, 1.0, 8) == doctest::Approx(0.25).epsilon(1e-15));

  std::vector<double> ones(8, 1.0);
  CHECK(ratectl::rate_loss(ones, 4, 1.0, 1.0, 8) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("rate_loss: non-negative, zero only at binary matched weights") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> w(16);
    for (double& v : w) v = rng.uniform();
    int c_r = 1 + static_cast<int>(rng.integer(16));
    double loss = ratectl::rate_loss(w, c_r, 1.0, 1.0, 16);
    CHECK(loss >= 0.0);
    if (loss == 0.0) {
      int pop = 0;
      for (double v : w) {
        CHECK((v == 0.0 || v == 1.0));
        pop += v == 1.0;
      }
      CHECK(pop == c_r);
    }
  }
}

TEST_CASE("rate_loss gradient matches finite differences") {
  Rng rng(23);
  std::vector<double> w(12);
  for (double& v : w) v = rng.uniform(0.05, 0.95);
  std::vector<double> grad(12, 0.0);
  ratectl::rate_loss_backward(w, 5, 1.0, 1.0, 12, 1.0, grad);
  std::vector<double> fd =
      oracle::central_diff(w, [&]() { return ratectl::rate_loss(w, 5, 1.0, 1.0, 12); }, 1e-6);
  CHECK(oracle::max_rel_error(grad, fd) < 1e-6);
}

TEST_CASE("predict_importance: sigmoid range and determinism") {
  Rng rng(31);
  ratectl::ImportanceHead head;
  head.pool_groups = 8;
  head.snr_embed = numkit::DenseNet::glorot({1, 4}, {numkit::Activation::relu}, rng);
  head.mlp = numkit::DenseNet::glorot({12, 16, 32},
                                      {numkit::Activation::relu, numkit::Activation::sigmoid},
                                      rng);
  std::vector<double> v(32);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  std::vector<double> w = ratectl::predict_importance(v, 12.0, head);
  REQUIRE(w.size() == 32);
  for (double wi : w) {
    CHECK(wi > 0.0);
    CHECK(wi < 1.0);
  }
  CHECK(ratectl::predict_importance(v, 12.0, head) == w);
}
