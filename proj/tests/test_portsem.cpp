#include "spat/portsem.hpp"

#include <cmath>

#include <stdexcept>

#include "doctest.h"

using namespace spat;
using numkit::Activation;
using numkit::DenseNet;

namespace {

portsem::PortEncoder make_encoder(int n_ports, int dim, int m_t, Rng& rng) {
  portsem::PortEncoder enc;
  enc.src_table = portsem::PortEmbeddingTable::make(n_ports, dim, rng);
  enc.dst_table = portsem::PortEmbeddingTable::make(n_ports, dim, rng);
  enc.src_branch = DenseNet::glorot({static_cast<std::size_t>(dim), 32,
                                     static_cast<std::size_t>(m_t)},
                                    {Activation::relu, Activation::sigmoid}, rng);
  enc.dst_branch = DenseNet::glorot({static_cast<std::size_t>(dim), 32,
                                     static_cast<std::size_t>(m_t)},
                                    {Activation::relu, Activation::sigmoid}, rng);
  return enc;
}

portsem::Identifier make_identifier(int m_t, int n_ports, Rng& rng) {
  portsem::Identifier id;
  std::size_t mt = static_cast<std::size_t>(m_t);
  id.attention = DenseNet::glorot({mt, mt}, {Activation::sigmoid}, rng);
  id.trunk = DenseNet::glorot({mt, 48}, {Activation::relu}, rng);
  id.head_src = DenseNet::glorot({48, static_cast<std::size_t>(n_ports)},
                                 {Activation::linear}, rng);
  id.head_dst = DenseNet::glorot({48, static_cast<std::size_t>(n_ports)},
                                 {Activation::linear}, rng);
  return id;
}

portsem::GateParams make_gate(int m_t, int n_ports, Rng& rng, bool zero_head) {
  portsem::GateParams gate;
  gate.table = portsem::PortEmbeddingTable::make(n_ports, 8, rng);
  gate.pool_groups = 8;
  gate.m_t = static_cast<std::size_t>(m_t);
  gate.mlp = DenseNet::glorot({gate.pool_groups + 8, 24, 2 * gate.m_t},
                              {Activation::relu, Activation::linear}, rng);
  if (zero_head) gate.mlp.zero_final_layer();
  return gate;
}

}  // namespace

TEST_CASE("embed_ports: table lookup semantics") {
  Rng rng(41);
  portsem::PortEncoder enc = make_encoder(16, 64, 48, rng);
  auto [e_s1, e_d1] = portsem::embed_ports({3, 9}, enc);
  auto [e_s2, e_d2] = portsem::embed_ports({3, 9}, enc);
  CHECK(e_s1 == e_s2);
  CHECK(e_d1 == e_d2);
  CHECK(e_s1.size() == 64);
  CHECK(e_d1.size() == 64);
  CHECK_THROWS_AS(portsem::embed_ports({16, 0}, enc), std::invalid_argument);
  CHECK_THROWS_AS(portsem::embed_ports({0, -1}, enc), std::invalid_argument);
}

TEST_CASE("embed_ports: distinct ports give distinct rows under random init") {
  Rng rng(43);
  portsem::PortEmbeddingTable table = portsem::PortEmbeddingTable::make(16, 64, rng);
  for (int a = 0; a < 16; ++a) {
    for (int b = a + 1; b < 16; ++b) {
      auto ra = table.row(a);
      auto rb = table.row(b);
      double dist = 0.0;
      for (int i = 0; i < 64; ++i) dist += (ra[i] - rb[i]) * (ra[i] - rb[i]);
      CHECK(dist > 1e-6);
    }
  }
}

TEST_CASE("synthesize_bias: alpha algebra") {
  Rng rng(47);
  portsem::PortEncoder enc = make_encoder(8, 16, 24, rng);
  auto [e_s, e_d] = portsem::embed_ports({2, 5}, enc);

  enc.alpha = {0.0, 0.0};
  std::vector<double> zero_bias = portsem::synthesize_bias(e_s, e_d, enc);
  for (double b : zero_bias) CHECK(b == 0.0);

  enc.alpha = {1.0, 0.0};
  std::vector<double> src_only = portsem::synthesize_bias(e_s, e_d, enc);
  std::vector<double> b_src = enc.src_branch.forward(e_s);
  for (std::size_t i = 0; i < src_only.size(); ++i) {
    CHECK(src_only[i] == doctest::Approx(portsem::branch_to_bias(b_src[i])).epsilon(1e-15));
  }

  enc.alpha = {1.0, 1.0};
  CHECK(portsem::synthesize_bias(e_s, e_d, enc).size() == 24);
}

TEST_CASE("inject_ports: additivity and exact inversion") {
  Rng rng(53);
  std::vector<double> x(32), b1(32), b2(32);
  for (std::size_t i = 0; i < 32; ++i) {
    x[i] = rng.uniform(-2.0, 2.0);
    b1[i] = rng.uniform(-1.0, 1.0);
    b2[i] = rng.uniform(-1.0, 1.0);
  }
  std::vector<double> zero(32, 0.0);
  CHECK(portsem::inject_ports(x, zero) == x);

  std::vector<double> sum(32);
  for (std::size_t i = 0; i < 32; ++i) sum[i] = b1[i] + b2[i];
  std::vector<double> twice = portsem::inject_ports(portsem::inject_ports(x, b1), b2);
  std::vector<double> once = portsem::inject_ports(x, sum);
  for (std::size_t i = 0; i < 32; ++i) {
    CHECK(std::abs(twice[i] - once[i]) <= 4e-16 * std::max(1.0, std::abs(once[i])));
  }

  // (x + bias) - bias recovers x within 1 ulp-scale tolerance.
  std::vector<double> u = portsem::inject_ports(x, b1);
  for (std::size_t i = 0; i < 32; ++i) {
    CHECK(std::abs((u[i] - b1[i]) - x[i]) <= 4e-16 * std::max(1.0, std::abs(x[i])));
  }
  CHECK_THROWS_AS(portsem::inject_ports(x, std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("identify_ports: modes, argmax, and logit widths") {
  Rng rng(59);
  portsem::Identifier id = make_identifier(32, 16, rng);
  std::vector<double> z(32);
  for (double& v : z) v = rng.uniform(-1.0, 1.0);

  portsem::IdentifyResult up = portsem::identify_ports(z, id, portsem::LinkMode::uplink);
  CHECK(up.src_logits.size() == 16);
  CHECK(up.dst_logits.size() == 16);
  portsem::IdentifyResult down = portsem::identify_ports(z, id, portsem::LinkMode::downlink);
  CHECK(down.dst_logits.empty());
  CHECK(down.src_logits == up.src_logits);

  int pred = portsem::predicted_port(up.src_logits);
  for (std::size_t i = 0; i < up.src_logits.size(); ++i) {
    CHECK(up.src_logits[static_cast<std::size_t>(pred)] >= up.src_logits[i]);
  }
}

TEST_CASE("identify_ports: adding a constant to all logits keeps the argmax") {
  Rng rng(61);
  portsem::Identifier id = make_identifier(24, 8, rng);
  std::vector<double> z(24);
  for (double& v : z) v = rng.uniform(-1.0, 1.0);
  portsem::IdentifyResult res = portsem::identify_ports(z, id, portsem::LinkMode::uplink);
  int before = portsem::predicted_port(res.src_logits);
  std::vector<double> shifted = res.src_logits;
  for (double& l : shifted) l += 123.5;
  CHECK(portsem::predicted_port(shifted) == before);
}

TEST_CASE("identify_ports: untrained accuracy is near 1/N over 1000 trials") {
  // Labels are independent of the untrained logits, so accuracy concentrates
  // at 1/N regardless of the net's own prediction bias.
  Rng rng(67);
  portsem::Identifier id = make_identifier(32, 16, rng);
  int hits = 0;
  int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    std::vector<double> z(32);
    for (double& v : z) v = rng.uniform(-1.0, 1.0);
    int label = static_cast<int>(rng.integer(16));
    portsem::IdentifyResult res = portsem::identify_ports(z, id, portsem::LinkMode::downlink);
    hits += portsem::predicted_port(res.src_logits) == label;
  }
  double p = 1.0 / 16.0;
  double sigma = std::sqrt(p * (1.0 - p) / trials);
  CHECK(std::abs(static_cast<double>(hits) / trials - p) < 3.0 * sigma);
}

TEST_CASE("conditional_gate: zero-initialized head is the exact identity") {
  Rng rng(71);
  portsem::GateParams gate = make_gate(32, 8, rng, true);
  std::vector<double> z(32);
  for (double& v : z) v = rng.uniform(-2.0, 2.0);
  CHECK(portsem::conditional_gate(z, 3, gate) == z);
}

TEST_CASE("conditional_gate: output length preserved, port range enforced") {
  Rng rng(73);
  portsem::GateParams gate = make_gate(32, 8, rng, false);
  std::vector<double> z(32);
  for (double& v : z) v = rng.uniform(-1.0, 1.0);
  CHECK(portsem::conditional_gate(z, 0, gate).size() == 32);
  CHECK_THROWS_AS(portsem::conditional_gate(z, 8, gate), std::invalid_argument);
  CHECK_THROWS_AS(portsem::conditional_gate(z, -1, gate), std::invalid_argument);
}

TEST_CASE("conditional_gate: different local ports modulate differently") {
  Rng rng(79);
  portsem::GateParams gate = make_gate(32, 8, rng, false);
  std::vector<double> z(32);
  for (double& v : z) v = rng.uniform(-1.0, 1.0);
  std::vector<double> a = portsem::conditional_gate(z, 1, gate);
  std::vector<double> b = portsem::conditional_gate(z, 2, gate);
  double diff = 0.0;
  for (std::size_t i = 0; i < 32; ++i) diff += std::abs(a[i] - b[i]);
  CHECK(diff > 1e-9);
}
