#include "spat/portsem.hpp"

#include <algorithm>
#include <stdexcept>

namespace spat::portsem {

PortEmbeddingTable PortEmbeddingTable::make(int n_ports, int dim, Rng& rng) {
  PortEmbeddingTable t;
  t.n_ports = n_ports;
  t.dim = dim;
  t.rows.resize(static_cast<std::size_t>(n_ports) * static_cast<std::size_t>(dim));
  double bound = std::sqrt(6.0 / static_cast<double>(n_ports + dim));
  for (double& v : t.rows) v = rng.uniform(-bound, bound);
  return t;
}

std::span<const double> PortEmbeddingTable::row(int port) const {
  if (port < 0 || port >= n_ports) throw std::invalid_argument("port index out of range");
  return {rows.data() + static_cast<std::size_t>(port) * static_cast<std::size_t>(dim),
          static_cast<std::size_t>(dim)};
}

std::span<double> PortEmbeddingTable::row(int port) {
  if (port < 0 || port >= n_ports) throw std::invalid_argument("port index out of range");
  return {rows.data() + static_cast<std::size_t>(port) * static_cast<std::size_t>(dim),
          static_cast<std::size_t>(dim)};
}

std::pair<std::vector<double>, std::vector<double>> embed_ports(PortPair ports,
                                                                const PortEncoder& enc) {
  auto es = enc.src_table.row(ports.src);
  auto ed = enc.dst_table.row(ports.dst);
  return {std::vector<double>(es.begin(), es.end()), std::vector<double>(ed.begin(), ed.end())};
}

std::vector<double> synthesize_bias(std::span<const double> e_src, std::span<const double> e_dst,
                                    const PortEncoder& enc) {
  std::vector<double> b_src = enc.src_branch.forward(e_src);
  std::vector<double> b_dst = enc.dst_branch.forward(e_dst);
  if (b_src.size() != b_dst.size()) {
    throw std::invalid_argument("synthesize_bias: branch output dims differ");
  }
  std::vector<double> bias(b_src.size());
  for (std::size_t i = 0; i < bias.size(); ++i) {
    bias[i] =
        enc.alpha_src() * branch_to_bias(b_src[i]) + enc.alpha_dst() * branch_to_bias(b_dst[i]);
  }
  return bias;
}

std::vector<double> inject_ports(std::span<const double> x, std::span<const double> bias) {
  if (x.size() != bias.size()) throw std::invalid_argument("inject_ports: length mismatch");
  std::vector<double> u(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) u[i] = x[i] + bias[i];
  return u;
}

IdentifyResult identify_ports(std::span<const double> z_hat, const Identifier& id,
                              LinkMode mode) {
  std::vector<double> att = id.attention.forward(z_hat);
  std::vector<double> attended(z_hat.size());
  for (std::size_t i = 0; i < z_hat.size(); ++i) attended[i] = z_hat[i] * att[i];
  std::vector<double> latent = id.trunk.forward(attended);
  IdentifyResult res;
  res.src_logits = id.head_src.forward(latent);
  if (mode == LinkMode::uplink) res.dst_logits = id.head_dst.forward(latent);
  return res;
}

int predicted_port(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("predicted_port: empty logits");
  return static_cast<int>(
      std::distance(logits.begin(), std::max_element(logits.begin(), logits.end())));
}

std::vector<double> conditional_gate(std::span<const double> z_hat, int p_d_local,
                                     const GateParams& gate) {
  if (z_hat.size() != gate.m_t) throw std::invalid_argument("conditional_gate: feature length");
  std::vector<double> pooled = numkit::group_mean_pool(z_hat, gate.pool_groups);
  auto emb = gate.table.row(p_d_local);
  pooled.insert(pooled.end(), emb.begin(), emb.end());
  std::vector<double> mod = gate.mlp.forward(pooled);
  if (mod.size() != 2 * gate.m_t) throw std::invalid_argument("conditional_gate: head width");
  std::vector<double> out(gate.m_t);
  for (std::size_t i = 0; i < gate.m_t; ++i) {
    out[i] = z_hat[i] * (1.0 + mod[i]) + mod[gate.m_t + i];
  }
  return out;
}

}  // namespace spat::portsem
