#pragma once

#include <array>
#include <span>
#include <utility>
#include <vector>

#include "spat/numkit.hpp"

namespace spat::portsem {

struct PortPair {
  int src = 0;
  int dst = 0;
};

// Learnable per-port embedding rows, one table per role.
struct PortEmbeddingTable {
  int n_ports = 0;
  int dim = 0;
  std::vector<double> rows;  // n_ports x dim, row-major

  static PortEmbeddingTable make(int n_ports, int dim, Rng& rng);
  std::span<const double> row(int port) const;
  std::span<double> row(int port);
};

// Transmitter side: embeddings -> per-role branch MLPs -> weighted bias sum.
// Branch outputs pass through a sigmoid layer and are mapped to (-1, 1).
struct PortEncoder {
  PortEmbeddingTable src_table;
  PortEmbeddingTable dst_table;
  numkit::DenseNet src_branch;  // dim -> m_t, sigmoid output
  numkit::DenseNet dst_branch;
  std::array<double, 2> alpha = {1.0, 1.0};  // learnable {alpha_src, alpha_dst}

  double alpha_src() const { return alpha[0]; }
  double alpha_dst() const { return alpha[1]; }
};

std::pair<std::vector<double>, std::vector<double>> embed_ports(PortPair ports,
                                                                const PortEncoder& enc);

// bias = alpha_src * b_src + alpha_dst * b_dst with b = 2*sigmoid(branch) - 1.
std::vector<double> synthesize_bias(std::span<const double> e_src, std::span<const double> e_dst,
                                    const PortEncoder& enc);

// u = x + bias, element-wise.
std::vector<double> inject_ports(std::span<const double> x, std::span<const double> bias);

// Maps a raw sigmoid-layer output y in (0,1) to the bias range (-1,1).
inline double branch_to_bias(double y) { return 2.0 * y - 1.0; }

enum class LinkMode { uplink, downlink };

// Receiver side: attention scores from the feature, element-wise gating, shared
// trunk, then one classifier head per required port role.
struct Identifier {
  numkit::DenseNet attention;  // m_t -> m_t, sigmoid
  numkit::DenseNet trunk;      // m_t -> hidden, relu
  numkit::DenseNet head_src;   // hidden -> n_ports, linear
  numkit::DenseNet head_dst;
};

struct IdentifyResult {
  std::vector<double> src_logits;
  std::vector<double> dst_logits;  // empty in downlink mode
};

IdentifyResult identify_ports(std::span<const double> z_hat, const Identifier& id, LinkMode mode);
int predicted_port(std::span<const double> logits);

// Destination-conditioned FiLM gate. The modulation MLP consumes the pooled
// feature descriptor concatenated with the local-port embedding and emits
// (gamma, beta), each of length m_t; the head is zero-initialized so the gate
// starts as the identity map.
struct GateParams {
  PortEmbeddingTable table;
  numkit::DenseNet mlp;  // [pooled ++ embedding] -> 2 * m_t, linear output
  std::size_t pool_groups = 16;
  std::size_t m_t = 0;
};

std::vector<double> conditional_gate(std::span<const double> z_hat, int p_d_local,
                                     const GateParams& gate);

}  // namespace spat::portsem
