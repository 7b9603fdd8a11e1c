#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spat/rng.hpp"

namespace spat::numkit {

enum class Activation { linear, relu, sigmoid, softmax };

const char* activation_name(Activation act);
Activation activation_from_name(const std::string& name);

// Flat container for shaped real data. Most kernel functions work on spans;
// Tensor is used where the shape matters (images, checkpoints).
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  static Tensor vector(std::vector<double> values);
  std::size_t element_count() const;
  bool consistent() const;  // product(shape) == data.size() and all finite
};

struct LayerSpec {
  std::size_t in = 0;
  std::size_t out = 0;
  Activation act = Activation::linear;
  std::size_t weight_offset = 0;  // into the flat parameter vector, row-major out x in
  std::size_t bias_offset = 0;
};

struct ForwardTrace {
  std::vector<std::vector<double>> inputs;   // inputs[l] = input vector of layer l
  std::vector<std::vector<double>> preacts;  // preacts[l] = W x + b
  std::vector<double> output;
};

// Sequential stack of dense layers over one flat parameter vector.
// Immutable during inference; training mutates params through params().
class DenseNet {
 public:
  DenseNet() = default;
  // dims = {in, h1, ..., out}; acts has dims.size()-1 entries. Params zeroed.
  DenseNet(const std::vector<std::size_t>& dims, const std::vector<Activation>& acts);
  // Glorot-uniform weights, zero biases.
  static DenseNet glorot(const std::vector<std::size_t>& dims,
                         const std::vector<Activation>& acts, Rng& rng);

  bool empty() const { return layers_.empty(); }
  std::size_t input_dim() const;
  std::size_t output_dim() const;
  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  std::size_t param_count() const { return params_.size(); }

  double weight(std::size_t layer, std::size_t row, std::size_t col) const;
  void set_weight(std::size_t layer, std::size_t row, std::size_t col, double v);
  void set_bias(std::size_t layer, std::size_t row, double v);
  // Zero the last layer's weights and bias (identity start for modulation heads).
  void zero_final_layer();

  std::vector<double> forward(std::span<const double> x) const;
  ForwardTrace forward_trace(std::span<const double> x) const;
  // Accumulates parameter gradients into grad (length param_count()) and
  // returns the gradient with respect to the input vector.
  std::vector<double> backward(const ForwardTrace& trace, std::span<const double> upstream,
                               std::span<double> grad) const;

 private:
  std::vector<LayerSpec> layers_;
  std::vector<double> params_;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
};

// Standard bias-corrected Adam update. Throws on non-finite gradients.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamConfig& cfg);

struct LossResult {
  double value = 0.0;
  std::vector<double> grad;  // with respect to the first argument
};

LossResult mse_loss(std::span<const double> a, std::span<const double> b);
LossResult softmax_xent(std::span<const double> logits, std::size_t label);
std::vector<double> softmax(std::span<const double> logits);

// Max relative error between analytic and central-difference gradients of
// F(theta) = sum(forward(x)) over all parameters. Relative error uses an
// absolute floor of 1e-6 in the denominator.
double finite_diff_check(DenseNet& net, std::span<const double> x, double eps);

// Mean over contiguous groups; v.size() must be divisible by groups.
std::vector<double> group_mean_pool(std::span<const double> v, std::size_t groups);
// Adjoint of group_mean_pool: distributes g_pooled evenly, accumulating into g_v.
void group_mean_pool_backward(std::span<const double> g_pooled, std::size_t n,
                              std::span<double> g_v);

}  // namespace spat::numkit
