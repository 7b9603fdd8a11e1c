#include "spat/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace spat::numkit {

const char* activation_name(Activation act) {
  switch (act) {
    case Activation::linear: return "linear";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::softmax: return "softmax";
  }
  return "linear";
}

Activation activation_from_name(const std::string& name) {
  if (name == "linear") return Activation::linear;
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "softmax") return Activation::softmax;
  throw std::invalid_argument("unknown activation: " + name);
}

Tensor Tensor::vector(std::vector<double> values) {
  Tensor t;
  t.shape = {values.size()};
  t.data = std::move(values);
  return t;
}

std::size_t Tensor::element_count() const {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

bool Tensor::consistent() const {
  if (element_count() != data.size()) return false;
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

DenseNet::DenseNet(const std::vector<std::size_t>& dims, const std::vector<Activation>& acts) {
  if (dims.size() < 2 || acts.size() != dims.size() - 1) {
    throw std::invalid_argument("DenseNet: dims/activations mismatch");
  }
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    LayerSpec spec;
    spec.in = dims[l];
    spec.out = dims[l + 1];
    spec.act = acts[l];
    spec.weight_offset = offset;
    offset += spec.in * spec.out;
    spec.bias_offset = offset;
    offset += spec.out;
    layers_.push_back(spec);
  }
  params_.assign(offset, 0.0);
}

DenseNet DenseNet::glorot(const std::vector<std::size_t>& dims,
                          const std::vector<Activation>& acts, Rng& rng) {
  DenseNet net(dims, acts);
  for (const LayerSpec& l : net.layers_) {
    double bound = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
    for (std::size_t i = 0; i < l.in * l.out; ++i) {
      net.params_[l.weight_offset + i] = rng.uniform(-bound, bound);
    }
  }
  return net;
}

std::size_t DenseNet::input_dim() const {
  return layers_.empty() ? 0 : layers_.front().in;
}

std::size_t DenseNet::output_dim() const {
  return layers_.empty() ? 0 : layers_.back().out;
}

double DenseNet::weight(std::size_t layer, std::size_t row, std::size_t col) const {
  const LayerSpec& l = layers_.at(layer);
  return params_[l.weight_offset + row * l.in + col];
}

void DenseNet::set_weight(std::size_t layer, std::size_t row, std::size_t col, double v) {
  const LayerSpec& l = layers_.at(layer);
  params_[l.weight_offset + row * l.in + col] = v;
}

void DenseNet::set_bias(std::size_t layer, std::size_t row, double v) {
  const LayerSpec& l = layers_.at(layer);
  params_[l.bias_offset + row] = v;
}

void DenseNet::zero_final_layer() {
  if (layers_.empty()) return;
  const LayerSpec& l = layers_.back();
  std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(l.weight_offset), l.in * l.out, 0.0);
  std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(l.bias_offset), l.out, 0.0);
}

namespace {

void apply_activation(Activation act, std::span<const double> pre, std::vector<double>& out) {
  out.resize(pre.size());
  switch (act) {
    case Activation::linear:
      std::copy(pre.begin(), pre.end(), out.begin());
      break;
    case Activation::relu:
      for (std::size_t i = 0; i < pre.size(); ++i) out[i] = pre[i] > 0.0 ? pre[i] : 0.0;
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < pre.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-pre[i]));
      break;
    case Activation::softmax: {
      double mx = *std::max_element(pre.begin(), pre.end());
      double sum = 0.0;
      for (std::size_t i = 0; i < pre.size(); ++i) {
        out[i] = std::exp(pre[i] - mx);
        sum += out[i];
      }
      for (double& v : out) v /= sum;
      break;
    }
  }
}

}  // namespace

std::vector<double> DenseNet::forward(std::span<const double> x) const {
  if (layers_.empty()) throw std::invalid_argument("DenseNet::forward: empty net");
  if (x.size() != input_dim()) throw std::invalid_argument("DenseNet::forward: input dim mismatch");
  std::vector<double> cur(x.begin(), x.end());
  std::vector<double> pre, act;
  for (const LayerSpec& l : layers_) {
    pre.assign(l.out, 0.0);
    const double* w = params_.data() + l.weight_offset;
    const double* b = params_.data() + l.bias_offset;
    for (std::size_t r = 0; r < l.out; ++r) {
      double acc = b[r];
      const double* wr = w + r * l.in;
      for (std::size_t c = 0; c < l.in; ++c) acc += wr[c] * cur[c];
      pre[r] = acc;
    }
    apply_activation(l.act, pre, act);
    cur = act;
  }
  return cur;
}

ForwardTrace DenseNet::forward_trace(std::span<const double> x) const {
  if (layers_.empty()) throw std::invalid_argument("DenseNet::forward_trace: empty net");
  if (x.size() != input_dim()) {
    throw std::invalid_argument("DenseNet::forward_trace: input dim mismatch");
  }
  ForwardTrace trace;
  trace.inputs.reserve(layers_.size());
  trace.preacts.reserve(layers_.size());
  std::vector<double> cur(x.begin(), x.end());
  for (const LayerSpec& l : layers_) {
    trace.inputs.push_back(cur);
    std::vector<double> pre(l.out, 0.0);
    const double* w = params_.data() + l.weight_offset;
    const double* b = params_.data() + l.bias_offset;
    for (std::size_t r = 0; r < l.out; ++r) {
      double acc = b[r];
      const double* wr = w + r * l.in;
      for (std::size_t c = 0; c < l.in; ++c) acc += wr[c] * cur[c];
      pre[r] = acc;
    }
    apply_activation(l.act, pre, cur);
    trace.preacts.push_back(std::move(pre));
  }
  trace.output = cur;
  return trace;
}

std::vector<double> DenseNet::backward(const ForwardTrace& trace, std::span<const double> upstream,
                                       std::span<double> grad) const {
  if (trace.inputs.size() != layers_.size()) {
    throw std::invalid_argument("DenseNet::backward: trace/net mismatch");
  }
  if (upstream.size() != output_dim()) {
    throw std::invalid_argument("DenseNet::backward: upstream dim mismatch");
  }
  if (grad.size() != params_.size()) {
    throw std::invalid_argument("DenseNet::backward: gradient buffer size mismatch");
  }
  std::vector<double> d(upstream.begin(), upstream.end());
  std::vector<double> g_pre;
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const LayerSpec& l = layers_[li];
    const std::vector<double>& x = trace.inputs[li];
    const std::vector<double>& pre = trace.preacts[li];
    // Activation output of this layer:
    const std::vector<double>& y =
        (li + 1 == layers_.size()) ? trace.output : trace.inputs[li + 1];

    g_pre.assign(l.out, 0.0);
    switch (l.act) {
      case Activation::linear:
        g_pre.assign(d.begin(), d.end());
        break;
      case Activation::relu:
        for (std::size_t i = 0; i < l.out; ++i) g_pre[i] = pre[i] > 0.0 ? d[i] : 0.0;
        break;
      case Activation::sigmoid:
        for (std::size_t i = 0; i < l.out; ++i) g_pre[i] = d[i] * y[i] * (1.0 - y[i]);
        break;
      case Activation::softmax: {
        double dot = 0.0;
        for (std::size_t i = 0; i < l.out; ++i) dot += d[i] * y[i];
        for (std::size_t i = 0; i < l.out; ++i) g_pre[i] = y[i] * (d[i] - dot);
        break;
      }
    }

    double* gw = grad.data() + l.weight_offset;
    double* gb = grad.data() + l.bias_offset;
    std::vector<double> g_x(l.in, 0.0);
    const double* w = params_.data() + l.weight_offset;
    for (std::size_t r = 0; r < l.out; ++r) {
      double gr = g_pre[r];
      gb[r] += gr;
      double* gwr = gw + r * l.in;
      const double* wr = w + r * l.in;
      for (std::size_t c = 0; c < l.in; ++c) {
        gwr[c] += gr * x[c];
        g_x[c] += wr[c] * gr;
      }
    }
    d = std::move(g_x);
  }
  return d;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamConfig& cfg) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adam_step: params/grads size mismatch");
  }
  for (double g : grads) {
    if (!std::isfinite(g)) throw std::runtime_error("adam_step: non-finite gradient");
  }
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
    state.step = 0;
  }
  state.step += 1;
  double b1t = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  double b2t = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    double m_hat = state.m[i] / b1t;
    double v_hat = state.v[i] / b2t;
    params[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
  }
}

LossResult mse_loss(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("mse_loss: shape mismatch");
  if (a.empty()) throw std::invalid_argument("mse_loss: empty input");
  LossResult res;
  res.grad.resize(a.size());
  double n = static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    double diff = a[i] - b[i];
    res.value += diff * diff;
    res.grad[i] = 2.0 * diff / n;
  }
  res.value /= n;
  return res;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty input");
  std::vector<double> out(logits.size());
  double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

LossResult softmax_xent(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) throw std::invalid_argument("softmax_xent: label out of range");
  LossResult res;
  res.grad = softmax(logits);
  // -log softmax[label], computed in log-space for stability.
  double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  res.value = std::log(sum) - (logits[label] - mx);
  res.grad[label] -= 1.0;
  return res;
}

double finite_diff_check(DenseNet& net, std::span<const double> x, double eps) {
  if (!(eps > 0.0 && eps <= 1e-3)) throw std::invalid_argument("finite_diff_check: bad eps");
  ForwardTrace trace = net.forward_trace(x);
  std::vector<double> ones(net.output_dim(), 1.0);
  std::vector<double> analytic(net.param_count(), 0.0);
  net.backward(trace, ones, analytic);

  auto sum_forward = [&]() {
    std::vector<double> y = net.forward(x);
    double s = 0.0;
    for (double v : y) s += v;
    return s;
  };

  double max_rel = 0.0;
  std::vector<double>& params = net.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    double saved = params[i];
    params[i] = saved + eps;
    double plus = sum_forward();
    params[i] = saved - eps;
    double minus = sum_forward();
    params[i] = saved;
    double fd = (plus - minus) / (2.0 * eps);
    double denom = std::max({std::abs(analytic[i]), std::abs(fd), 1e-6});
    max_rel = std::max(max_rel, std::abs(analytic[i] - fd) / denom);
  }
  return max_rel;
}

std::vector<double> group_mean_pool(std::span<const double> v, std::size_t groups) {
  if (groups == 0 || v.size() % groups != 0) {
    throw std::invalid_argument("group_mean_pool: size not divisible by groups");
  }
  std::size_t gs = v.size() / groups;
  std::vector<double> out(groups, 0.0);
  for (std::size_t g = 0; g < groups; ++g) {
    double acc = 0.0;
    for (std::size_t i = 0; i < gs; ++i) acc += v[g * gs + i];
    out[g] = acc / static_cast<double>(gs);
  }
  return out;
}

void group_mean_pool_backward(std::span<const double> g_pooled, std::size_t n,
                              std::span<double> g_v) {
  std::size_t groups = g_pooled.size();
  if (groups == 0 || n % groups != 0 || g_v.size() != n) {
    throw std::invalid_argument("group_mean_pool_backward: shape mismatch");
  }
  std::size_t gs = n / groups;
  for (std::size_t g = 0; g < groups; ++g) {
    double share = g_pooled[g] / static_cast<double>(gs);
    for (std::size_t i = 0; i < gs; ++i) g_v[g * gs + i] += share;
  }
}

}  // namespace spat::numkit
