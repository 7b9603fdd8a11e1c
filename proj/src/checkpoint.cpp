#include "spat/checkpoint.hpp"

#include <stdexcept>

namespace spat::numkit {

nlohmann::json net_to_json(const DenseNet& net) {
  nlohmann::json j;
  std::vector<std::size_t> dims;
  std::vector<std::string> acts;
  for (const LayerSpec& l : net.layers()) {
    if (dims.empty()) dims.push_back(l.in);
    dims.push_back(l.out);
    acts.emplace_back(activation_name(l.act));
  }
  j["dims"] = dims;
  j["activations"] = acts;
  j["weights"] = net.params();
  return j;
}

DenseNet net_from_json(const nlohmann::json& j) {
  std::vector<std::size_t> dims = j.at("dims").get<std::vector<std::size_t>>();
  std::vector<Activation> acts;
  for (const auto& name : j.at("activations")) {
    acts.push_back(activation_from_name(name.get<std::string>()));
  }
  DenseNet net(dims, acts);
  std::vector<double> weights = j.at("weights").get<std::vector<double>>();
  if (weights.size() != net.param_count()) {
    throw std::runtime_error("net_from_json: weight count does not match dims");
  }
  net.params() = std::move(weights);
  return net;
}

}  // namespace spat::numkit
