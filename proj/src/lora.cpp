#include "gdfed/lora.hpp"

#include <algorithm>
#include <random>

#include "gdfed/error.hpp"

namespace gdfed {

LmModel attach(const LmModel& model, const LoraOptions& options, std::uint64_t seed) {
  if (model.has_adapters()) throw ArgumentError("model already has adapters attached");
  if (options.targets.empty()) throw ArgumentError("no LoRA targets given");
  if (options.rank == 0) throw ArgumentError("LoRA rank must be positive");
  if (!(options.alpha > 0.0)) throw ArgumentError("LoRA alpha must be positive");
  if (options.dropout < 0.0 || options.dropout >= 1.0) {
    throw ArgumentError("LoRA dropout must lie in [0, 1)");
  }

  LmModel out = model;
  for (const auto& name : model.params.names()) out.params.set_trainable(name, false);

  std::vector<std::string> targets = options.targets;
  std::sort(targets.begin(), targets.end());
  if (std::adjacent_find(targets.begin(), targets.end()) != targets.end()) {
    throw ArgumentError("duplicate LoRA target");
  }
  std::size_t index = 0;
  for (const auto& target : targets) {
    if (!model.params.contains(target)) throw ArgumentError("unknown LoRA target '" + target + "'");
    const Tensor& base = model.params.tensor(target);
    if (base.rank() != 2) throw ArgumentError("LoRA target '" + target + "' is not a matrix");
    const std::size_t m = base.rows();
    const std::size_t n = base.cols();
    if (options.rank > std::min(m, n)) {
      throw ArgumentError("LoRA rank " + std::to_string(options.rank) + " exceeds min(" +
                          std::to_string(m) + ", " + std::to_string(n) + ") for '" + target + "'");
    }
    Rng rng = make_rng(seed, stream::kLoraInit, index++);
    std::normal_distribution<double> gauss(0.0, 0.02);
    Tensor a({m, options.rank});
    for (auto& x : a.values()) x = gauss(rng);
    out.params.set(lora_a_name(target), std::move(a), true);
    out.params.set(lora_b_name(target), Tensor({options.rank, n}), true);
  }
  out.adapters = AdapterSettings{options.alpha, options.dropout, options.literal_scaling};
  return out;
}

std::vector<LoraAdapter> adapters_of(const LmModel& model) {
  std::vector<LoraAdapter> out;
  for (const auto& [name, e] : model.params) {
    if (!name.ends_with(".lora.A")) continue;
    const std::string target = name.substr(0, name.size() - 7);
    out.push_back(LoraAdapter{target, e.tensor, model.params.tensor(lora_b_name(target)),
                              model.adapters.alpha, model.adapters.dropout,
                              model.adapters.literal_scaling});
  }
  return out;
}

Tensor adapter_product(const Tensor& a, const Tensor& b, double scaling) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw StructuralError("adapter factors do not conform: " + shape_string(a.shape()) + " x " +
                          shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), r = a.cols(), n = b.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < r; ++k) {
      const double aik = a.at(i, k) * scaling;
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += aik * b.at(k, j);
    }
  }
  return out;
}

Tensor effective_weight(const Tensor& base, const LoraAdapter& adapter) {
  Tensor delta = adapter_product(adapter.a, adapter.b, adapter.scaling());
  if (delta.shape() != base.shape()) {
    throw StructuralError("adapter product " + shape_string(delta.shape()) +
                          " does not match base " + shape_string(base.shape()));
  }
  Tensor out = base;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += delta[i];
  return out;
}

LmModel merge(const LmModel& model) {
  auto adapters = adapters_of(model);
  if (adapters.empty()) throw ArgumentError("merge: no adapters attached");
  LmModel out = model;
  for (const auto& ad : adapters) {
    out.params.set(ad.target, effective_weight(model.params.tensor(ad.target), ad), true);
    out.params.erase(lora_a_name(ad.target));
    out.params.erase(lora_b_name(ad.target));
  }
  for (const auto& name : out.params.names()) out.params.set_trainable(name, true);
  out.adapters = AdapterSettings{};
  return out;
}

std::size_t adapter_parameter_count(const LmModel& model) {
  std::size_t n = 0;
  for (const auto& ad : adapters_of(model)) n += ad.a.size() + ad.b.size();
  return n;
}

}  // namespace gdfed
