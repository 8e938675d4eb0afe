#include "gdfed/aggregate.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "gdfed/error.hpp"
#include "gdfed/lora.hpp"

namespace gdfed {

namespace {

// Client-id order fixes the summation order.
std::vector<const ClientUpdate*> ordered(std::span<const ClientUpdate> updates) {
  std::vector<const ClientUpdate*> out;
  for (const auto& u : updates) out.push_back(&u);
  std::stable_sort(out.begin(), out.end(), [](const ClientUpdate* a, const ClientUpdate* b) {
    return a->client_id < b->client_id;
  });
  return out;
}

void check_batch(std::span<const ClientUpdate> updates, PayloadKind kind) {
  if (updates.empty()) throw ProtocolError("no client updates to aggregate");
  const auto round = updates.front().round;
  for (const auto& u : updates) {
    if (u.kind != kind) {
      throw ProtocolError(std::string("client ") + std::to_string(u.client_id) + " sent a " +
                          (u.kind == PayloadKind::Delta ? "delta" : "full model") +
                          " where a " + (kind == PayloadKind::Delta ? "delta" : "full model") +
                          " was expected");
    }
    if (u.round != round) {
      throw ProtocolError("mixed rounds in one aggregation: " + std::to_string(round) + " and " +
                          std::to_string(u.round));
    }
  }
}

// Names in `expected` that `got` lacks, and vice versa, plus shape mismatches.
void require_coverage(const ParameterSet& expected, const ParameterSet& got,
                      std::uint32_t client_id) {
  std::vector<std::string> missing, extra, misshaped;
  for (const auto& [name, e] : expected) {
    if (!got.contains(name)) {
      missing.push_back(name);
    } else if (got.tensor(name).shape() != e.tensor.shape()) {
      misshaped.push_back(name);
    }
  }
  for (const auto& [name, _] : got) {
    if (!expected.contains(name)) extra.push_back(name);
  }
  if (missing.empty() && extra.empty() && misshaped.empty()) return;
  std::ostringstream os;
  os << "delta from client " << client_id << " does not cover the trainable entries";
  auto list = [&](const char* label, const std::vector<std::string>& names) {
    if (names.empty()) return;
    os << "; " << label << ':';
    for (const auto& n : names) os << ' ' << n;
  };
  list("missing", missing);
  list("extra", extra);
  list("shape mismatch", misshaped);
  throw ProtocolError(os.str());
}

ParameterSet mean_delta(const std::vector<const ClientUpdate*>& ups,
                        const std::vector<double>& weights, const ParameterSet& like) {
  ParameterSet acc;
  for (const auto& [name, e] : like) acc.set(name, Tensor(e.tensor.shape()), true);
  for (std::size_t k = 0; k < ups.size(); ++k) {
    for (const auto& [name, e] : ups[k]->payload) {
      Tensor& t = acc.mutable_tensor(name);
      for (std::size_t i = 0; i < t.size(); ++i) t[i] += weights[k] * e.tensor[i];
    }
  }
  return acc;
}

}  // namespace

std::vector<double> aggregation_weights(std::span<const ClientUpdate> updates,
                                        Weighting weighting) {
  auto ups = ordered(updates);
  std::vector<double> w(ups.size());
  if (weighting == Weighting::Uniform) {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(ups.size()));
    return w;
  }
  double total = 0.0;
  for (const auto* u : ups) {
    if (u->sample_count == 0) {
      throw ProtocolError("client " + std::to_string(u->client_id) + " reported zero samples");
    }
    total += static_cast<double>(u->sample_count);
  }
  for (std::size_t k = 0; k < ups.size(); ++k) {
    w[k] = static_cast<double>(ups[k]->sample_count) / total;
  }
  return w;
}

ParameterSet fedavg_aggregate(std::span<const ClientUpdate> updates, Weighting weighting) {
  check_batch(updates, PayloadKind::FullModel);
  auto ups = ordered(updates);
  auto weights = aggregation_weights(updates, weighting);
  std::vector<ParameterSet> sets;
  sets.reserve(ups.size());
  for (const auto* u : ups) sets.push_back(u->payload);
  return weighted_sum(sets, weights);
}

ParameterSet gradualdiff_aggregate(const ParameterSet& global, std::span<const ClientUpdate> updates,
                                   Weighting weighting) {
  check_batch(updates, PayloadKind::Delta);
  const ParameterSet expected = global.trainable_subset();
  for (const auto& u : updates) {
    if (u.form != DeltaForm::Factors) {
      throw ProtocolError("dense-form delta passed to factor-form aggregation");
    }
    require_coverage(expected, u.payload, u.client_id);
  }
  auto ups = ordered(updates);
  auto weights = aggregation_weights(updates, weighting);
  return add_delta(global, mean_delta(ups, weights, expected));
}

ParameterSet reconstruct_local(const ParameterSet& global, const ClientUpdate& update) {
  if (update.kind != PayloadKind::Delta) throw ProtocolError("reconstruct_local needs a delta");
  if (update.form == DeltaForm::Factors) return add_delta(global, update.payload);

  require_coverage(dense_delta_template(global), update.payload, update.client_id);
  ParameterSet out = global;
  for (const auto& [name, e] : update.payload) {
    Tensor& t = out.mutable_tensor(name);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += e.tensor[i];
  }
  return out;
}

ParameterSet expand_adapters(const ParameterSet& params, const AdapterSettings& settings) {
  ParameterSet out;
  for (const auto& [name, e] : params) {
    if (!name.ends_with(".lora.A")) continue;
    const std::string target = name.substr(0, name.size() - 7);
    const Tensor& b = params.tensor(lora_b_name(target));
    Tensor prod = adapter_product(e.tensor, b, settings.scaling(e.tensor.cols()));
    const Tensor& base = params.tensor(target);
    if (prod.shape() != base.shape()) {
      throw StructuralError("adapter for '" + target + "' does not match its base");
    }
    for (std::size_t i = 0; i < prod.size(); ++i) prod[i] += base[i];
    out.set(target, std::move(prod), true);
  }
  return out;
}

ParameterSet dense_delta_template(const ParameterSet& global) {
  ParameterSet out;
  for (const auto& [name, e] : global) {
    if (name.ends_with(".lora.A")) {
      const std::string target = name.substr(0, name.size() - 7);
      out.set(target, Tensor(global.tensor(target).shape()), true);
    } else if (e.trainable && !name.ends_with(".lora.B")) {
      out.set(name, Tensor(e.tensor.shape()), true);
    }
  }
  return out;
}

ParameterSet dense_delta(const ParameterSet& local, const ParameterSet& global,
                         const AdapterSettings& settings) {
  require_shape_compatible(local, global);
  const ParameterSet local_eff = expand_adapters(local, settings);
  const ParameterSet global_eff = expand_adapters(global, settings);
  ParameterSet out;
  for (const auto& [name, e] : dense_delta_template(global)) {
    const Tensor& l = local_eff.contains(name) ? local_eff.tensor(name) : local.tensor(name);
    const Tensor& g = global_eff.contains(name) ? global_eff.tensor(name) : global.tensor(name);
    Tensor d(e.tensor.shape());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = l[i] - g[i];
    out.set(name, std::move(d), true);
  }
  return out;
}

ParameterSet gradualdiff_aggregate_dense(const ParameterSet& global,
                                         std::span<const ClientUpdate> updates,
                                         Weighting weighting) {
  check_batch(updates, PayloadKind::Delta);
  const ParameterSet expected = dense_delta_template(global);
  for (const auto& u : updates) {
    if (u.form != DeltaForm::Dense) {
      throw ProtocolError("factor-form delta passed to dense-form aggregation");
    }
    require_coverage(expected, u.payload, u.client_id);
  }
  auto ups = ordered(updates);
  auto weights = aggregation_weights(updates, weighting);
  const ParameterSet mean = mean_delta(ups, weights, expected);
  ParameterSet out = global;
  for (const auto& [name, e] : mean) {
    Tensor& t = out.mutable_tensor(name);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += e.tensor[i];
    if (!t.all_finite()) throw ArgumentError("non-finite value in entry '" + name + "'");
  }
  return out;
}

}  // namespace gdfed
