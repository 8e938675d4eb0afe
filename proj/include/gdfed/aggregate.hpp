#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gdfed/params.hpp"
#include "gdfed/toy_lm.hpp"

namespace gdfed {

enum class PayloadKind { FullModel, Delta };

// Factors: the delta of every trainable entry, LoRA factors included.
// Dense: each LoRA factor pair is replaced by the change of its effective
// weight, s * (A_l B_l - A_g B_g), stored under the target's name.
enum class DeltaForm { Factors, Dense };

enum class Weighting { Uniform, Samples };

struct ClientUpdate {
  std::uint32_t client_id = 0;
  std::uint32_t round = 1;
  std::uint64_t sample_count = 1;
  PayloadKind kind = PayloadKind::Delta;
  DeltaForm form = DeltaForm::Factors;
  ParameterSet payload;
};

// Per-update weights in client-id order; they sum to one.
std::vector<double> aggregation_weights(std::span<const ClientUpdate> updates, Weighting weighting);

// Sample-weighted mean of full local models (or uniform when asked).
// ProtocolError on an empty list, mixed payload kinds or mixed rounds.
ParameterSet fedavg_aggregate(std::span<const ClientUpdate> updates,
                              Weighting weighting = Weighting::Samples);

// global + sum_i w_i * delta_i for factor-form deltas, uniform weights by
// default. Every delta must cover exactly the trainable entries of global.
// Frozen entries come back bitwise unchanged.
ParameterSet gradualdiff_aggregate(const ParameterSet& global, std::span<const ClientUpdate> updates,
                                   Weighting weighting = Weighting::Uniform);

// global + delta for one factor-form update.
ParameterSet reconstruct_local(const ParameterSet& global, const ClientUpdate& update);

// Effective dense weight s * A * B + base for every adapter target in `params`.
ParameterSet expand_adapters(const ParameterSet& params, const AdapterSettings& settings);

// Dense-form delta of a locally trained adapted model against the round's
// global model: dense changes for adapter targets, plain differences for
// any other trainable entries.
ParameterSet dense_delta(const ParameterSet& local, const ParameterSet& global,
                         const AdapterSettings& settings);

// Names and shapes a dense-form delta must carry for this global model.
ParameterSet dense_delta_template(const ParameterSet& global);

// Folds the weighted mean of dense deltas into the global model: adapter
// targets (frozen bases) absorb the change, adapter factors are kept, other
// trainable entries move by their mean difference.
ParameterSet gradualdiff_aggregate_dense(const ParameterSet& global,
                                         std::span<const ClientUpdate> updates,
                                         Weighting weighting = Weighting::Uniform);

}  // namespace gdfed
