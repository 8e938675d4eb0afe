#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "gdfed/params.hpp"
#include "gdfed/rng.hpp"
#include "gdfed/toy_lm.hpp"

namespace gdfed {

struct OptimizerConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.001;
  double max_grad_norm = 0.3;
  double warmup_ratio = 0.03;
  std::uint64_t total_steps = 1;

  void validate() const;
  std::uint64_t warmup_steps() const;
};

struct OptimizerState {
  std::map<std::string, Tensor> first_moment;
  std::map<std::string, Tensor> second_moment;
  std::uint64_t step = 0;
};

// Rescales trainable gradients so their global norm is at most max_norm.
ParameterSet clip_gradients(const ParameterSet& grads, double max_norm);

// Linear ramp from 0 to lr over ceil(warmup_ratio * total_steps) steps,
// then constant. Steps past total_steps keep the final rate.
double lr_at(std::uint64_t step, const OptimizerConfig& cfg);

// One decoupled-weight-decay Adam update of the trainable entries at the
// rate lr_at(state.step). Frozen entries are copied untouched.
std::pair<ParameterSet, OptimizerState> adamw_step(const ParameterSet& params,
                                                   const ParameterSet& grads,
                                                   const OptimizerState& state,
                                                   const OptimizerConfig& cfg);

// Cycles through a shard in minibatches, reshuffling at each epoch start.
class BatchStream {
 public:
  BatchStream(std::vector<TokenSeq> shard, std::size_t batch_size, Rng rng);

  std::vector<TokenSeq> next();
  std::size_t batches_per_epoch() const;
  std::size_t shard_size() const { return shard_.size(); }

 private:
  std::vector<TokenSeq> shard_;
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  std::size_t cursor_ = 0;
  Rng rng_;
};

struct TrainerConfig {
  OptimizerConfig optimizer;
  std::size_t batch_size = 4;
  std::size_t local_epochs = 1;
};

// A model plus everything needed to continue training it: optimizer
// moments, the minibatch cursor and the dropout stream. Seeded by
// (seed, stream_index) so a client and a central trainer built with the
// same arguments follow the same trajectory.
class Trainer {
 public:
  Trainer(LmModel model, std::vector<TokenSeq> shard, TrainerConfig cfg, std::uint64_t seed,
          std::uint64_t stream_index);

  // Runs `steps` minibatch iterations of loss -> clip -> AdamW. Returns the
  // mean minibatch loss (0 when steps == 0).
  double train(std::size_t steps);

  // Steps in one round: local_epochs passes over the shard.
  std::size_t steps_per_round() const;

  const LmModel& model() const { return model_; }
  // Replaces the trainable entries (and, when present in `update`, any
  // frozen entries) with values from a received global model.
  void load_parameters(const ParameterSet& update);
  const OptimizerState& optimizer_state() const { return state_; }
  std::size_t shard_size() const { return batches_.shard_size(); }

 private:
  LmModel model_;
  BatchStream batches_;
  TrainerConfig cfg_;
  OptimizerState state_;
  Rng dropout_rng_;
};

// Fresh optimizer state, `steps` iterations on the shard.
LmModel local_train_round(const LmModel& model, const std::vector<TokenSeq>& shard,
                          const TrainerConfig& cfg, std::size_t steps, std::uint64_t seed = 0);

}  // namespace gdfed
