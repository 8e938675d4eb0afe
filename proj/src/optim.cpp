#include "gdfed/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gdfed/error.hpp"

namespace gdfed {

void OptimizerConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ArgumentError("learning rate must be positive");
  if (warmup_ratio < 0.0 || warmup_ratio >= 1.0) {
    throw ArgumentError("warmup_ratio must lie in [0, 1)");
  }
  if (!(max_grad_norm > 0.0)) throw ArgumentError("max_grad_norm must be positive");
  if (weight_decay < 0.0) throw ArgumentError("weight_decay must be non-negative");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ArgumentError("Adam betas must lie in [0, 1)");
  }
  if (total_steps == 0) throw ArgumentError("total_steps must be positive");
}

std::uint64_t OptimizerConfig::warmup_steps() const {
  return static_cast<std::uint64_t>(std::ceil(warmup_ratio * static_cast<double>(total_steps)));
}

ParameterSet clip_gradients(const ParameterSet& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw ArgumentError("max_norm must be positive");
  const double norm = l2_norm(grads);
  if (norm <= max_norm) return grads;
  const double factor = max_norm / norm;
  ParameterSet out = grads;
  for (const auto& [name, e] : grads) {
    if (!e.trainable) continue;
    for (auto& v : out.mutable_tensor(name).values()) v *= factor;
  }
  return out;
}

double lr_at(std::uint64_t step, const OptimizerConfig& cfg) {
  const std::uint64_t warmup = cfg.warmup_steps();
  if (step >= warmup) return cfg.lr;
  return cfg.lr * static_cast<double>(step) / static_cast<double>(warmup);
}

std::pair<ParameterSet, OptimizerState> adamw_step(const ParameterSet& params,
                                                   const ParameterSet& grads,
                                                   const OptimizerState& state,
                                                   const OptimizerConfig& cfg) {
  require_shape_compatible(params, grads);
  const double lr = lr_at(state.step, cfg);
  const double t = static_cast<double>(state.step + 1);
  const double bias1 = 1.0 - std::pow(cfg.beta1, t);
  const double bias2 = 1.0 - std::pow(cfg.beta2, t);

  ParameterSet next = params;
  OptimizerState st = state;
  st.step += 1;
  for (const auto& [name, e] : params) {
    if (!e.trainable) continue;
    const Tensor& g = grads.tensor(name);
    auto [m_it, m_new] = st.first_moment.try_emplace(name, Tensor(e.tensor.shape()));
    auto [v_it, v_new] = st.second_moment.try_emplace(name, Tensor(e.tensor.shape()));
    Tensor& m = m_it->second;
    Tensor& v = v_it->second;
    if (m.shape() != e.tensor.shape() || v.shape() != e.tensor.shape()) {
      throw StructuralError("optimizer moments do not match '" + name + "'");
    }
    Tensor& p = next.mutable_tensor(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      p[i] = p[i] - lr * cfg.weight_decay * p[i] - lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
  return {std::move(next), std::move(st)};
}

BatchStream::BatchStream(std::vector<TokenSeq> shard, std::size_t batch_size, Rng rng)
    : shard_(std::move(shard)), batch_size_(batch_size), rng_(std::move(rng)) {
  if (shard_.empty()) throw ArgumentError("empty data shard");
  if (batch_size_ == 0) throw ArgumentError("batch size must be positive");
  order_.resize(shard_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
}

std::vector<TokenSeq> BatchStream::next() {
  if (cursor_ == 0) std::shuffle(order_.begin(), order_.end(), rng_);
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  std::vector<TokenSeq> batch;
  batch.reserve(end - cursor_);
  for (std::size_t i = cursor_; i < end; ++i) batch.push_back(shard_[order_[i]]);
  cursor_ = end == order_.size() ? 0 : end;
  return batch;
}

std::size_t BatchStream::batches_per_epoch() const {
  return (shard_.size() + batch_size_ - 1) / batch_size_;
}

Trainer::Trainer(LmModel model, std::vector<TokenSeq> shard, TrainerConfig cfg,
                 std::uint64_t seed, std::uint64_t stream_index)
    : model_(std::move(model)),
      batches_(std::move(shard), cfg.batch_size, make_rng(seed, stream::kBatches, stream_index)),
      cfg_(cfg),
      dropout_rng_(make_rng(seed, stream::kDropout, stream_index)) {
  cfg_.optimizer.validate();
}

double Trainer::train(std::size_t steps) {
  double total = 0.0;
  for (std::size_t s = 0; s < steps; ++s) {
    auto batch = batches_.next();
    LossAndGrad lg = loss_and_grad(model_, batch, &dropout_rng_);
    ParameterSet clipped = clip_gradients(lg.grads, cfg_.optimizer.max_grad_norm);
    auto [params, state] = adamw_step(model_.params, clipped, state_, cfg_.optimizer);
    model_.params = std::move(params);
    state_ = std::move(state);
    total += lg.loss;
  }
  return steps == 0 ? 0.0 : total / static_cast<double>(steps);
}

std::size_t Trainer::steps_per_round() const {
  return cfg_.local_epochs * batches_.batches_per_epoch();
}

void Trainer::load_parameters(const ParameterSet& update) {
  for (const auto& [name, e] : update) {
    if (!model_.params.contains(name)) {
      throw StructuralError("received entry '" + name + "' unknown to the local model");
    }
    Tensor& t = model_.params.mutable_tensor(name);
    if (t.shape() != e.tensor.shape()) {
      throw StructuralError("received entry '" + name + "' has shape " +
                            shape_string(e.tensor.shape()) + ", local model has " +
                            shape_string(t.shape()));
    }
    t = e.tensor;
  }
}

LmModel local_train_round(const LmModel& model, const std::vector<TokenSeq>& shard,
                          const TrainerConfig& cfg, std::size_t steps, std::uint64_t seed) {
  if (shard.empty()) throw ArgumentError("empty data shard");
  Trainer trainer(model, shard, cfg, seed, 0);
  trainer.train(steps);
  return trainer.model();
}

}  // namespace gdfed
