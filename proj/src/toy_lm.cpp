#include "gdfed/toy_lm.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "gdfed/error.hpp"

namespace gdfed {

// ---------------------------------------------------------------- vocab

Vocab Vocab::from_text(std::string_view text) {
  std::array<bool, 256> seen{};
  for (char ch : text) seen[static_cast<unsigned char>(ch)] = true;
  Vocab v;
  v.index_.fill(-1);
  for (int b = 0; b < 256; ++b) {
    if (!seen[b]) continue;
    v.index_[b] = static_cast<int>(v.symbols_.size());
    v.symbols_.push_back(static_cast<unsigned char>(b));
  }
  return v;
}

unsigned char Vocab::symbol(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size()) {
    throw ArgumentError("token id " + std::to_string(id) + " out of range");
  }
  return symbols_[static_cast<std::size_t>(id)];
}

int Vocab::id(unsigned char symbol) const {
  int i = index_[symbol];
  if (i < 0) throw ArgumentError("byte " + std::to_string(symbol) + " not in vocabulary");
  return i;
}

TokenSeq Vocab::encode(std::string_view text) const {
  TokenSeq out;
  out.reserve(text.size());
  for (char ch : text) out.push_back(id(static_cast<unsigned char>(ch)));
  return out;
}

std::string Vocab::decode(const TokenSeq& ids) const {
  std::string out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(static_cast<char>(symbol(i)));
  return out;
}

// ---------------------------------------------------------------- model

void LmConfig::validate() const {
  if (vocab_size < 2) throw ArgumentError("vocab_size must be >= 2");
  if (embed_dim < 2) throw ArgumentError("embed_dim must be >= 2");
  if (context_length < 2) throw ArgumentError("context_length must be >= 2");
}

bool LmModel::has_adapters() const {
  for (const auto& [name, _] : params) {
    if (name.ends_with(".lora.A")) return true;
  }
  return false;
}

LmModel init_model(const LmConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t v = config.vocab_size;
  const std::size_t d = config.embed_dim;
  Rng rng = make_rng(seed, stream::kModelInit);
  std::uniform_real_distribution<double> uni(-0.08, 0.08);
  auto fill = [&](Shape shape) {
    Tensor t(std::move(shape));
    for (auto& x : t.values()) x = uni(rng);
    return t;
  };
  LmModel m;
  m.config = config;
  m.params.set(param::kEmbed, fill({v, d}), true);
  m.params.set(param::kRecurrent, fill({d, d}), true);
  m.params.set(param::kRecurrentBias, fill({d}), true);
  m.params.set(param::kOutputBias, Tensor({v}), true);
  return m;
}

LmModel zero_model(const LmConfig& config) {
  config.validate();
  LmModel m;
  m.config = config;
  m.params.set(param::kEmbed, Tensor({config.vocab_size, config.embed_dim}), true);
  m.params.set(param::kRecurrent, Tensor({config.embed_dim, config.embed_dim}), true);
  m.params.set(param::kRecurrentBias, Tensor({config.embed_dim}), true);
  m.params.set(param::kOutputBias, Tensor({config.vocab_size}), true);
  return m;
}

namespace {

struct Adapter {
  const Tensor* a = nullptr;  // m x r
  const Tensor* b = nullptr;  // r x n
  double scaling = 0.0;
  std::size_t rank = 0;
};

std::optional<Adapter> find_adapter(const LmModel& m, const std::string& target) {
  const std::string a_name = target + ".lora.A";
  const std::string b_name = target + ".lora.B";
  if (!m.params.contains(a_name)) return std::nullopt;
  Adapter ad;
  ad.a = &m.params.tensor(a_name);
  ad.b = &m.params.tensor(b_name);
  ad.rank = ad.a->cols();
  ad.scaling = m.adapters.scaling(ad.rank);
  return ad;
}

// Activations of one sequence, kept for the backward pass.
struct SeqTrace {
  std::size_t len = 0;
  std::vector<double> h;      // len x d
  std::vector<double> probs;  // len x V
  std::vector<double> u;      // len x r_w : B_W (m_out . h_t)
  std::vector<double> m_out;  // len x d   : dropout mask, output adapter path
  std::vector<double> v;      // len x r_u : B_U (m_rec . h_{t-1})
  std::vector<double> m_rec;  // len x d   : dropout mask, recurrence adapter path
  std::vector<double> m_emb;  // len       : dropout mask, embedding adapter path
};

class Network {
 public:
  explicit Network(const LmModel& m)
      : v_(m.config.vocab_size),
        d_(m.config.embed_dim),
        ctx_(m.config.context_length),
        w_(m.params.tensor(param::kEmbed)),
        u_(m.params.tensor(param::kRecurrent)),
        b_(m.params.tensor(param::kRecurrentBias)),
        c_(m.params.tensor(param::kOutputBias)),
        aw_(find_adapter(m, param::kEmbed)),
        au_(find_adapter(m, param::kRecurrent)),
        dropout_(m.adapters.dropout) {
    if (w_.shape() != Shape{v_, d_} || u_.shape() != Shape{d_, d_} || b_.shape() != Shape{d_} ||
        c_.shape() != Shape{v_}) {
      throw StructuralError("model parameters do not match LmConfig");
    }
  }

  void check_tokens(const TokenSeq& x) const {
    if (x.empty()) throw ArgumentError("empty token sequence");
    if (x.size() > ctx_) {
      throw ArgumentError("sequence length " + std::to_string(x.size()) +
                          " exceeds context length " + std::to_string(ctx_));
    }
    for (int t : x) {
      if (t < 0 || static_cast<std::size_t>(t) >= v_) {
        throw ArgumentError("token id " + std::to_string(t) + " out of range for vocab " +
                            std::to_string(v_));
      }
    }
  }

  SeqTrace run(const TokenSeq& x, Rng* rng) const {
    check_tokens(x);
    const std::size_t len = x.size();
    const std::size_t rw = aw_ ? aw_->rank : 0;
    const std::size_t ru = au_ ? au_->rank : 0;
    SeqTrace tr;
    tr.len = len;
    tr.h.assign(len * d_, 0.0);
    tr.probs.assign(len * v_, 0.0);
    tr.u.assign(len * rw, 0.0);
    tr.m_out.assign(aw_ ? len * d_ : 0, 1.0);
    tr.v.assign(len * ru, 0.0);
    tr.m_rec.assign(au_ ? len * d_ : 0, 1.0);
    tr.m_emb.assign(len, 1.0);

    std::bernoulli_distribution keep(1.0 - dropout_);
    const double keep_scale = dropout_ > 0.0 ? 1.0 / (1.0 - dropout_) : 1.0;
    auto draw = [&]() { return keep(*rng) ? keep_scale : 0.0; };
    const bool sample = rng != nullptr && dropout_ > 0.0;

    std::vector<double> pre(d_), tmp(std::max(rw, ru));
    for (std::size_t t = 0; t < len; ++t) {
      const auto tok = static_cast<std::size_t>(x[t]);
      double* h = &tr.h[t * d_];
      const double* hp = t > 0 ? &tr.h[(t - 1) * d_] : nullptr;

      for (std::size_t j = 0; j < d_; ++j) pre[j] = b_[j] + w_.at(tok, j);
      if (aw_) {
        if (sample) tr.m_emb[t] = draw();
        const double f = aw_->scaling * tr.m_emb[t];
        if (f != 0.0) {
          for (std::size_t k = 0; k < rw; ++k) {
            const double ak = aw_->a->at(tok, k) * f;
            for (std::size_t j = 0; j < d_; ++j) pre[j] += ak * aw_->b->at(k, j);
          }
        }
      }
      if (hp) {
        for (std::size_t i = 0; i < d_; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < d_; ++j) s += u_.at(i, j) * hp[j];
          pre[i] += s;
        }
        if (au_) {
          double* mask = &tr.m_rec[t * d_];
          if (sample) {
            for (std::size_t j = 0; j < d_; ++j) mask[j] = draw();
          }
          double* vt = &tr.v[t * ru];
          for (std::size_t k = 0; k < ru; ++k) {
            double s = 0.0;
            for (std::size_t j = 0; j < d_; ++j) s += au_->b->at(k, j) * mask[j] * hp[j];
            vt[k] = s;
          }
          for (std::size_t i = 0; i < d_; ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < ru; ++k) s += au_->a->at(i, k) * vt[k];
            pre[i] += au_->scaling * s;
          }
        }
      }
      for (std::size_t j = 0; j < d_; ++j) h[j] = std::tanh(pre[j]);

      double* z = &tr.probs[t * v_];
      for (std::size_t o = 0; o < v_; ++o) {
        double s = c_[o];
        for (std::size_t j = 0; j < d_; ++j) s += w_.at(o, j) * h[j];
        z[o] = s;
      }
      if (aw_) {
        double* mask = &tr.m_out[t * d_];
        if (sample) {
          for (std::size_t j = 0; j < d_; ++j) mask[j] = draw();
        }
        double* ut = &tr.u[t * rw];
        for (std::size_t k = 0; k < rw; ++k) {
          double s = 0.0;
          for (std::size_t j = 0; j < d_; ++j) s += aw_->b->at(k, j) * mask[j] * h[j];
          ut[k] = s;
        }
        for (std::size_t o = 0; o < v_; ++o) {
          double s = 0.0;
          for (std::size_t k = 0; k < rw; ++k) s += aw_->a->at(o, k) * ut[k];
          z[o] += aw_->scaling * s;
        }
      }
      softmax_inplace(z);
    }
    return tr;
  }

  // Accumulates d(loss)/d(param) into the grad tensors, with each predicted
  // position weighted by `weight`. Returns the summed NLL of the sequence.
  double backward(const TokenSeq& x, const SeqTrace& tr, double weight, ParameterSet& g) const {
    const std::size_t len = tr.len;
    const std::size_t rw = aw_ ? aw_->rank : 0;
    const std::size_t ru = au_ ? au_->rank : 0;
    Tensor& gw = g.mutable_tensor(param::kEmbed);
    Tensor& gu = g.mutable_tensor(param::kRecurrent);
    Tensor& gb = g.mutable_tensor(param::kRecurrentBias);
    Tensor& gc = g.mutable_tensor(param::kOutputBias);
    Tensor* gaw = aw_ ? &g.mutable_tensor(std::string(param::kEmbed) + ".lora.A") : nullptr;
    Tensor* gbw = aw_ ? &g.mutable_tensor(std::string(param::kEmbed) + ".lora.B") : nullptr;
    Tensor* gau = au_ ? &g.mutable_tensor(std::string(param::kRecurrent) + ".lora.A") : nullptr;
    Tensor* gbu = au_ ? &g.mutable_tensor(std::string(param::kRecurrent) + ".lora.B") : nullptr;

    double nll = 0.0;
    std::vector<double> dh(d_), dh_next(d_, 0.0), dz(v_), da(d_), dr(std::max(rw, ru));
    for (std::size_t t = len; t-- > 0;) {
      const double* h = &tr.h[t * d_];
      dh = dh_next;
      if (t + 1 < len) {
        const auto target = static_cast<std::size_t>(x[t + 1]);
        const double* p = &tr.probs[t * v_];
        nll -= std::log(p[target]);
        for (std::size_t o = 0; o < v_; ++o) dz[o] = p[o] * weight;
        dz[target] -= weight;
        for (std::size_t o = 0; o < v_; ++o) {
          gc[o] += dz[o];
          for (std::size_t j = 0; j < d_; ++j) {
            gw.at(o, j) += dz[o] * h[j];
            dh[j] += w_.at(o, j) * dz[o];
          }
        }
        if (aw_) {
          const double s = aw_->scaling;
          const double* ut = &tr.u[t * rw];
          const double* mask = &tr.m_out[t * d_];
          for (std::size_t k = 0; k < rw; ++k) {
            double acc = 0.0;
            for (std::size_t o = 0; o < v_; ++o) {
              gaw->at(o, k) += s * dz[o] * ut[k];
              acc += aw_->a->at(o, k) * dz[o];
            }
            dr[k] = s * acc;
          }
          for (std::size_t k = 0; k < rw; ++k) {
            for (std::size_t j = 0; j < d_; ++j) {
              gbw->at(k, j) += dr[k] * mask[j] * h[j];
              dh[j] += mask[j] * aw_->b->at(k, j) * dr[k];
            }
          }
        }
      }
      for (std::size_t j = 0; j < d_; ++j) da[j] = dh[j] * (1.0 - h[j] * h[j]);

      const auto tok = static_cast<std::size_t>(x[t]);
      for (std::size_t j = 0; j < d_; ++j) {
        gb[j] += da[j];
        gw.at(tok, j) += da[j];
      }
      if (aw_) {
        const double f = aw_->scaling * tr.m_emb[t];
        if (f != 0.0) {
          for (std::size_t k = 0; k < rw; ++k) {
            const double ak = aw_->a->at(tok, k);
            double acc = 0.0;
            for (std::size_t j = 0; j < d_; ++j) {
              gbw->at(k, j) += f * ak * da[j];
              acc += aw_->b->at(k, j) * da[j];
            }
            gaw->at(tok, k) += f * acc;
          }
        }
      }

      std::fill(dh_next.begin(), dh_next.end(), 0.0);
      if (t == 0) continue;
      const double* hp = &tr.h[(t - 1) * d_];
      for (std::size_t i = 0; i < d_; ++i) {
        for (std::size_t j = 0; j < d_; ++j) {
          gu.at(i, j) += da[i] * hp[j];
          dh_next[j] += u_.at(i, j) * da[i];
        }
      }
      if (au_) {
        const double s = au_->scaling;
        const double* vt = &tr.v[t * ru];
        const double* mask = &tr.m_rec[t * d_];
        for (std::size_t k = 0; k < ru; ++k) {
          double acc = 0.0;
          for (std::size_t i = 0; i < d_; ++i) {
            gau->at(i, k) += s * da[i] * vt[k];
            acc += au_->a->at(i, k) * da[i];
          }
          dr[k] = s * acc;
        }
        for (std::size_t k = 0; k < ru; ++k) {
          for (std::size_t j = 0; j < d_; ++j) {
            gbu->at(k, j) += dr[k] * mask[j] * hp[j];
            dh_next[j] += mask[j] * au_->b->at(k, j) * dr[k];
          }
        }
      }
    }
    return nll;
  }

  std::size_t vocab() const { return v_; }
  std::size_t dim() const { return d_; }

 private:
  void softmax_inplace(double* z) const {
    const double mx = *std::max_element(z, z + v_);
    double sum = 0.0;
    for (std::size_t o = 0; o < v_; ++o) {
      z[o] = std::exp(z[o] - mx);
      sum += z[o];
    }
    for (std::size_t o = 0; o < v_; ++o) z[o] /= sum;
  }

  std::size_t v_, d_, ctx_;
  const Tensor& w_;
  const Tensor& u_;
  const Tensor& b_;
  const Tensor& c_;
  std::optional<Adapter> aw_, au_;
  double dropout_;
};

ParameterSet zero_grads(const ParameterSet& params) {
  ParameterSet g;
  for (const auto& [name, e] : params) g.set(name, Tensor(e.tensor.shape()), e.trainable);
  return g;
}

std::size_t predicted_positions(const std::vector<TokenSeq>& batch) {
  if (batch.empty()) throw ArgumentError("empty batch");
  std::size_t n = 0;
  for (const auto& s : batch) {
    if (s.size() < 2) throw ArgumentError("every sequence needs at least two tokens");
    n += s.size() - 1;
  }
  return n;
}

}  // namespace

ForwardResult forward(const LmModel& model, const TokenSeq& tokens) {
  Network net(model);
  SeqTrace tr = net.run(tokens, nullptr);
  ForwardResult out;
  const std::size_t v = net.vocab();
  const std::size_t d = net.dim();
  for (std::size_t t = 0; t < tr.len; ++t) {
    out.distributions.emplace_back(tr.probs.begin() + static_cast<std::ptrdiff_t>(t * v),
                                   tr.probs.begin() + static_cast<std::ptrdiff_t>((t + 1) * v));
    out.hidden.emplace_back(tr.h.begin() + static_cast<std::ptrdiff_t>(t * d),
                            tr.h.begin() + static_cast<std::ptrdiff_t>((t + 1) * d));
  }
  return out;
}

LossAndGrad loss_and_grad(const LmModel& model, const std::vector<TokenSeq>& batch,
                          Rng* dropout_rng) {
  const std::size_t n = predicted_positions(batch);
  Network net(model);
  LossAndGrad out;
  out.grads = zero_grads(model.params);
  const double weight = 1.0 / static_cast<double>(n);
  double nll = 0.0;
  for (const auto& seq : batch) {
    SeqTrace tr = net.run(seq, dropout_rng);
    nll += net.backward(seq, tr, weight, out.grads);
  }
  out.loss = nll / static_cast<double>(n);
  for (const auto& name : out.grads.names()) {
    if (!out.grads.trainable(name)) {
      auto& t = out.grads.mutable_tensor(name);
      std::fill(t.values().begin(), t.values().end(), 0.0);
    }
  }
  return out;
}

double mean_nll(const LmModel& model, const std::vector<TokenSeq>& batch) {
  const std::size_t n = predicted_positions(batch);
  Network net(model);
  const std::size_t v = net.vocab();
  double nll = 0.0;
  for (const auto& seq : batch) {
    SeqTrace tr = net.run(seq, nullptr);
    for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
      nll -= std::log(tr.probs[t * v + static_cast<std::size_t>(seq[t + 1])]);
    }
  }
  return nll / static_cast<double>(n);
}

std::vector<TokenSeq> prediction_windows(const TokenSeq& corpus, std::size_t context) {
  if (context < 2) throw ArgumentError("context must be >= 2");
  std::vector<TokenSeq> out;
  const std::size_t stride = context - 1;
  for (std::size_t start = 0; start + 1 < corpus.size(); start += stride) {
    const std::size_t end = std::min(corpus.size(), start + context);
    out.emplace_back(corpus.begin() + static_cast<std::ptrdiff_t>(start),
                     corpus.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

double perplexity_of(const LmModel& model, const TokenSeq& corpus, std::size_t context) {
  if (corpus.size() < 2) throw ArgumentError("perplexity needs a corpus of at least two tokens");
  return std::exp(mean_nll(model, prediction_windows(corpus, context)));
}

TokenSeq greedy_continue(const LmModel& model, const TokenSeq& prefix, std::size_t count) {
  if (prefix.empty()) throw ArgumentError("greedy_continue needs a non-empty prefix");
  if (prefix.size() + count > model.config.context_length) {
    throw ArgumentError("prefix plus continuation exceeds context length");
  }
  TokenSeq seq = prefix;
  TokenSeq out;
  for (std::size_t i = 0; i < count; ++i) {
    // The recurrence is causal, so re-running the prefix reproduces the state.
    ForwardResult fr = forward(model, seq);
    const auto& last = fr.distributions.back();
    const int next = static_cast<int>(std::max_element(last.begin(), last.end()) - last.begin());
    seq.push_back(next);
    out.push_back(next);
  }
  return out;
}

}  // namespace gdfed
