// Copyright 2026 The Somnoseq Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "somnoseq/network.h"

#include <algorithm>
#include <cmath>
#include <utility>

#include "somnoseq/errors.h"
#include "somnoseq/rng.h"

namespace somnoseq {

ModelConfig ModelConfig::standard() {
  ModelConfig c;
  c.small.layers = {{50, 64, 6, 25}, {8, 128, 1, 4}, {8, 128, 1, 4}, {8, 128, 1, 4}};
  c.small.first_pool_window = c.small.first_pool_stride = 8;
  c.small.last_pool_window = c.small.last_pool_stride = 4;
  c.large.layers = {{400, 64, 50, 200}, {6, 128, 1, 3}, {6, 128, 1, 3}, {6, 128, 1, 3}};
  c.large.first_pool_window = c.large.first_pool_stride = 4;
  c.large.last_pool_window = c.large.last_pool_stride = 2;
  return c;
}

std::size_t ModelConfig::branch_length(const BranchConfig& branch) const {
  if (branch.layers.empty()) throw ConfigError("CNN branch has no layers");
  std::size_t length = epoch_samples;
  auto pool = [&](std::size_t window, std::size_t stride, std::size_t i) {
    if (window == 0 || stride == 0 || window > length) {
      throw ConfigError("pooling after conv layer " + std::to_string(i + 1) +
                        " does not fit a length of " + std::to_string(length));
    }
    length = (length - window) / stride + 1;
  };
  for (std::size_t i = 0; i < branch.layers.size(); ++i) {
    const auto& l = branch.layers[i];
    if (l.width == 0 || l.filters == 0 || l.stride == 0 ||
        l.width > length + 2 * l.padding) {
      throw ConfigError("conv layer " + std::to_string(i + 1) +
                        " does not fit an input length of " + std::to_string(length));
    }
    length = (length + 2 * l.padding - l.width) / l.stride + 1;
    if (i == 0) pool(branch.first_pool_window, branch.first_pool_stride, i);
  }
  pool(branch.last_pool_window, branch.last_pool_stride, branch.layers.size() - 1);
  return length;
}

std::size_t ModelConfig::feature_dim() const {
  return branch_length(small) * small.layers.back().filters +
         branch_length(large) * large.layers.back().filters;
}

void ModelConfig::validate() const {
  if (epoch_samples == 0) throw ConfigError("epoch_samples must be positive");
  if (maxtime == 0) throw ConfigError("maxtime must be at least 1");
  if (encoder_hidden == 0 || encoder_output == 0 || decoder_hidden == 0 ||
      attention_dim == 0) {
    throw ConfigError("hidden, output and attention sizes must be positive");
  }
  for (double rate : {small.dropout, large.dropout, feature_dropout}) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rates must lie in [0, 1)");
  }
  feature_dim();
}

Tensor& ModelParams::add(const std::string& name, Shape shape, bool is_weight) {
  for (const auto& p : params_) {
    if (p.name == name) throw ConfigError("parameter '" + name + "' registered twice");
  }
  params_.push_back({name, Tensor::zeros(std::move(shape), true), is_weight});
  return params_.back().value;
}

const Tensor& ModelParams::get(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.value;
  }
  throw ConfigError("no parameter named '" + name + "'");
}

Tensor& ModelParams::get(const std::string& name) {
  return const_cast<Tensor&>(std::as_const(*this).get(name));
}

std::vector<Tensor> ModelParams::tensors() const {
  std::vector<Tensor> out;
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

std::vector<Tensor> ModelParams::weights() const {
  std::vector<Tensor> out;
  for (const auto& p : params_) {
    if (p.is_weight) out.push_back(p.value);
  }
  return out;
}

std::size_t ModelParams::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

void ModelParams::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

Checkpoint ModelParams::to_checkpoint(const std::string& prefix) const {
  Checkpoint out;
  for (const auto& p : params_) {
    out[prefix + p.name] = {p.value.shape(), std::vector<double>(p.value.values().begin(),
                                                                 p.value.values().end())};
  }
  return out;
}

void ModelParams::load(const Checkpoint& checkpoint, const std::string& prefix) {
  for (auto& p : params_) {
    const auto it = checkpoint.find(prefix + p.name);
    if (it == checkpoint.end()) {
      throw DataError("checkpoint lacks parameter '" + p.name + "'");
    }
    if (it->second.shape != p.value.shape()) {
      throw DataError("checkpoint parameter '" + p.name + "' has shape " +
                      shape_string(it->second.shape) + ", model expects " +
                      shape_string(p.value.shape()));
    }
    std::copy(it->second.values.begin(), it->second.values.end(),
              p.value.values().begin());
  }
}

LstmState lstm_cell(const Tensor& x, const LstmState& prev,
                    const LstmWeights& w) {
  const std::size_t hidden = w.recurrent.dim(0);
  if (w.recurrent.rank() != 2 || w.recurrent.dim(1) != 4 * hidden ||
      w.input.rank() != 2 || w.input.dim(1) != 4 * hidden ||
      w.bias.rank() != 1 || w.bias.dim(0) != 4 * hidden) {
    throw ShapeError("lstm_cell: inconsistent weight shapes");
  }
  if (x.rank() != 2 || x.dim(1) != w.input.dim(0) || prev.h.rank() != 2 ||
      prev.h.dim(1) != hidden || prev.c.shape() != prev.h.shape() ||
      prev.h.dim(0) != x.dim(0)) {
    throw ShapeError("lstm_cell: input " + shape_string(x.shape()) + " / state " +
                     shape_string(prev.h.shape()) + " do not match weights");
  }
  const Tensor gates =
      add_bias(add(matmul(x, w.input), matmul(prev.h, w.recurrent)), w.bias);
  const Tensor i = sigmoid(slice(gates, 1, 0, hidden));
  const Tensor f = sigmoid(slice(gates, 1, hidden, 2 * hidden));
  const Tensor g = tanh(slice(gates, 1, 2 * hidden, 3 * hidden));
  const Tensor o = sigmoid(slice(gates, 1, 3 * hidden, 4 * hidden));
  LstmState next;
  next.c = add(mul(f, prev.c), mul(i, g));
  next.h = mul(o, tanh(next.c));
  return next;
}

namespace {

AttentionStep attend_with_keys(const Tensor& h_prev, const EncoderStates& states,
                               const std::vector<Tensor>& keys,
                               const AttentionWeights& w) {
  const std::size_t n = states.length();
  if (n == 0) throw ShapeError("attend: no encoder states");
  const Tensor query = matmul(h_prev, w.query);  // [S, A]
  std::vector<Tensor> scores;
  scores.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores.push_back(matmul(tanh(add(keys[i], query)), w.score));  // [S, 1]
  }
  AttentionStep step;
  step.weights = softmax(concat(scores, 1), 1);  // [S, n]

  const std::size_t rows = step.weights.dim(0);
  const auto alpha = step.weights.values();
  for (std::size_t s = 0; s < rows; ++s) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = alpha[s * n + i];
      if (!(a >= 0.0)) throw NumericError("attention weight is negative or NaN");
      total += a;
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw NumericError("attention weights do not sum to 1");
    }
  }

  std::vector<Tensor> weighted;
  weighted.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    weighted.push_back(mul_rows(states.outputs[i], slice(step.weights, 1, i, i + 1)));
  }
  step.context = add_n(weighted);
  return step;
}

std::vector<Tensor> attention_keys(const EncoderStates& states,
                                   const AttentionWeights& w) {
  std::vector<Tensor> keys;
  keys.reserve(states.length());
  for (const auto& e : states.outputs) keys.push_back(matmul(e, w.key));
  return keys;
}

void init_uniform(Tensor& t, double limit, std::uint64_t seed) {
  Rng rng(seed);
  for (double& v : t.values()) v = rng.uniform(-limit, limit);
}

}  // namespace

AttentionStep attend(const Tensor& h_prev, const EncoderStates& states,
                     const AttentionWeights& weights) {
  if (states.length() == 0) throw ShapeError("attend: no encoder states");
  return attend_with_keys(h_prev, states, attention_keys(states, weights), weights);
}

StagingNetwork::StagingNetwork(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)) {
  config_.validate();
  const ModelConfig& c = config_;

  auto glorot = [&](const std::string& name, Shape shape, std::size_t fan_in,
                    std::size_t fan_out) {
    Tensor& t = params_.add(name, std::move(shape), true);
    init_uniform(t, std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)),
                 derive_seed(seed, name));
  };
  auto bias = [&](const std::string& name, std::size_t n) {
    params_.add(name, {n}, false);
  };

  for (const auto* which : {"small", "large"}) {
    const BranchConfig& b = std::string(which) == "small" ? c.small : c.large;
    std::size_t in = 1;
    for (std::size_t i = 0; i < b.layers.size(); ++i) {
      const auto& l = b.layers[i];
      const std::string name = "cnn/" + std::string(which) + "/conv" + std::to_string(i + 1);
      glorot(name + "/kernel", {l.filters, in, l.width}, in * l.width, l.filters * l.width);
      bias(name + "/bias", l.filters);
      in = l.filters;
    }
  }

  auto lstm_params = [&](const std::string& prefix, std::size_t in, std::size_t hidden) {
    glorot(prefix + "/input", {in, 4 * hidden}, in, 4 * hidden);
    glorot(prefix + "/recurrent", {hidden, 4 * hidden}, hidden, 4 * hidden);
    Tensor& b = params_.add(prefix + "/bias", {4 * hidden}, false);
    // Forget gates start open.
    for (std::size_t j = hidden; j < 2 * hidden; ++j) b.values()[j] = 1.0;
  };

  const std::size_t d = c.feature_dim();
  const std::size_t h = c.encoder_hidden;
  lstm_params("encoder/forward", d, h);
  lstm_params("encoder/backward", d, h);
  glorot("encoder/output/weight", {2 * h, c.encoder_output}, 2 * h, c.encoder_output);
  bias("encoder/output/bias", c.encoder_output);

  glorot("decoder/init/weight", {2 * h, c.decoder_hidden}, 2 * h, c.decoder_hidden);
  bias("decoder/init/bias", c.decoder_hidden);
  glorot("decoder/embedding", {static_cast<std::size_t>(kVocabularySize), c.decoder_hidden},
         kVocabularySize, c.decoder_hidden);
  glorot("attention/query", {c.decoder_hidden, c.attention_dim}, c.decoder_hidden, c.attention_dim);
  glorot("attention/key", {c.encoder_output, c.attention_dim}, c.encoder_output, c.attention_dim);
  glorot("attention/score", {c.attention_dim, 1}, c.attention_dim, 1);
  lstm_params("decoder/lstm", c.decoder_hidden + c.encoder_output, c.decoder_hidden);
  glorot("decoder/output/weight", {c.decoder_hidden, static_cast<std::size_t>(kNumOutputs)},
         c.decoder_hidden, kNumOutputs);
  bias("decoder/output/bias", kNumOutputs);
}

Tensor StagingNetwork::branch(const Tensor& x, const BranchConfig& cfg,
                              const std::string& name,
                              const ForwardOptions& options) const {
  Tensor out = x;
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    const auto& l = cfg.layers[i];
    const std::string layer = "cnn/" + name + "/conv" + std::to_string(i + 1);
    out = relu(add_channel_bias(conv1d(out, params_.get(layer + "/kernel"), l.stride, l.padding),
                                params_.get(layer + "/bias")));
    if (i == 0) {
      out = maxpool1d(out, cfg.first_pool_window, cfg.first_pool_stride);
      out = dropout(out, cfg.dropout, options.training,
                    derive_seed(options.seed, layer + "/dropout"));
    }
  }
  out = maxpool1d(out, cfg.last_pool_window, cfg.last_pool_stride);
  out = dropout(out, cfg.dropout, options.training,
                derive_seed(options.seed, "cnn/" + name + "/last/dropout"));
  return reshape(out, {x.dim(0), out.dim(1) * out.dim(2)});
}

Tensor StagingNetwork::cnn_features(const Tensor& epochs,
                                    const ForwardOptions& options) const {
  if (epochs.rank() != 2 || epochs.dim(1) != config_.epoch_samples) {
    throw ShapeError("cnn_features: expected [N, " + std::to_string(config_.epoch_samples) +
                     "] epochs, got " + shape_string(epochs.shape()));
  }
  const Tensor x = reshape(epochs, {epochs.dim(0), 1, config_.epoch_samples});
  const Tensor features = concat({branch(x, config_.small, "small", options),
                                  branch(x, config_.large, "large", options)},
                                 1);
  return dropout(features, config_.feature_dropout, options.training,
                 derive_seed(options.seed, "cnn/features/dropout"));
}

LstmWeights StagingNetwork::lstm(const std::string& prefix) const {
  return {params_.get(prefix + "/input"), params_.get(prefix + "/recurrent"),
          params_.get(prefix + "/bias")};
}

EncoderStates StagingNetwork::birnn_encode(std::span<const Tensor> steps) const {
  if (steps.empty()) throw ShapeError("birnn_encode: empty sequence");
  const std::size_t n = steps.size();
  const std::size_t rows = steps[0].dim(0);
  const std::size_t h = config_.encoder_hidden;
  const LstmWeights fw = lstm("encoder/forward");
  const LstmWeights bw = lstm("encoder/backward");

  EncoderStates states;
  states.forward_hidden.resize(n);
  states.backward_hidden.resize(n);
  LstmState f{Tensor::zeros({rows, h}), Tensor::zeros({rows, h})};
  for (std::size_t t = 0; t < n; ++t) {
    f = lstm_cell(steps[t], f, fw);
    states.forward_hidden[t] = f.h;
  }
  LstmState b{Tensor::zeros({rows, h}), Tensor::zeros({rows, h})};
  for (std::size_t t = n; t-- > 0;) {
    b = lstm_cell(steps[t], b, bw);
    states.backward_hidden[t] = b.h;
  }
  const Tensor& u = params_.get("encoder/output/weight");
  const Tensor& by = params_.get("encoder/output/bias");
  for (std::size_t t = 0; t < n; ++t) {
    states.outputs.push_back(
        add_bias(matmul(concat({states.forward_hidden[t], states.backward_hidden[t]}, 1), u), by));
  }
  return states;
}

EncoderStates StagingNetwork::encode_batch(const Tensor& epochs,
                                           std::size_t n_sequences,
                                           const ForwardOptions& options) const {
  if (n_sequences == 0 || epochs.rank() != 2 || epochs.dim(0) % n_sequences != 0) {
    throw ShapeError("encode_batch: " + shape_string(epochs.shape()) +
                     " is not a whole number of sequences");
  }
  const std::size_t length = epochs.dim(0) / n_sequences;
  const Tensor features = cnn_features(epochs, options);
  std::vector<Tensor> steps;
  for (std::size_t t = 0; t < length; ++t) {
    std::vector<std::size_t> rows(n_sequences);
    for (std::size_t s = 0; s < n_sequences; ++s) rows[s] = s * length + t;
    steps.push_back(gather_rows(features, rows));
  }
  return birnn_encode(steps);
}

AttentionWeights StagingNetwork::attention_weights() const {
  return {params_.get("attention/query"), params_.get("attention/key"),
          params_.get("attention/score")};
}

LstmState StagingNetwork::initial_decoder_state(const EncoderStates& states) const {
  const Tensor final_states =
      concat({states.forward_hidden.back(), states.backward_hidden.front()}, 1);
  const Tensor h0 = add_bias(matmul(final_states, params_.get("decoder/init/weight")),
                             params_.get("decoder/init/bias"));
  return {h0, Tensor::zeros(h0.shape())};
}

Tensor StagingNetwork::decoder_step(const std::vector<int>& symbols,
                                    const EncoderStates& states,
                                    const std::vector<Tensor>& keys,
                                    LstmState& state,
                                    AttentionStep& attention) const {
  std::vector<std::size_t> rows(symbols.size());
  for (std::size_t s = 0; s < symbols.size(); ++s) {
    if (symbols[s] < 0 || symbols[s] >= kVocabularySize) {
      throw ShapeError("decoder symbol " + std::to_string(symbols[s]) + " out of vocabulary");
    }
    rows[s] = static_cast<std::size_t>(symbols[s]);
  }
  attention = attend_with_keys(state.h, states, keys, attention_weights());
  const Tensor embedded = gather_rows(params_.get("decoder/embedding"), rows);
  state = lstm_cell(concat({embedded, attention.context}, 1), state, lstm("decoder/lstm"));
  return add_bias(matmul(state.h, params_.get("decoder/output/weight")),
                  params_.get("decoder/output/bias"));
}

TeacherForcedOutput StagingNetwork::decode_teacher_forced(
    const EncoderStates& states,
    const std::vector<std::vector<int>>& symbols) const {
  if (states.length() == 0) throw ShapeError("decode: no encoder states");
  const std::size_t rows = states.outputs[0].dim(0);
  if (symbols.size() != rows) {
    throw ShapeError("decode: " + std::to_string(symbols.size()) +
                     " symbol sequences for " + std::to_string(rows) + " encoder rows");
  }
  const std::size_t steps = symbols[0].size();
  for (const auto& seq : symbols) {
    if (seq.size() != steps) throw ShapeError("decode: ragged decoder inputs");
  }
  const auto keys = attention_keys(states, attention_weights());
  LstmState state = initial_decoder_state(states);
  TeacherForcedOutput out;
  std::vector<int> column(rows);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t s = 0; s < rows; ++s) column[s] = symbols[s][t];
    AttentionStep attention;
    out.logits.push_back(decoder_step(column, states, keys, state, attention));
    out.attention.push_back(std::move(attention));
  }
  return out;
}

InferenceOutput StagingNetwork::decode_inference(const EncoderStates& states) const {
  if (states.length() == 0) throw ShapeError("decode: no encoder states");
  const std::size_t rows = states.outputs[0].dim(0);
  const std::size_t steps = states.length();
  const auto keys = attention_keys(states, attention_weights());
  LstmState state = initial_decoder_state(states);
  InferenceOutput out;
  out.labels.assign(rows, {});
  std::vector<int> column(rows, kSodSymbol);
  for (std::size_t t = 0; t < steps; ++t) {
    AttentionStep attention;
    const Tensor logits = decoder_step(column, states, keys, state, attention);
    const Tensor probs = softmax(logits, 1);
    for (std::size_t s = 0; s < rows; ++s) {
      const auto p = probs.values().subspan(s * kNumOutputs, kNumOutputs);
      int best = 0;
      for (int k = 1; k < kNumOutputs; ++k) {
        if (p[k] > p[best]) best = k;
      }
      if (best == kEodOutput) {
        ++out.eod_substitutions;
        best = 0;
        for (int k = 1; k < kNumStages; ++k) {
          if (p[k] > p[best]) best = k;
        }
      }
      out.labels[s].push_back(best);
      column[s] = best;
    }
    out.attention.push_back(std::move(attention));
  }
  return out;
}

}  // namespace somnoseq
