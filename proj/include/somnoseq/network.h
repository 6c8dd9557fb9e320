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

// Sequence-to-sequence stage scorer: a two-branch 1-D CNN embeds every
// 30-s epoch, a bidirectional LSTM encodes the epoch sequence, and an LSTM
// decoder with additive attention emits one stage per epoch followed by EOD.

#ifndef SOMNOSEQ_NETWORK_H_
#define SOMNOSEQ_NETWORK_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "somnoseq/checkpoint.h"
#include "somnoseq/pipeline.h"
#include "somnoseq/tensor.h"

namespace somnoseq {

struct ConvLayerConfig {
  std::size_t width = 1;
  std::size_t filters = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// conv -> ReLU -> maxpool -> dropout -> conv -> ReLU -> ... -> conv -> ReLU
// -> maxpool -> dropout.
struct BranchConfig {
  std::vector<ConvLayerConfig> layers;
  std::size_t first_pool_window = 1;
  std::size_t first_pool_stride = 1;
  std::size_t last_pool_window = 1;
  std::size_t last_pool_stride = 1;
  double dropout = 0.5;
};

struct ModelConfig {
  std::size_t epoch_samples = 3000;
  BranchConfig small;
  BranchConfig large;
  double feature_dropout = 0.5;
  std::size_t encoder_hidden = 128;  // per direction
  std::size_t encoder_output = 128;  // size of each encoder state e_i
  std::size_t decoder_hidden = 128;  // also the symbol embedding size
  std::size_t attention_dim = 128;
  std::size_t maxtime = 10;

  // Full-size defaults (100 Hz, 3000-sample epochs); CNN geometry inherited
  // from the DeepSleepNet feature extractor.
  static ModelConfig standard();

  // Output length of one branch before flattening; throws ConfigError when a
  // layer does not fit.
  std::size_t branch_length(const BranchConfig& branch) const;
  std::size_t feature_dim() const;
  void validate() const;
};

struct Parameter {
  std::string name;
  Tensor value;
  bool is_weight = true;  // false for biases; only weights enter the L2 term
};

class ModelParams {
 public:
  Tensor& add(const std::string& name, Shape shape, bool is_weight);
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);

  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }
  std::vector<Tensor> tensors() const;
  std::vector<Tensor> weights() const;
  std::size_t count() const;  // scalar parameters

  void zero_grad();
  Checkpoint to_checkpoint(const std::string& prefix = "") const;
  // Throws DataError when an entry is missing or has the wrong shape.
  void load(const Checkpoint& checkpoint, const std::string& prefix = "");

 private:
  std::vector<Parameter> params_;
};

// Gate blocks are laid out [input | forget | candidate | output] along the
// 4 * hidden axis.
struct LstmWeights {
  Tensor input;      // [in, 4H]
  Tensor recurrent;  // [H, 4H]
  Tensor bias;       // [4H]
};

struct LstmState {
  Tensor h;  // [S, H]
  Tensor c;  // [S, H]
};

LstmState lstm_cell(const Tensor& x, const LstmState& prev,
                    const LstmWeights& weights);

struct EncoderStates {
  std::vector<Tensor> outputs;         // e_0 .. e_{n-1}, each [S, E]
  std::vector<Tensor> forward_hidden;  // per step, [S, H]
  std::vector<Tensor> backward_hidden;
  std::size_t length() const { return outputs.size(); }
};

struct AttentionWeights {
  Tensor query;  // W_h [decoder_hidden, A]
  Tensor key;    // W_e [E, A]
  Tensor score;  // v [A, 1]
};

struct AttentionStep {
  Tensor weights;  // alpha, [S, n]
  Tensor context;  // c_t, [S, E]
};

// score_i = v . tanh(W_h h_prev + W_e e_i); alpha = softmax_i(score);
// c = sum_i alpha_i e_i. Throws NumericError if alpha is not a probability
// vector within 1e-6.
AttentionStep attend(const Tensor& h_prev, const EncoderStates& states,
                     const AttentionWeights& weights);

struct ForwardOptions {
  bool training = false;
  std::uint64_t seed = 0;  // dropout masks
};

struct TeacherForcedOutput {
  std::vector<Tensor> logits;  // per decode step, [S, kNumOutputs]
  std::vector<AttentionStep> attention;
};

struct InferenceOutput {
  std::vector<std::vector<int>> labels;  // [S][maxtime]
  std::vector<AttentionStep> attention;
  std::size_t eod_substitutions = 0;  // EOD argmaxes replaced by runner-up
};

class StagingNetwork {
 public:
  StagingNetwork(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }

  // epochs [N, epoch_samples] -> features [N, feature_dim].
  Tensor cnn_features(const Tensor& epochs, const ForwardOptions& options) const;

  // One [S, feature_dim] tensor per time step.
  EncoderStates birnn_encode(std::span<const Tensor> steps) const;

  // symbols[s] is the decoder input sequence of sequence s; all have the
  // same length, which is the number of decode steps.
  TeacherForcedOutput decode_teacher_forced(
      const EncoderStates& states,
      const std::vector<std::vector<int>>& symbols) const;

  InferenceOutput decode_inference(const EncoderStates& states) const;

  // epochs [S * T, epoch_samples], row s * T + t holding epoch t of sequence s.
  EncoderStates encode_batch(const Tensor& epochs, std::size_t n_sequences,
                             const ForwardOptions& options) const;

  AttentionWeights attention_weights() const;

 private:
  Tensor branch(const Tensor& x, const BranchConfig& cfg,
                const std::string& name, const ForwardOptions& options) const;
  LstmWeights lstm(const std::string& prefix) const;
  LstmState initial_decoder_state(const EncoderStates& states) const;
  // One decoder step; returns logits and updates the running state.
  Tensor decoder_step(const std::vector<int>& symbols,
                      const EncoderStates& states,
                      const std::vector<Tensor>& keys, LstmState& state,
                      AttentionStep& attention) const;

  ModelConfig config_;
  ModelParams params_;
};

}  // namespace somnoseq

#endif  // SOMNOSEQ_NETWORK_H_
