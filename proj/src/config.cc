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

#include "somnoseq/config.h"

#include <charconv>
#include <fstream>
#include <sstream>

#include "somnoseq/errors.h"

namespace somnoseq {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("invalid value '" + std::string(value) + "' for " + std::string(key));
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("invalid boolean '" + std::string(value) + "' for " + std::string(key));
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

// "window/stride"
void parse_pool(std::string_view key, std::string_view value, std::size_t& window,
                std::size_t& stride) {
  const auto slash = value.find('/');
  if (slash == std::string_view::npos) {
    throw ConfigError(std::string(key) + " expects window/stride, got '" +
                      std::string(value) + "'");
  }
  window = parse_number<std::size_t>(key, trim(value.substr(0, slash)));
  stride = parse_number<std::size_t>(key, trim(value.substr(slash + 1)));
}

bool set_branch(BranchConfig& branch, std::string_view field, std::string_view key,
                std::string_view value) {
  if (field == "layers") branch.layers = parse_layers(value);
  else if (field == "first_pool")
    parse_pool(key, value, branch.first_pool_window, branch.first_pool_stride);
  else if (field == "last_pool")
    parse_pool(key, value, branch.last_pool_window, branch.last_pool_stride);
  else if (field == "dropout") branch.dropout = parse_number<double>(key, value);
  else return false;
  return true;
}

}  // namespace

std::string dataset_variant_name(DatasetVariant variant) {
  switch (variant) {
    case DatasetVariant::kSleepEdf13: return "sleep-edf-13";
    case DatasetVariant::kSleepEdf18: return "sleep-edf-18";
    case DatasetVariant::kOther: return "other";
  }
  return "other";
}

std::string format_layers(const std::vector<ConvLayerConfig>& layers) {
  std::string out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(layers[i].width) + ':' + std::to_string(layers[i].filters) + ':' +
           std::to_string(layers[i].stride) + ':' + std::to_string(layers[i].padding);
  }
  return out;
}

std::vector<ConvLayerConfig> parse_layers(std::string_view text) {
  std::vector<ConvLayerConfig> out;
  while (!text.empty()) {
    const auto comma = text.find(',');
    const std::string_view item = trim(text.substr(0, comma));
    text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);
    std::size_t fields[4] = {0, 0, 1, 0};
    std::size_t n = 0;
    std::string_view rest = item;
    while (!rest.empty()) {
      if (n == 4) throw ConfigError("conv layer '" + std::string(item) + "' has too many fields");
      const auto colon = rest.find(':');
      fields[n++] = parse_number<std::size_t>("conv layer", trim(rest.substr(0, colon)));
      rest = colon == std::string_view::npos ? std::string_view{} : rest.substr(colon + 1);
    }
    if (n < 2) {
      throw ConfigError("conv layer '" + std::string(item) +
                        "' needs at least width:filters");
    }
    if (fields[0] == 0 || fields[1] == 0 || fields[2] == 0) {
      throw ConfigError("conv layer '" + std::string(item) +
                        "' needs positive width, filters and stride");
    }
    // Padding defaults to half the width.
    if (n < 4) fields[3] = fields[0] / 2;
    out.push_back({fields[0], fields[1], fields[2], fields[3]});
  }
  if (out.empty()) throw ConfigError("a CNN branch needs at least one conv layer");
  return out;
}

int RunConfig::effective_folds() const {
  if (folds > 0) return folds;
  return dataset == DatasetVariant::kSleepEdf13 ? 20 : 10;
}

void RunConfig::validate() const {
  model.validate();
  if (folds < 0) throw ConfigError("folds must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  if (max_steps < 0) throw ConfigError("max_steps must be non-negative");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(l2_beta >= 0.0)) throw ConfigError("l2_beta must be non-negative");
  if (!(rmsprop_decay >= 0.0 && rmsprop_decay < 1.0)) {
    throw ConfigError("rmsprop_decay must lie in [0, 1)");
  }
  if (!(rmsprop_epsilon > 0.0)) throw ConfigError("rmsprop_epsilon must be positive");
  if (smote_k < 1) throw ConfigError("smote_k must be at least 1");
  if (log_every < 1) throw ConfigError("log_every must be at least 1");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be at least 1");
  if (!(trim_wake_minutes >= 0.0)) throw ConfigError("trim_wake_minutes must be non-negative");
  if (fold < -1) throw ConfigError("fold must be -1 (all) or a fold index");
}

void RunConfig::set(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("expected key=value, got '" + std::string(assignment) + "'");
  }
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::set(std::string_view key, std::string_view value) {
  key = trim(key);
  value = trim(value);
  const std::string k(key);
  if (key == "input_dir") input_dir = value;
  else if (key == "manifest") manifest = value;
  else if (key == "output_dir") output_dir = value;
  else if (key == "channel") channel = value;
  else if (key == "dataset") {
    if (value == "sleep-edf-13") dataset = DatasetVariant::kSleepEdf13;
    else if (value == "sleep-edf-18") dataset = DatasetVariant::kSleepEdf18;
    else if (value == "other") dataset = DatasetVariant::kOther;
    else throw ConfigError("dataset must be sleep-edf-13, sleep-edf-18 or other");
  }
  else if (key == "folds") folds = parse_number<int>(key, value);
  else if (key == "intra_patient") intra_patient = parse_bool(key, value);
  else if (key == "trim_wake_minutes") trim_wake_minutes = parse_number<double>(key, value);
  else if (key == "maxtime" || key == "model.maxtime")
    model.maxtime = parse_number<std::size_t>(key, value);
  else if (key == "model.epoch_samples") model.epoch_samples = parse_number<std::size_t>(key, value);
  else if (key == "model.feature_dropout") model.feature_dropout = parse_number<double>(key, value);
  else if (key == "model.encoder_hidden") model.encoder_hidden = parse_number<std::size_t>(key, value);
  else if (key == "model.encoder_output") model.encoder_output = parse_number<std::size_t>(key, value);
  else if (key == "model.decoder_hidden") model.decoder_hidden = parse_number<std::size_t>(key, value);
  else if (key == "model.attention_dim") model.attention_dim = parse_number<std::size_t>(key, value);
  else if (key.starts_with("model.small.") &&
           set_branch(model.small, key.substr(12), key, value)) {}
  else if (key.starts_with("model.large.") &&
           set_branch(model.large, key.substr(12), key, value)) {}
  else if (key == "loss") loss = parse_loss_kind(value);
  else if (key == "eod_in_loss") eod_in_loss = parse_bool(key, value);
  else if (key == "l2_beta") l2_beta = parse_number<double>(key, value);
  else if (key == "learning_rate") learning_rate = parse_number<double>(key, value);
  else if (key == "rmsprop_decay") rmsprop_decay = parse_number<double>(key, value);
  else if (key == "rmsprop_epsilon") rmsprop_epsilon = parse_number<double>(key, value);
  else if (key == "batch_size") batch_size = parse_number<int>(key, value);
  else if (key == "max_epochs") max_epochs = parse_number<int>(key, value);
  else if (key == "max_steps") max_steps = parse_number<std::int64_t>(key, value);
  else if (key == "smote") smote = parse_bool(key, value);
  else if (key == "smote_k") smote_k = parse_number<int>(key, value);
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
  else if (key == "log_every") log_every = parse_number<int>(key, value);
  else if (key == "checkpoint_every") checkpoint_every = parse_number<int>(key, value);
  else if (key == "fold") fold = parse_number<int>(key, value);
  else throw ConfigError("unknown config key '" + k + "'");
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  auto b = [](bool v) { return v ? "true" : "false"; };
  auto branch = [&](const char* name, const BranchConfig& br) {
    out << "model." << name << ".layers = " << format_layers(br.layers) << '\n'
        << "model." << name << ".first_pool = " << br.first_pool_window << '/'
        << br.first_pool_stride << '\n'
        << "model." << name << ".last_pool = " << br.last_pool_window << '/'
        << br.last_pool_stride << '\n'
        << "model." << name << ".dropout = " << format_double(br.dropout) << '\n';
  };
  out << "# data\n"
      << "input_dir = " << input_dir << '\n'
      << "manifest = " << manifest << '\n'
      << "output_dir = " << output_dir << '\n'
      << "channel = " << channel << '\n'
      << "dataset = " << dataset_variant_name(dataset) << '\n'
      << "folds = " << folds << '\n'
      << "intra_patient = " << b(intra_patient) << '\n'
      << "trim_wake_minutes = " << format_double(trim_wake_minutes) << '\n'
      << "# model\n"
      << "maxtime = " << model.maxtime << '\n'
      << "model.epoch_samples = " << model.epoch_samples << '\n';
  branch("small", model.small);
  branch("large", model.large);
  out << "model.feature_dropout = " << format_double(model.feature_dropout) << '\n'
      << "model.encoder_hidden = " << model.encoder_hidden << '\n'
      << "model.encoder_output = " << model.encoder_output << '\n'
      << "model.decoder_hidden = " << model.decoder_hidden << '\n'
      << "model.attention_dim = " << model.attention_dim << '\n'
      << "# training\n"
      << "loss = " << loss_kind_name(loss) << '\n'
      << "eod_in_loss = " << b(eod_in_loss) << '\n'
      << "l2_beta = " << format_double(l2_beta) << '\n'
      << "learning_rate = " << format_double(learning_rate) << '\n'
      << "rmsprop_decay = " << format_double(rmsprop_decay) << '\n'
      << "rmsprop_epsilon = " << format_double(rmsprop_epsilon) << '\n'
      << "batch_size = " << batch_size << '\n'
      << "max_epochs = " << max_epochs << '\n'
      << "max_steps = " << max_steps << '\n'
      << "smote = " << b(smote) << '\n'
      << "smote_k = " << smote_k << '\n'
      << "seed = " << seed << '\n'
      << "log_every = " << log_every << '\n'
      << "checkpoint_every = " << checkpoint_every << '\n'
      << "fold = " << fold << '\n';
  return out.str();
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig config;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    try {
      config.set(line);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return config;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_text();
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace somnoseq
