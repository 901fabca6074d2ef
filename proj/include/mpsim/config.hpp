// Copyright 2026 The mpsim Authors.
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


#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpsim/error.hpp"
#include "mpsim/memory_model.hpp"
#include "mpsim/pipeline/types.hpp"
#include "mpsim/tp/transformer.hpp"

namespace mpsim {

/// Everything a partition or simulate run needs besides the model and the
/// cluster description.
struct RunConfig {
  int pipeline_parallel_degree = 1;
  int tensor_parallel_degree = 1;
  int microbatches = 1;
  pipeline::Policy pipeline = pipeline::Policy::Interleaved;
  std::string placement_strategy = "cluster";
  tp::Optimize optimize = tp::Optimize::Memory;
  bool static_mode = false;
  bool fast_mode = false;
  bool shard_optimizer_state = false;
  bool offload_activations = false;
  int activation_loading_horizon = 4;
  bool fp16_params = false;
  bool prescaled_batch = false;
  double alpha = 0.2;
  double bwd_factor = 2.0;

  std::optional<int> world_size;  // defaults to pp x tp
  int steps = 1;
  int record_steps = 5;
  std::optional<std::int64_t> batch_size;
  double jitter = 0.0;
  std::uint64_t seed = 0;
  bool checkpoint_all_sequential = false;
  std::vector<std::string> checkpoint_modules;
  CheckpointStrategy checkpoint_strategy;
  double optimizer_bytes_per_param = 8.0;
  double grad_bytes_per_param = 4.0;
  std::vector<std::string> tp_modules;

  int resolved_world_size() const {
    return world_size ? *world_size : pipeline_parallel_degree * tensor_parallel_degree;
  }

  void validate() const {
    if (pipeline_parallel_degree < 1) throw InfeasibleConfig("pipeline_parallel_degree must be >= 1");
    if (tensor_parallel_degree < 1) throw InfeasibleConfig("tensor_parallel_degree must be >= 1");
    if (microbatches < 1) throw InfeasibleConfig("microbatches must be >= 1");
    if (activation_loading_horizon < 1) throw InfeasibleConfig("activation_loading_horizon must be >= 1");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw InfeasibleConfig("alpha must lie in [0, 1]");
    if (!(bwd_factor >= 0.0)) throw InfeasibleConfig("bwd_factor must be >= 0");
    if (!(jitter >= 0.0 && jitter < 1.0)) throw InfeasibleConfig("jitter must lie in [0, 1)");
    if (steps < 1) throw InfeasibleConfig("steps must be >= 1");
    if (record_steps < 1) throw InfeasibleConfig("record_steps must be >= 1");
    if (fast_mode && !static_mode) throw InfeasibleConfig("fast_mode requires static_mode");
    if (batch_size && (*batch_size < 1 || *batch_size % microbatches != 0)) {
      throw InfeasibleConfig("batch_size " + std::to_string(*batch_size) + " does not split evenly into " +
                             std::to_string(microbatches) + " microbatches");
    }
    const int world = resolved_world_size();
    if (world < 1 || world % (pipeline_parallel_degree * tensor_parallel_degree) != 0) {
      throw InfeasibleConfig("world_size " + std::to_string(world) + " is not a multiple of pp x tp");
    }
  }

  MemoryConfig memory_config() const {
    MemoryConfig m;
    m.optimizer_bytes_per_param = optimizer_bytes_per_param;
    m.grad_bytes_per_param = grad_bytes_per_param;
    m.fp16_params = fp16_params;
    m.shard_optimizer_state = shard_optimizer_state;
    m.offload_activations = offload_activations;
    m.activation_loading_horizon = activation_loading_horizon;
    m.checkpoint_strategy = checkpoint_strategy;
    m.microbatches = microbatches;
    m.checkpoint_modules = checkpoint_modules;
    m.checkpoint_all_sequential = checkpoint_all_sequential;
    m.shard_tp_activations = optimize == tp::Optimize::Memory;
    return m;
  }
};

inline RunConfig load_run_config(const std::string& text) {
  using K = SpecError::Kind;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw SpecError(K::Parse, "", std::string("config JSON parse error: ") + e.what());
  }
  if (!j.is_object()) throw SpecError(K::Parse, "", "config JSON must be an object");
  static const std::set<std::string> known{
      "pipeline_parallel_degree", "partitions", "tensor_parallel_degree", "microbatches", "pipeline",
      "placement_strategy", "optimize", "static_mode", "fast_mode", "shard_optimizer_state", "offload_activations",
      "activation_loading_horizon", "fp16_params", "_prescaled_batch", "alpha", "bwd_factor", "world_size", "steps",
      "record_steps", "batch_size", "jitter", "seed", "activation_checkpointing", "checkpoint_strategy",
      "optimizer_bytes_per_param", "grad_bytes_per_param", "tp_modules", "ddp"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw SpecError(K::BadValue, key, "unknown config field '" + key + "'");
  }
  RunConfig c;
  try {
    if (j.contains("partitions")) c.pipeline_parallel_degree = j.at("partitions").get<int>();
    c.pipeline_parallel_degree = j.value("pipeline_parallel_degree", c.pipeline_parallel_degree);
    c.tensor_parallel_degree = j.value("tensor_parallel_degree", c.tensor_parallel_degree);
    c.microbatches = j.value("microbatches", c.microbatches);
    if (j.contains("pipeline")) c.pipeline = pipeline::policy_from_string(j.at("pipeline").get<std::string>());
    c.placement_strategy = j.value("placement_strategy", c.placement_strategy);
    if (j.contains("optimize")) c.optimize = tp::optimize_from_string(j.at("optimize").get<std::string>());
    c.static_mode = j.value("static_mode", c.static_mode);
    c.fast_mode = j.value("fast_mode", c.fast_mode);
    c.shard_optimizer_state = j.value("shard_optimizer_state", c.shard_optimizer_state);
    c.offload_activations = j.value("offload_activations", c.offload_activations);
    c.activation_loading_horizon = j.value("activation_loading_horizon", c.activation_loading_horizon);
    c.fp16_params = j.value("fp16_params", c.fp16_params);
    c.prescaled_batch = j.value("_prescaled_batch", c.prescaled_batch);
    c.alpha = j.value("alpha", c.alpha);
    c.bwd_factor = j.value("bwd_factor", c.bwd_factor);
    if (j.contains("world_size")) c.world_size = j.at("world_size").get<int>();
    c.steps = j.value("steps", c.steps);
    c.record_steps = j.value("record_steps", c.record_steps);
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::int64_t>();
    c.jitter = j.value("jitter", c.jitter);
    c.seed = j.value("seed", c.seed);
    if (j.contains("activation_checkpointing")) {
      const auto& a = j.at("activation_checkpointing");
      if (a.is_boolean()) c.checkpoint_all_sequential = a.get<bool>();
      else c.checkpoint_modules = a.get<std::vector<std::string>>();
    }
    if (j.contains("checkpoint_strategy")) {
      c.checkpoint_strategy = parse_checkpoint_strategy(j.at("checkpoint_strategy").get<std::string>());
    }
    c.optimizer_bytes_per_param = j.value("optimizer_bytes_per_param", c.optimizer_bytes_per_param);
    c.grad_bytes_per_param = j.value("grad_bytes_per_param", c.grad_bytes_per_param);
    if (j.contains("tp_modules")) c.tp_modules = j.at("tp_modules").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(K::Parse, "", std::string("config field has the wrong type: ") + e.what());
  }
  return c;
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j = {{"pipeline_parallel_degree", c.pipeline_parallel_degree},
                      {"tensor_parallel_degree", c.tensor_parallel_degree},
                      {"microbatches", c.microbatches},
                      {"pipeline", pipeline::to_string(c.pipeline)},
                      {"placement_strategy", c.placement_strategy},
                      {"optimize", tp::to_string(c.optimize)},
                      {"static_mode", c.static_mode},
                      {"fast_mode", c.fast_mode},
                      {"shard_optimizer_state", c.shard_optimizer_state},
                      {"offload_activations", c.offload_activations},
                      {"activation_loading_horizon", c.activation_loading_horizon},
                      {"fp16_params", c.fp16_params},
                      {"_prescaled_batch", c.prescaled_batch},
                      {"alpha", c.alpha},
                      {"bwd_factor", c.bwd_factor},
                      {"world_size", c.resolved_world_size()},
                      {"steps", c.steps},
                      {"record_steps", c.record_steps},
                      {"jitter", c.jitter},
                      {"seed", c.seed},
                      {"checkpoint_strategy", to_string(c.checkpoint_strategy)},
                      {"tp_modules", c.tp_modules}};
  if (c.checkpoint_all_sequential) j["activation_checkpointing"] = true;
  else j["activation_checkpointing"] = c.checkpoint_modules;
  if (c.batch_size) j["batch_size"] = *c.batch_size;
  return j;
}

}  // namespace mpsim
