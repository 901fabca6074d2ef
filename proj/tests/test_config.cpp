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


#include <gtest/gtest.h>

#include "mpsim/config.hpp"

namespace mpsim {
namespace {

TEST(RunConfig, Defaults) {
  const auto c = load_run_config("{}");
  EXPECT_EQ(c.pipeline_parallel_degree, 1);
  EXPECT_EQ(c.tensor_parallel_degree, 1);
  EXPECT_EQ(c.pipeline, pipeline::Policy::Interleaved);
  EXPECT_EQ(c.optimize, tp::Optimize::Memory);
  EXPECT_EQ(c.activation_loading_horizon, 4);
  EXPECT_EQ(c.resolved_world_size(), 1);
  EXPECT_NO_THROW(c.validate());
}

TEST(RunConfig, ReadsEveryField) {
  const auto c = load_run_config(R"({
    "pipeline_parallel_degree": 4, "tensor_parallel_degree": 2, "microbatches": 8, "pipeline": "simple",
    "placement_strategy": "spread", "optimize": "speed", "static_mode": true, "fast_mode": true,
    "shard_optimizer_state": true, "offload_activations": true, "activation_loading_horizon": 2,
    "fp16_params": true, "_prescaled_batch": true, "alpha": 0.4, "bwd_factor": 3.0, "world_size": 16,
    "steps": 9, "record_steps": 3, "batch_size": 64, "jitter": 0.1, "seed": 12,
    "activation_checkpointing": ["layers"], "checkpoint_strategy": "group_2", "tp_modules": ["layers"],
    "optimizer_bytes_per_param": 12, "grad_bytes_per_param": 2, "ddp": true})");
  EXPECT_EQ(c.pipeline_parallel_degree, 4);
  EXPECT_EQ(c.pipeline, pipeline::Policy::Simple);
  EXPECT_EQ(c.optimize, tp::Optimize::Speed);
  EXPECT_TRUE(c.fast_mode);
  EXPECT_TRUE(c.prescaled_batch);
  EXPECT_EQ(c.resolved_world_size(), 16);
  EXPECT_EQ(c.checkpoint_modules, std::vector<std::string>{"layers"});
  EXPECT_EQ(to_string(c.checkpoint_strategy), "group_2");
  EXPECT_NO_THROW(c.validate());
  const auto m = c.memory_config();
  EXPECT_EQ(m.optimizer_bytes_per_param, 12.0);
  EXPECT_EQ(m.microbatches, 8);
  EXPECT_FALSE(m.shard_tp_activations);
  const auto again = load_run_config(to_json(c).dump());
  EXPECT_EQ(to_json(again).dump(), to_json(c).dump());
}

TEST(RunConfig, PartitionsAlias) {
  EXPECT_EQ(load_run_config(R"({"partitions": 3})").pipeline_parallel_degree, 3);
}

TEST(RunConfig, BooleanCheckpointingMeansAllSequential) {
  EXPECT_TRUE(load_run_config(R"({"activation_checkpointing": true})").checkpoint_all_sequential);
}

TEST(RunConfig, SchemaErrors) {
  auto kind_of = [](const char* text) -> std::optional<SpecError::Kind> {
    try {
      load_run_config(text);
    } catch (const SpecError& e) {
      return e.kind();
    }
    return std::nullopt;
  };
  EXPECT_EQ(kind_of("{"), SpecError::Kind::Parse);
  EXPECT_EQ(kind_of("[]"), SpecError::Kind::Parse);
  EXPECT_EQ(kind_of(R"({"microbatches": "four"})"), SpecError::Kind::Parse);
  EXPECT_EQ(kind_of(R"({"pipline": "simple"})"), SpecError::Kind::BadValue);
  EXPECT_EQ(kind_of(R"({"pipeline": "zigzag"})"), SpecError::Kind::BadValue);
  EXPECT_EQ(kind_of(R"({"checkpoint_strategy": "group_1"})"), SpecError::Kind::BadValue);
}

TEST(RunConfig, InfeasibleCombinations) {
  for (const char* text : {R"({"pipeline_parallel_degree": 0})", R"({"fast_mode": true})",
                           R"({"microbatches": 3, "batch_size": 8})",
                           R"({"pipeline_parallel_degree": 2, "tensor_parallel_degree": 2, "world_size": 6})",
                           R"({"jitter": 1.0})", R"({"alpha": 1.5})", R"({"activation_loading_horizon": 0})"}) {
    EXPECT_THROW(load_run_config(text).validate(), InfeasibleConfig) << text;
  }
}

}  // namespace
}  // namespace mpsim
