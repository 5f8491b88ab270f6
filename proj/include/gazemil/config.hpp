#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "gazemil/synthdata.hpp"
#include "gazemil/train_eval.hpp"

namespace gazemil {

/// Everything one CLI invocation may configure. `data.window` and
/// `data.bag_size` are the authoritative M and K; they are copied into
/// `train` when the config is finalized.
struct RunConfig {
  DatasetConfig data;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<int> k_values{10, 20, 30, 40, 50};
  std::uint64_t uniform_seed = 7;
};

/// Desk-scale (desk-dr, 30 epochs, small encoder) or paper-scale
/// (paper-dr, 100 epochs, lr 1e-4, residual encoder) defaults.
RunConfig default_run_config(bool paper_scale);

/// Applies `key = value` lines (blank lines and `#` comments ignored) on top
/// of `base`. A `preset` key is applied before every other key. Unknown keys
/// and malformed values throw InputError naming the line.
RunConfig parse_run_config(std::string_view text, RunConfig base);
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base);

/// Copies K and M into the training config and validates both halves.
void finalize(RunConfig& config);

/// Every accepted key, sorted.
std::vector<std::string> config_keys();

}  // namespace gazemil
