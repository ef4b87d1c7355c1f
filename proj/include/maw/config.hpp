#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maw/eval.hpp"
#include "maw/model.hpp"

namespace maw {

/// Run description shared by the CLI subcommands. Every key is optional;
/// unknown keys at any level raise ConfigError carrying the key path.
///
///   {"data": {"source": "synthetic", "dim": 20, "rank": 1, "noise": 0.1}
///          | {"source": "csv", "path": "points.csv"},
///    "model": {<Hyperparams fields>},
///    "variant": "maw" | ["maw", "vae", ...],
///    "split": {"train_inliers": 500, "c": 0.2 | [..], "test_inliers": 200, "c_test": [..]},
///    "seeds": [0, 1, 2],
///    "output_dir": "out",
///    "sweep": {"param": "latent_dim", "values": [2, 4, 8]}}
struct RunConfig {
  eval::DataSpec data;
  Hyperparams model;
  std::vector<Variant> variants = {Variant::Maw};
  eval::SplitSpec split;
  std::vector<double> c_values = {0.2};
  std::vector<std::uint64_t> seeds = {0};
  std::string output_dir = ".";
  std::string sweep_param;
  std::vector<double> sweep_values;

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);
  nlohmann::json to_json() const;
  /// Consistency checks across sections; raises ConfigError.
  void validate() const;

  eval::ExperimentSpec experiment() const;
};

}  // namespace maw
