#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "slidegcd/pipeline.hpp"

namespace slidegcd {

// Training configuration plus where the data comes from and where outputs go.
struct RunConfig {
  TrainConfig train;
  std::optional<SyntheticSpec> synthetic;
  std::filesystem::path train_manifest;
  std::filesystem::path val_manifest;
  std::filesystem::path test_manifest;
  std::filesystem::path out;
};

using Override = std::pair<std::string, std::string>;

// `key=value`; throws ConfigError when malformed.
Override parse_override(const std::string& text);

// Overrides name a TrainConfig key, `out`, or `synthetic.<field>`; values are
// read as JSON literals and fall back to plain strings. Relative manifest paths
// resolve against base_dir.
RunConfig parse_run_config(nlohmann::json doc, const std::vector<Override>& overrides,
                           const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<Override>& overrides);

Dataset load_run_dataset(const RunConfig& run);

struct GridAxis {
  std::string key;
  std::vector<std::string> values;
};

// `key=v1,v2,...`
GridAxis parse_grid_axis(const std::string& text);

// Cartesian product, first axis outermost.
std::vector<std::vector<Override>> expand_grid(const std::vector<GridAxis>& axes);

struct SweepRow {
  std::size_t cell = 0;
  std::string grid;
  std::uint64_t seed = 0;
  EvalReport report;
};

// Runs every cell on the same dataset; cell i trains with seed mix_seed(base, i).
std::vector<SweepRow> run_sweep(const nlohmann::json& doc, const std::vector<Override>& base,
                                const std::vector<GridAxis>& axes,
                                const std::filesystem::path& base_dir,
                                const std::filesystem::path& out, unsigned jobs = 1);

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace slidegcd
