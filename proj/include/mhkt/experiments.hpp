#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mhkt/dataset.hpp"
#include "mhkt/trainer.hpp"

namespace mhkt {

struct RunSpec {
  std::string name;
  TrainConfig cfg;
};

struct RunOutcome {
  std::string name;
  double accuracy = 0.0;
  double wall_seconds = 0.0;
};

/// Grid/run budget: default 200 runs, overridable via MHKT_RUN_CAP.
int run_cap();

/// Executes runs as independent workers (each owns its run directory and
/// RNG streams); results are ordered like the input specs.
std::vector<RunOutcome> run_specs(const Dataset& ds, const std::vector<RunSpec>& specs, int jobs);

struct AblationRow {
  std::string label;
  Toggles toggles;
};

/// The 7-row module grid in table order:
/// none / tais / tgkt / crkt / tais+tgkt / tgkt+crkt / all.
/// The "none" row is the source_finetune baseline (every module off).
const std::vector<AblationRow>& ablation_rows();

/// Runs the full toggle grid x seeds and writes a summary CSV
/// (mean, std, and per-seed accuracy per row, rows in table order).
std::vector<RunOutcome> run_ablation(const Dataset& ds, const TrainConfig& base, const std::vector<std::uint64_t>& seeds,
                                     const std::filesystem::path& out_dir, int jobs, bool force);

/// Hyperparameter sweep along one axis. Axis is one of lambda1, lambda2,
/// alpha, labeled_per_class; for labeled_per_class the token "ALL" selects
/// the full target training split. Emits per-seed rows plus a mean row per
/// value.
std::vector<RunOutcome> run_sweep(const Dataset& ds, const TrainConfig& base, const std::string& axis,
                                  const std::vector<std::string>& values, const std::vector<std::uint64_t>& seeds,
                                  const std::filesystem::path& out_dir, int jobs, bool force);

}  // namespace mhkt
