#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "mhkt/dataset.hpp"
#include "mhkt/trainer.hpp"

namespace mhkt_test {

/// Small generation config shared by trainer/CLI tests: 16x16 grid, 24x24
/// images, 3 classes, a handful of samples per class.
inline mhkt::GenerateConfig tiny_gen_config(std::uint64_t seed = 5) {
  mhkt::GenerateConfig gen;
  gen.radar.n_freq = 16;
  gen.radar.n_az = 16;
  gen.image_h = gen.image_w = 24;
  gen.num_classes = 3;
  gen.n_source_per_class = 12;
  gen.n_target_per_class = 6;
  gen.n_target_test_per_class = 6;
  gen.seed = seed;
  return gen;
}

/// Lazily generated per-process dataset fixture.
inline const std::filesystem::path& tiny_dataset_dir() {
  static const std::filesystem::path dir = [] {
    const auto d = std::filesystem::temp_directory_path() / "mhkt_tiny_fixture";
    if (!std::filesystem::exists(d / "manifest.json")) {
      std::filesystem::remove_all(d);
      mhkt::generate_dataset(tiny_gen_config(), d, true);
    }
    return d;
  }();
  return dir;
}

inline const mhkt::Dataset& tiny_dataset() {
  static const mhkt::Dataset ds = mhkt::load_dataset(tiny_dataset_dir());
  return ds;
}

/// Shrunken architecture for gradient checks and fast trainer tests.
inline mhkt::TrainConfig tiny_train_config() {
  mhkt::TrainConfig cfg;
  cfg.labeled_per_class = 4;
  cfg.batch = 4;
  cfg.epochs = 2;
  cfg.sesf_dim = 10;
  cfg.latent_dim = 4;
  cfg.common_dim = 12;
  cfg.graph_hidden = 6;
  cfg.graph_layers = 2;
  cfg.bottleneck_hidden = 8;
  cfg.image_channels = {2, 2};
  cfg.image_final_channels = 3;
  cfg.image_final_kernel = 2;
  cfg.eval_every = 1;
  return cfg;
}

inline std::string cli_path() {
  const char* env = std::getenv("MHKT_CLI");
  return env ? env : "";
}

/// Runs the CLI binary; returns the process exit code (-1 if unavailable).
inline int run_cli(const std::string& args) {
  const std::string bin = cli_path();
  if (bin.empty()) return -1;
  const int status = std::system((bin + " " + args + " >/dev/null 2>&1").c_str());
  if (status == -1) return -1;
  return WEXITSTATUS(status);
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace mhkt_test
