#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mhkt/ascsim.hpp"

namespace mhkt {

/// Resolved contents of manifest.json.
struct DatasetManifest {
  int version = 1;
  int num_classes = 0;
  std::uint64_t seed = 0;
  int image_h = 0;
  int image_w = 0;
  ascsim::RadarConfig radar;
  std::vector<int> source_per_class;
  std::vector<int> target_train_per_class;
  std::vector<int> target_test_per_class;
};

struct GenerateConfig {
  ascsim::RadarConfig radar;
  int num_classes = 3;
  int n_source_per_class = 360;
  int n_target_per_class = 233;      // target-domain training pool
  int n_target_test_per_class = 195; // held-out target test split
  std::uint64_t seed = 1;
  int image_h = 128;
  int image_w = 128;
};

/// One source-domain record: a labelled scattering-center set.
struct SourceRecord {
  int label = 0;
  std::vector<ascsim::ScatteringCenter> centers;
};

/// A labelled stack of magnitude images, one row per sample (H*W floats).
struct ImageSet {
  int image_h = 0;
  int image_w = 0;
  std::vector<int> labels;
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> data;

  int size() const { return static_cast<int>(labels.size()); }
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<SourceRecord> source;
  ImageSet target_train;
  ImageSet target_test;
};

/// Writes manifest.json, source/scs.jsonl, target/{images.f32,labels.csv}
/// and target_test/{images.f32,labels.csv} under out_dir. Byte-identical
/// output for identical configs. Refuses an existing dataset unless force.
DatasetManifest generate_dataset(const GenerateConfig& cfg, const std::filesystem::path& out_dir, bool force = false);

Dataset load_dataset(const std::filesystem::path& dir);

DatasetManifest load_manifest(const std::filesystem::path& dir);

}  // namespace mhkt
