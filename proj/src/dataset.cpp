#include "mhkt/dataset.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

namespace mhkt {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void write_f32_le(std::ofstream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                         static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
  os.write(bytes, 4);
}

float read_f32_le(std::istream& is) {
  unsigned char bytes[4];
  is.read(reinterpret_cast<char*>(bytes), 4);
  const std::uint32_t bits = static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
                             (static_cast<std::uint32_t>(bytes[2]) << 16) |
                             (static_cast<std::uint32_t>(bytes[3]) << 24);
  float v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

json radar_to_json(const ascsim::RadarConfig& r) {
  return json{{"center_frequency", r.center_frequency},
              {"bandwidth", r.bandwidth},
              {"n_freq", r.n_freq},
              {"azimuth_center", r.azimuth_center},
              {"azimuth_span", r.azimuth_span},
              {"n_az", r.n_az},
              {"azimuth_resolution", r.azimuth_resolution},
              {"wave_speed", r.wave_speed}};
}

ascsim::RadarConfig radar_from_json(const json& j) {
  ascsim::RadarConfig r;
  r.center_frequency = j.at("center_frequency").get<double>();
  r.bandwidth = j.at("bandwidth").get<double>();
  r.n_freq = j.at("n_freq").get<int>();
  r.azimuth_center = j.at("azimuth_center").get<double>();
  r.azimuth_span = j.at("azimuth_span").get<double>();
  r.n_az = j.at("n_az").get<int>();
  r.azimuth_resolution = j.at("azimuth_resolution").get<double>();
  r.wave_speed = j.at("wave_speed").get<double>();
  return r;
}

void write_image_set(const fs::path& dir, const std::vector<std::pair<int, Eigen::MatrixXd>>& samples) {
  fs::create_directories(dir);
  std::ofstream img(dir / "images.f32", std::ios::binary);
  std::ofstream labels(dir / "labels.csv");
  if (!img || !labels) throw std::runtime_error("generate_dataset: cannot write under " + dir.string());
  labels << "index,class\n";
  int index = 0;
  for (const auto& [cls, m] : samples) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) write_f32_le(img, static_cast<float>(m(r, c)));
    labels << index << "," << cls << "\n";
    ++index;
  }
}

ImageSet load_image_set(const fs::path& dir, int h, int w) {
  ImageSet set;
  set.image_h = h;
  set.image_w = w;

  std::ifstream labels(dir / "labels.csv");
  if (!labels) throw std::runtime_error("load_dataset: missing " + (dir / "labels.csv").string());
  std::string line;
  std::getline(labels, line);  // header
  while (std::getline(labels, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error("load_dataset: malformed labels.csv line: " + line);
    set.labels.push_back(std::stoi(line.substr(comma + 1)));
  }

  const int n = set.size();
  std::ifstream img(dir / "images.f32", std::ios::binary);
  if (!img) throw std::runtime_error("load_dataset: missing " + (dir / "images.f32").string());
  set.data.resize(n, h * w);
  for (int i = 0; i < n; ++i)
    for (int p = 0; p < h * w; ++p) set.data(i, p) = read_f32_le(img);
  if (!img) throw std::runtime_error("load_dataset: images.f32 truncated in " + dir.string());
  return set;
}

}  // namespace

DatasetManifest generate_dataset(const GenerateConfig& cfg, const fs::path& out_dir, bool force) {
  if (cfg.num_classes < 2) throw std::invalid_argument("generate_dataset: need at least 2 classes");
  if (cfg.num_classes > ascsim::kNumBuiltinClasses)
    throw std::invalid_argument("generate_dataset: at most " + std::to_string(ascsim::kNumBuiltinClasses) +
                                " classes are available");
  if (cfg.n_source_per_class < 1 || cfg.n_target_per_class < 1 || cfg.n_target_test_per_class < 1)
    throw std::invalid_argument("generate_dataset: per-class counts must be >= 1");
  cfg.radar.validate();
  if (cfg.image_h < cfg.radar.n_freq || cfg.image_w < cfg.radar.n_az)
    throw std::invalid_argument("generate_dataset: image size must cover the sampled grid");

  if (fs::exists(out_dir / "manifest.json") && !force)
    throw std::runtime_error("generate_dataset: " + out_dir.string() + " already holds a dataset (use force)");
  fs::create_directories(out_dir);

  DatasetManifest man;
  man.num_classes = cfg.num_classes;
  man.seed = cfg.seed;
  man.image_h = cfg.image_h;
  man.image_w = cfg.image_w;
  man.radar = cfg.radar;
  man.source_per_class.assign(cfg.num_classes, cfg.n_source_per_class);
  man.target_train_per_class.assign(cfg.num_classes, cfg.n_target_per_class);
  man.target_test_per_class.assign(cfg.num_classes, cfg.n_target_test_per_class);

  std::vector<ascsim::TargetTemplate> templates;
  for (int c = 0; c < cfg.num_classes; ++c) templates.push_back(ascsim::generate_target_template(c, cfg.seed));

  // Source domain: scattering-center sets, one JSON object per line.
  fs::create_directories(out_dir / "source");
  {
    std::ofstream scs_out(out_dir / "source" / "scs.jsonl");
    if (!scs_out) throw std::runtime_error("generate_dataset: cannot write under " + out_dir.string());
    for (int c = 0; c < cfg.num_classes; ++c) {
      for (int i = 0; i < cfg.n_source_per_class; ++i) {
        Rng rng(derive_seed(cfg.seed, "source", static_cast<std::uint64_t>(c) * 1000000 + i));
        const auto centers = ascsim::jitter_template(templates[c], rng);
        json rec;
        rec["class"] = c;
        json arr = json::array();
        for (const auto& s : centers)
          arr.push_back({s.amplitude, s.length, s.freq_dependence, s.orientation, s.x, s.y, s.z, s.aspect_damping});
        rec["centers"] = std::move(arr);
        scs_out << rec.dump() << "\n";
      }
    }
  }

  // Target domain: an independent stream of jittered instances, rendered.
  auto make_images = [&](const char* tag, int per_class) {
    std::vector<std::pair<int, Eigen::MatrixXd>> samples;
    samples.reserve(static_cast<std::size_t>(per_class) * cfg.num_classes);
    for (int c = 0; c < cfg.num_classes; ++c) {
      for (int i = 0; i < per_class; ++i) {
        Rng rng(derive_seed(cfg.seed, tag, static_cast<std::uint64_t>(c) * 1000000 + i));
        const auto centers = ascsim::jitter_template(templates[c], rng);
        const auto field = ascsim::synthesize_backscatter(centers, cfg.radar);
        samples.emplace_back(c, ascsim::render_image(field, cfg.radar, cfg.image_h, cfg.image_w));
      }
    }
    return samples;
  };
  write_image_set(out_dir / "target", make_images("target_train", cfg.n_target_per_class));
  write_image_set(out_dir / "target_test", make_images("target_test", cfg.n_target_test_per_class));

  json jman;
  jman["version"] = man.version;
  jman["K"] = man.num_classes;
  jman["seed"] = man.seed;
  jman["image_shape"] = {man.image_h, man.image_w};
  jman["radar"] = radar_to_json(man.radar);
  jman["counts"] = {{"source", man.source_per_class},
                    {"target_train", man.target_train_per_class},
                    {"target_test", man.target_test_per_class}};
  std::ofstream mo(out_dir / "manifest.json");
  mo << jman.dump(2) << "\n";
  return man;
}

DatasetManifest load_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("load_manifest: missing " + (dir / "manifest.json").string());
  json j;
  in >> j;
  DatasetManifest man;
  man.version = j.at("version").get<int>();
  man.num_classes = j.at("K").get<int>();
  man.seed = j.at("seed").get<std::uint64_t>();
  man.image_h = j.at("image_shape").at(0).get<int>();
  man.image_w = j.at("image_shape").at(1).get<int>();
  man.radar = radar_from_json(j.at("radar"));
  man.source_per_class = j.at("counts").at("source").get<std::vector<int>>();
  man.target_train_per_class = j.at("counts").at("target_train").get<std::vector<int>>();
  man.target_test_per_class = j.at("counts").at("target_test").get<std::vector<int>>();
  return man;
}

Dataset load_dataset(const fs::path& dir) {
  Dataset ds;
  ds.manifest = load_manifest(dir);

  std::ifstream scs_in(dir / "source" / "scs.jsonl");
  if (!scs_in) throw std::runtime_error("load_dataset: missing " + (dir / "source" / "scs.jsonl").string());
  std::string line;
  while (std::getline(scs_in, line)) {
    if (line.empty()) continue;
    const json rec = json::parse(line);
    SourceRecord sr;
    sr.label = rec.at("class").get<int>();
    for (const auto& a : rec.at("centers")) {
      ascsim::ScatteringCenter s;
      s.amplitude = a.at(0).get<double>();
      s.length = a.at(1).get<double>();
      s.freq_dependence = a.at(2).get<double>();
      s.orientation = a.at(3).get<double>();
      s.x = a.at(4).get<double>();
      s.y = a.at(5).get<double>();
      s.z = a.at(6).get<double>();
      s.aspect_damping = a.at(7).get<double>();
      sr.centers.push_back(s);
    }
    ds.source.push_back(std::move(sr));
  }

  ds.target_train = load_image_set(dir / "target", ds.manifest.image_h, ds.manifest.image_w);
  ds.target_test = load_image_set(dir / "target_test", ds.manifest.image_h, ds.manifest.image_w);
  return ds;
}

}  // namespace mhkt
