#include "mhkt/experiments.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <stdexcept>
#include <thread>

namespace mhkt {

namespace fs = std::filesystem;

int run_cap() {
  if (const char* env = std::getenv("MHKT_RUN_CAP")) {
    const int cap = std::atoi(env);
    if (cap > 0) return cap;
  }
  return 200;
}

std::vector<RunOutcome> run_specs(const Dataset& ds, const std::vector<RunSpec>& specs, int jobs) {
  std::vector<RunOutcome> outcomes(specs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= specs.size()) return;
      const auto t0 = std::chrono::steady_clock::now();
      Trainer<float> trainer(ds, specs[i].cfg);
      TrainResult res = trainer.train();
      outcomes[i].name = specs[i].name;
      outcomes[i].accuracy = res.final_eval.accuracy;
      outcomes[i].wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
  };
  jobs = std::max(1, jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return outcomes;
}

const std::vector<AblationRow>& ablation_rows() {
  static const std::vector<AblationRow> rows = {
      {"none", {false, false, false}},     {"tais", {true, false, false}},  {"tgkt", {false, true, false}},
      {"crkt", {false, false, true}},      {"tais+tgkt", {true, true, false}}, {"tgkt+crkt", {false, true, true}},
      {"all", {true, true, true}},
  };
  return rows;
}

namespace {

void check_cap(std::size_t n_runs) {
  const int cap = run_cap();
  if (static_cast<int>(n_runs) > cap)
    throw std::invalid_argument("experiment grid of " + std::to_string(n_runs) + " runs exceeds the cap of " +
                                std::to_string(cap) + " (override with MHKT_RUN_CAP)");
}

void check_out_file(const fs::path& p, bool force) {
  if (fs::exists(p) && !force) throw std::runtime_error(p.string() + " already exists (use force)");
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

std::vector<RunOutcome> run_ablation(const Dataset& ds, const TrainConfig& base, const std::vector<std::uint64_t>& seeds,
                                     const fs::path& out_dir, int jobs, bool force) {
  const auto& rows = ablation_rows();
  check_cap(rows.size() * seeds.size());
  const fs::path csv = out_dir / "ablation.csv";
  check_out_file(csv, force);
  fs::create_directories(out_dir);

  std::vector<RunSpec> specs;
  for (const auto& row : rows) {
    for (std::uint64_t seed : seeds) {
      RunSpec spec;
      spec.name = row.label + "_seed" + std::to_string(seed);
      spec.cfg = base;
      spec.cfg.variant = Variant::mhkt;
      spec.cfg.toggles = row.toggles;
      spec.cfg.seed = seed;
      spec.cfg.out_dir = (out_dir / "runs" / spec.name).string();
      spec.cfg.force = force;
      specs.push_back(std::move(spec));
    }
  }
  const auto outcomes = run_specs(ds, specs, jobs);

  std::ofstream os(csv);
  os << "row,tais,tgkt,crkt,mean_accuracy,std_accuracy";
  for (std::uint64_t seed : seeds) os << ",acc_seed_" << seed;
  os << "\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::vector<double> accs;
    for (std::size_t s = 0; s < seeds.size(); ++s) accs.push_back(outcomes[r * seeds.size() + s].accuracy);
    os << rows[r].label << "," << rows[r].toggles.tais << "," << rows[r].toggles.tgkt << "," << rows[r].toggles.crkt
       << "," << mean_of(accs) << "," << std_of(accs);
    for (double a : accs) os << "," << a;
    os << "\n";
  }
  return outcomes;
}

std::vector<RunOutcome> run_sweep(const Dataset& ds, const TrainConfig& base, const std::string& axis,
                                  const std::vector<std::string>& values, const std::vector<std::uint64_t>& seeds,
                                  const fs::path& out_dir, int jobs, bool force) {
  if (axis != "lambda1" && axis != "lambda2" && axis != "alpha" && axis != "labeled_per_class")
    throw std::invalid_argument("unknown sweep axis: " + axis);
  if (values.empty()) throw std::invalid_argument("sweep: empty value list");
  check_cap(values.size() * seeds.size());
  const fs::path csv = out_dir / ("sweep_" + axis + ".csv");
  check_out_file(csv, force);
  fs::create_directories(out_dir);

  std::vector<RunSpec> specs;
  for (const auto& value : values) {
    for (std::uint64_t seed : seeds) {
      RunSpec spec;
      spec.cfg = base;
      spec.cfg.seed = seed;
      if (axis == "labeled_per_class") {
        spec.cfg.labeled_per_class = value == "ALL" ? -1 : std::stoi(value);
      } else {
        const double v = std::stod(value);
        if (axis == "lambda1") spec.cfg.weights.lambda1 = v;
        if (axis == "lambda2") spec.cfg.weights.lambda2 = v;
        if (axis == "alpha") spec.cfg.weights.alpha = v;
      }
      spec.name = axis + "_" + value + "_seed" + std::to_string(seed);
      spec.cfg.out_dir = (out_dir / "runs" / spec.name).string();
      spec.cfg.force = force;
      specs.push_back(std::move(spec));
    }
  }
  const auto outcomes = run_specs(ds, specs, jobs);

  std::ofstream os(csv);
  os << "axis,value,seed,accuracy\n";
  for (std::size_t v = 0; v < values.size(); ++v) {
    std::vector<double> accs;
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      const double acc = outcomes[v * seeds.size() + s].accuracy;
      accs.push_back(acc);
      os << axis << "," << values[v] << "," << seeds[s] << "," << acc << "\n";
    }
    os << axis << "," << values[v] << ",mean," << mean_of(accs) << "\n";
  }
  return outcomes;
}

}  // namespace mhkt
