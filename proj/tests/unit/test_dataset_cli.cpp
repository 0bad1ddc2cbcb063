#include <doctest.h>

#include <fstream>
#include <json.hpp>
#include <set>

#include "mhkt/dataset.hpp"
#include "support/test_util.hpp"

using namespace mhkt;
using nlohmann::json;
namespace fs = std::filesystem;

TEST_CASE("generate_dataset: manifest counts, schema, loader round-trip") {
  const auto dir = fs::temp_directory_path() / "mhkt_ds_roundtrip";
  fs::remove_all(dir);
  auto gen = mhkt_test::tiny_gen_config(11);
  gen.n_source_per_class = 5;
  gen.n_target_per_class = 2;
  gen.n_target_test_per_class = 2;
  const auto man = generate_dataset(gen, dir);
  CHECK(man.source_per_class == std::vector<int>(3, 5));
  CHECK(man.target_train_per_class == std::vector<int>(3, 2));

  // schema of manifest.json
  json j;
  std::ifstream(dir / "manifest.json") >> j;
  for (const char* key : {"version", "K", "seed", "image_shape", "radar", "counts"}) CHECK(j.contains(key));
  CHECK(j["K"] == 3);
  CHECK(j["image_shape"][0] == 24);
  for (const char* key : {"center_frequency", "bandwidth", "n_freq", "azimuth_center", "azimuth_span", "n_az",
                          "azimuth_resolution", "wave_speed"})
    CHECK(j["radar"].contains(key));

  const auto ds = load_dataset(dir);
  CHECK(ds.source.size() == 15);
  CHECK(ds.target_train.size() == 6);
  CHECK(ds.target_test.size() == 6);
  CHECK(ds.target_train.data.cols() == 24 * 24);
  CHECK(ds.manifest.radar.n_freq == 16);
  for (const auto& rec : ds.source) {
    CHECK(rec.label >= 0);
    CHECK(rec.label < 3);
    CHECK(rec.centers.size() >= 3);
    for (const auto& c : rec.centers) CHECK_NOTHROW(c.validate());
  }
  // images are peak-normalized
  CHECK(ds.target_train.data.maxCoeff() == doctest::Approx(1.0f).epsilon(1e-6));
  fs::remove_all(dir);
}

TEST_CASE("generate_dataset: smallest valid dataset round-trips") {
  const auto dir = fs::temp_directory_path() / "mhkt_ds_minimal";
  fs::remove_all(dir);
  auto gen = mhkt_test::tiny_gen_config(2);
  gen.n_source_per_class = 1;
  gen.n_target_per_class = 1;
  gen.n_target_test_per_class = 1;
  generate_dataset(gen, dir);
  const auto ds = load_dataset(dir);
  CHECK(ds.source.size() == 3);
  CHECK(ds.target_train.size() == 3);
  CHECK(ds.target_test.size() == 3);
  fs::remove_all(dir);
}

TEST_CASE("generate_dataset is byte-reproducible per seed") {
  const auto dir_a = fs::temp_directory_path() / "mhkt_ds_repro_a";
  const auto dir_b = fs::temp_directory_path() / "mhkt_ds_repro_b";
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  auto gen = mhkt_test::tiny_gen_config(21);
  gen.n_source_per_class = 3;
  gen.n_target_per_class = 2;
  gen.n_target_test_per_class = 1;
  generate_dataset(gen, dir_a);
  generate_dataset(gen, dir_b);
  for (const char* rel : {"manifest.json", "source/scs.jsonl", "target/images.f32", "target/labels.csv",
                          "target_test/images.f32", "target_test/labels.csv"}) {
    CHECK(mhkt_test::slurp(dir_a / rel) == mhkt_test::slurp(dir_b / rel));
  }
  // different seed, different bytes
  gen.seed = 22;
  const auto dir_c = fs::temp_directory_path() / "mhkt_ds_repro_c";
  fs::remove_all(dir_c);
  generate_dataset(gen, dir_c);
  CHECK(mhkt_test::slurp(dir_a / "target/images.f32") != mhkt_test::slurp(dir_c / "target/images.f32"));
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  fs::remove_all(dir_c);
}

TEST_CASE("generate_dataset validates inputs and refuses accidental overwrite") {
  const auto dir = fs::temp_directory_path() / "mhkt_ds_guard";
  fs::remove_all(dir);
  auto gen = mhkt_test::tiny_gen_config(4);
  gen.n_source_per_class = 1;
  gen.n_target_per_class = 1;
  gen.n_target_test_per_class = 1;

  auto bad = gen;
  bad.num_classes = 1;
  CHECK_THROWS_AS(generate_dataset(bad, dir), std::invalid_argument);
  bad = gen;
  bad.num_classes = 99;
  CHECK_THROWS_AS(generate_dataset(bad, dir), std::invalid_argument);
  bad = gen;
  bad.n_target_per_class = 0;
  CHECK_THROWS_AS(generate_dataset(bad, dir), std::invalid_argument);

  generate_dataset(gen, dir);
  CHECK_THROWS_AS(generate_dataset(gen, dir), std::runtime_error);  // no force
  CHECK_NOTHROW(generate_dataset(gen, dir, true));
  fs::remove_all(dir);
}

namespace {

// CLI smoke fixture: one tiny dataset + one trained run, reused below.
struct CliFixture {
  fs::path root, data, run;
  bool available = false;

  CliFixture() {
    if (mhkt_test::cli_path().empty()) return;
    available = true;
    root = fs::temp_directory_path() / "mhkt_cli_fixture";
    data = root / "data";
    run = root / "run";
    fs::remove_all(root);
    fs::create_directories(root);
    REQUIRE(mhkt_test::run_cli("gen-data --out " + data.string() +
                               " --classes 3 --source-per-class 6 --target-per-class 6 --test-per-class 4 "
                               "--seed 3 --image-size 24 --n-freq 16 --n-az 16") == 0);
    REQUIRE(mhkt_test::run_cli("train --data " + data.string() + " --out " + run.string() +
                               " --labeled-per-class 4 --epochs 2 --seed 1") == 0);
  }
};

const CliFixture& cli_fixture() {
  static CliFixture f;
  return f;
}

}  // namespace

TEST_CASE("cli: gen-data manifest matches the flags and reruns are refused") {
  const auto& f = cli_fixture();
  if (!f.available) return;  // binary not provided to this process

  json man;
  std::ifstream(f.data / "manifest.json") >> man;
  CHECK(man["K"] == 3);
  CHECK(man["counts"]["source"][0] == 6);
  CHECK(man["counts"]["target_train"][1] == 6);
  CHECK(man["counts"]["target_test"][2] == 4);

  // idempotence guard: same --out without --force fails, --force succeeds
  CHECK(mhkt_test::run_cli("gen-data --out " + f.data.string() +
                           " --classes 3 --source-per-class 6 --target-per-class 6 --test-per-class 4 "
                           "--seed 3 --image-size 24 --n-freq 16 --n-az 16") != 0);

  // usage errors exit with 2
  CHECK(mhkt_test::run_cli("gen-data --out " + (f.root / "bad").string() + " --classes 1 --image-size 24 "
                           "--n-freq 16 --n-az 16") == 2);
  CHECK(mhkt_test::run_cli("gen-data") == 2);  // missing required flag
}

TEST_CASE("cli: train writes the documented run artifacts") {
  const auto& f = cli_fixture();
  if (!f.available) return;

  for (const char* rel : {"config.json", "metrics.jsonl", "checkpoint.bin", "confusion.csv"})
    CHECK(fs::exists(f.run / rel));

  json cfg;
  std::ifstream(f.run / "config.json") >> cfg;
  for (const char* key : {"variant", "toggles", "weights", "seed", "epochs", "precision"}) CHECK(cfg.contains(key));
  CHECK(cfg["weights"]["lambda1"] == 1.0);
  CHECK(cfg["weights"]["lambda2"] == 2.0);
  CHECK(cfg["weights"]["alpha"] == 0.06);

  // metrics.jsonl: one record per epoch with the per-term breakdown
  std::ifstream metrics(f.run / "metrics.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(metrics, line)) {
    const json rec = json::parse(line);
    for (const char* key : {"epoch", "loss_total", "loss_tais", "loss_mdd", "loss_crkt", "accuracy"})
      CHECK(rec.contains(key));
    ++lines;
  }
  CHECK(lines == 2);

  // refuse to clobber an existing run directory
  CHECK(mhkt_test::run_cli("train --data " + f.data.string() + " --out " + f.run.string() +
                           " --labeled-per-class 4 --epochs 1") != 0);
}

TEST_CASE("cli: target_only breakdown omits the transfer terms") {
  const auto& f = cli_fixture();
  if (!f.available) return;
  const auto run = f.root / "run_target_only";
  REQUIRE(mhkt_test::run_cli("train --data " + f.data.string() + " --out " + run.string() +
                             " --variant target_only --labeled-per-class 4 --epochs 1 --seed 1") == 0);
  std::ifstream metrics(run / "metrics.jsonl");
  std::string line;
  REQUIRE(std::getline(metrics, line));
  const json rec = json::parse(line);
  CHECK(!rec.contains("loss_tais"));
  CHECK(!rec.contains("loss_mdd"));
  CHECK(!rec.contains("loss_crkt"));
  CHECK(rec.contains("loss_total"));
  CHECK(rec.contains("loss_ce_t"));
}

TEST_CASE("cli: eval reloads a checkpoint; missing dataset is a runtime failure") {
  const auto& f = cli_fixture();
  if (!f.available) return;
  CHECK(mhkt_test::run_cli("eval --data " + f.data.string() + " --run " + f.run.string()) == 0);
  CHECK(mhkt_test::run_cli("eval --data /nonexistent/ds --run " + f.run.string()) == 3);
}

TEST_CASE("cli: sweep emits the documented CSV and enforces usage") {
  const auto& f = cli_fixture();
  if (!f.available) return;
  const auto out = f.root / "sweep";
  REQUIRE(mhkt_test::run_cli("sweep --data " + f.data.string() + " --out " + out.string() +
                             " --axis alpha --values 0.06,0.5 --seeds 1 --labeled-per-class 4 --epochs 1") == 0);
  const auto csv = out / "sweep_alpha.csv";
  REQUIRE(fs::exists(csv));
  std::ifstream is(csv);
  std::string line;
  std::getline(is, line);
  CHECK(line == "axis,value,seed,accuracy");
  int rows = 0, means = 0;
  while (std::getline(is, line)) {
    ++rows;
    if (line.find(",mean,") != std::string::npos) ++means;
  }
  CHECK(rows == 4);  // 2 values x (1 seed + 1 mean row)
  CHECK(means == 2);

  CHECK(mhkt_test::run_cli("sweep --data " + f.data.string() + " --out " + out.string() +
                           " --axis nonsense --values 1 --seeds 1") == 2);
  CHECK(mhkt_test::run_cli("sweep --data " + f.data.string() + " --out " + out.string() +
                           " --axis alpha --values '' --seeds 1") == 2);
}

TEST_CASE("cli: ablate honours the run cap from the environment") {
  const auto& f = cli_fixture();
  if (!f.available) return;
  const std::string bin = mhkt_test::cli_path();
  const auto out = f.root / "ablate_capped";
  const int status = std::system(("MHKT_RUN_CAP=3 " + bin + " ablate --data " + f.data.string() + " --out " +
                                  out.string() + " --seeds 1 --labeled-per-class 4 --epochs 1 >/dev/null 2>&1")
                                     .c_str());
  CHECK(WEXITSTATUS(status) == 2);
}

TEST_CASE("cli: embed exports one row per train-split sample, deterministically") {
  const auto& f = cli_fixture();
  if (!f.available) return;
  const auto csv_a = f.root / "embed_a.csv";
  const auto csv_b = f.root / "embed_b.csv";
  const std::string base = "embed --data " + f.data.string() + " --run " + f.run.string() +
                           " --tsne --perplexity 5 --iters 60 --tsne-seed 9 --out ";
  REQUIRE(mhkt_test::run_cli(base + csv_a.string()) == 0);
  REQUIRE(mhkt_test::run_cli(base + csv_b.string()) == 0);
  CHECK(mhkt_test::slurp(csv_a) == mhkt_test::slurp(csv_b));
  CHECK(mhkt_test::run_cli(base + csv_a.string()) != 0);  // refuses to overwrite

  std::ifstream is(csv_a);
  std::string line;
  int rows = 0, source_rows = 0, header_cols = 0;
  std::set<std::string> domains;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header_cols == 0) {
      header_cols = static_cast<int>(std::count(line.begin(), line.end(), ',')) + 1;
      CHECK(line.rfind("domain,label", 0) == 0);
      continue;
    }
    ++rows;
    domains.insert(line.substr(0, line.find(',')));
    if (line.rfind("source", 0) == 0) ++source_rows;
  }
  CHECK(rows == 18 + 18);  // n_s + n_t(train)
  CHECK(source_rows == 18);
  CHECK(domains == std::set<std::string>{"source", "target"});
  CHECK(header_cols == 2 + 128 + 2);  // domain,label + d_c + 2-D embedding
}

TEST_CASE("cli: plot renders an SVG from a sweep CSV") {
  const auto& f = cli_fixture();
  if (!f.available) return;
  const auto svg = f.root / "sweep.svg";
  REQUIRE(mhkt_test::run_cli("plot --in " + (f.root / "sweep" / "sweep_alpha.csv").string() + " --x value" +
                             " --y accuracy --group seed --out " + svg.string()) == 0);
  const std::string content = mhkt_test::slurp(svg);
  CHECK(content.find("<svg") != std::string::npos);
  CHECK(content.find("polyline") != std::string::npos);
}
