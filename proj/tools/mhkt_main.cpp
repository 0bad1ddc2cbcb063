// mhkt: synthetic heterogeneous-transfer benchmark CLI.
// Subcommands: gen-data, train, eval, ablate, sweep, embed, plot.
// Exit codes: 0 success, 2 usage error, 3 runtime failure.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <sstream>

#include "mhkt/dataset.hpp"
#include "mhkt/experiments.hpp"
#include "mhkt/trainer.hpp"
#include "mhkt/tsne.hpp"
#include "svg_plot.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TrainFlags {
  std::string data;
  std::string out;
  std::string labeled = "10";  // count or ALL
  std::string variant = "mhkt";
  std::string toggles = "tais,tgkt,crkt";
  std::string precision = "f32";
  mhkt::TrainConfig cfg;
};

int parse_labeled(const std::string& s) {
  if (s == "ALL" || s == "all") return -1;
  return std::stoi(s);
}

mhkt::Toggles parse_toggles(const std::string& s) {
  mhkt::Toggles t{false, false, false};
  if (s == "none" || s.empty()) return t;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "tais")
      t.tais = true;
    else if (item == "tgkt")
      t.tgkt = true;
    else if (item == "crkt")
      t.crkt = true;
    else
      throw std::invalid_argument("unknown toggle: " + item);
  }
  return t;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) seeds.push_back(std::stoull(item));
  }
  if (seeds.empty()) throw std::invalid_argument("empty seed list");
  return seeds;
}

std::vector<std::string> split_csv_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void add_common_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--data", f.data, "dataset directory")->required();
  cmd->add_option("--labeled-per-class", f.labeled, "labelled target samples per class, or ALL");
  cmd->add_option("--batch", f.cfg.batch, "per-domain batch size");
  cmd->add_option("--epochs", f.cfg.epochs, "training epochs");
  cmd->add_option("--lr", f.cfg.learning_rate, "learning rate");
  cmd->add_option("--seed", f.cfg.seed, "run seed");
  cmd->add_option("--lambda1", f.cfg.weights.lambda1, "weight of the selector loss");
  cmd->add_option("--lambda2", f.cfg.weights.lambda2, "weight of the divergence loss");
  cmd->add_option("--alpha", f.cfg.weights.alpha, "soft-label mixing factor, in [0, 1)");
  cmd->add_option("--beta", f.cfg.weights.beta, "bottleneck KL weight");
  cmd->add_option("--eval-every", f.cfg.eval_every, "test evaluation period in epochs");
  cmd->add_option("--steps-per-epoch", f.cfg.steps_per_epoch, "0 = derive from the labelled pool");
  cmd->add_option("--knn-k", f.cfg.knn_k, "graph k-nearest-neighbour degree");
}

template <class S>
int do_train(const mhkt::Dataset& ds, const mhkt::TrainConfig& cfg) {
  mhkt::Trainer<S> trainer(ds, cfg);
  mhkt::TrainResult res = trainer.train();
  std::cout << "final test accuracy: " << res.final_eval.accuracy << "\n";
  std::cout << "run directory: " << cfg.out_dir << "\n";
  return 0;
}

mhkt::TrainConfig load_run_config(const fs::path& run_dir) {
  std::ifstream in(run_dir / "config.json");
  if (!in) throw std::runtime_error("missing " + (run_dir / "config.json").string());
  json j;
  in >> j;
  return mhkt::train_config_from_json(j);
}

std::string run_precision(const fs::path& run_dir) {
  std::ifstream in(run_dir / "config.json");
  json j;
  in >> j;
  return j.value("precision", "f32");
}

int cmd_gen_data(const mhkt::GenerateConfig& gen, const std::string& out, bool force) {
  const auto man = mhkt::generate_dataset(gen, out, force);
  std::cout << "dataset written to " << out << "\n";
  std::cout << "classes: " << man.num_classes << ", seed: " << man.seed << "\n";
  std::cout << "per-class counts: source " << man.source_per_class[0] << ", target-train "
            << man.target_train_per_class[0] << ", target-test " << man.target_test_per_class[0] << "\n";
  std::cout << "image shape: " << man.image_h << "x" << man.image_w << "\n";
  return 0;
}

int cmd_eval(const std::string& data, const std::string& run, const std::string& out) {
  const mhkt::Dataset ds = mhkt::load_dataset(data);
  mhkt::TrainConfig cfg = load_run_config(run);
  cfg.out_dir.clear();

  auto report = [&](const mhkt::EvalResult& res) {
    std::cout << "accuracy: " << res.accuracy << "\n";
    for (std::size_t k = 0; k < res.per_class.size(); ++k)
      std::cout << "class " << k << " accuracy: " << res.per_class[k] << "\n";
    if (!out.empty()) {
      std::ofstream os(out);
      const int K = static_cast<int>(res.confusion.rows());
      os << "true_class";
      for (int c = 0; c < K; ++c) os << ",pred_" << c;
      os << "\n";
      for (int r = 0; r < K; ++r) {
        os << r;
        for (int c = 0; c < K; ++c) os << "," << res.confusion(r, c);
        os << "\n";
      }
    }
  };

  if (run_precision(run) == "f64") {
    mhkt::Trainer<double> trainer(ds, cfg);
    trainer.load_checkpoint(fs::path(run) / "checkpoint.bin");
    report(trainer.evaluate());
  } else {
    mhkt::Trainer<float> trainer(ds, cfg);
    trainer.load_checkpoint(fs::path(run) / "checkpoint.bin");
    report(trainer.evaluate());
  }
  return 0;
}

int cmd_embed(const std::string& data, const std::string& run, const std::string& out, bool with_tsne,
              double perplexity, int iters, std::uint64_t tsne_seed, bool force) {
  if (fs::exists(out) && !force) throw std::runtime_error(out + " already exists (use --force)");
  const mhkt::Dataset ds = mhkt::load_dataset(data);
  mhkt::TrainConfig cfg = load_run_config(run);
  cfg.out_dir.clear();
  if (run_precision(run) != "f32") throw std::runtime_error("embed supports f32 runs");
  mhkt::Trainer<float> trainer(ds, cfg);
  trainer.load_checkpoint(fs::path(run) / "checkpoint.bin");

  std::vector<int> all_src(ds.source.size());
  std::iota(all_src.begin(), all_src.end(), 0);
  const auto us = trainer.source_common_features(all_src);
  const auto ut = trainer.image_common_features(trainer.train_images());

  Eigen::MatrixXd embedding;
  if (with_tsne) {
    Eigen::MatrixXd stacked(us.rows() + ut.rows(), us.cols());
    stacked << us.cast<double>(), ut.cast<double>();
    mhkt::TsneConfig tc;
    tc.perplexity = perplexity;
    tc.iterations = iters;
    tc.seed = tsne_seed;
    embedding = mhkt::tsne_embed(stacked, tc);
  }

  std::ofstream os(out);
  os << "# mhkt common-space embedding export\n";
  if (with_tsne)
    os << "# tsne perplexity=" << perplexity << " iterations=" << iters << " seed=" << tsne_seed << "\n";
  os << "domain,label";
  for (int c = 0; c < us.cols(); ++c) os << ",c" << c;
  if (with_tsne) os << ",e0,e1";
  os << "\n";
  long row = 0;
  for (Eigen::Index i = 0; i < us.rows(); ++i, ++row) {
    os << "source," << ds.source[i].label;
    for (Eigen::Index c = 0; c < us.cols(); ++c) os << "," << us(i, c);
    if (with_tsne) os << "," << embedding(row, 0) << "," << embedding(row, 1);
    os << "\n";
  }
  for (Eigen::Index i = 0; i < ut.rows(); ++i, ++row) {
    os << "target," << ds.target_train.labels[i];
    for (Eigen::Index c = 0; c < ut.cols(); ++c) os << "," << ut(i, c);
    if (with_tsne) os << "," << embedding(row, 0) << "," << embedding(row, 1);
    os << "\n";
  }
  std::cout << "wrote " << row << " rows to " << out << "\n";
  return 0;
}

int cmd_plot(const std::string& in, const std::string& out, const std::string& x_col, const std::string& y_col,
             const std::string& group_col, bool force) {
  if (fs::exists(out) && !force) throw std::runtime_error(out + " already exists (use --force)");
  std::ifstream is(in);
  if (!is) throw std::runtime_error("cannot open " + in);
  std::string line;
  std::vector<std::string> header;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    header = split_csv_list(line);
    break;
  }
  auto col_index = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw std::invalid_argument("column not found: " + name);
  };
  const int xi = col_index(x_col);
  const int yi = col_index(y_col);
  const int gi = group_col.empty() ? -1 : col_index(group_col);

  std::map<std::string, mhkt::plot::Series> series;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split_csv_list(line);
    if (static_cast<int>(cells.size()) <= std::max(xi, yi)) continue;
    double xv, yv;
    try {
      xv = std::stod(cells[xi]);
      yv = std::stod(cells[yi]);
    } catch (...) {
      continue;  // non-numeric rows (e.g. value=ALL) are skipped
    }
    const std::string key = gi >= 0 ? cells[gi] : y_col;
    auto& s = series[key];
    s.label = key;
    s.x.push_back(xv);
    s.y.push_back(yv);
  }
  std::vector<mhkt::plot::Series> list;
  for (auto& [k, s] : series) list.push_back(std::move(s));
  mhkt::plot::write_svg(out, list, x_col, y_col);
  std::cout << "wrote " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-level heterogeneous knowledge transfer benchmark"};
  app.require_subcommand(1);

  // ---- gen-data
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a paired source/target dataset");
  mhkt::GenerateConfig gen;
  std::string gen_out;
  bool gen_force = false;
  int image_size = 128;
  gen_cmd->add_option("--out", gen_out, "output directory")->required();
  gen_cmd->add_option("--classes", gen.num_classes, "number of classes (2..6)");
  gen_cmd->add_option("--source-per-class", gen.n_source_per_class, "source records per class");
  gen_cmd->add_option("--target-per-class", gen.n_target_per_class, "target training images per class");
  gen_cmd->add_option("--test-per-class", gen.n_target_test_per_class, "held-out target test images per class");
  gen_cmd->add_option("--seed", gen.seed, "generation seed");
  gen_cmd->add_option("--image-size", image_size, "square image size (>= grid size)");
  gen_cmd->add_option("--n-freq", gen.radar.n_freq, "frequency samples");
  gen_cmd->add_option("--n-az", gen.radar.n_az, "azimuth samples");
  gen_cmd->add_option("--center-frequency", gen.radar.center_frequency, "Hz");
  gen_cmd->add_option("--bandwidth", gen.radar.bandwidth, "Hz");
  gen_cmd->add_option("--azimuth-span", gen.radar.azimuth_span, "rad");
  gen_cmd->add_option("--azimuth-resolution", gen.radar.azimuth_resolution, "rad");
  gen_cmd->add_flag("--force", gen_force, "overwrite an existing dataset");

  // ---- train
  auto* train_cmd = app.add_subcommand("train", "train one run");
  TrainFlags tf;
  bool train_force = false;
  add_common_train_flags(train_cmd, tf);
  train_cmd->add_option("--out", tf.out, "run directory")->required();
  train_cmd->add_option("--variant", tf.variant, "mhkt|target_only|source_finetune|mmd_baseline|coral_baseline");
  train_cmd->add_option("--toggles", tf.toggles, "comma list from {tais,tgkt,crkt}, or none");
  train_cmd->add_option("--precision", tf.precision, "f32|f64");
  train_cmd->add_flag("--force", train_force, "overwrite an existing run directory");

  // ---- eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a trained run on the test split");
  std::string eval_data, eval_run, eval_out;
  eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
  eval_cmd->add_option("--run", eval_run, "run directory")->required();
  eval_cmd->add_option("--out", eval_out, "optional confusion CSV path");

  // ---- ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "run the 7-row module toggle grid");
  TrainFlags af;
  std::string ablate_out, ablate_seeds = "1,2,3,4,5";
  int ablate_jobs = 1;
  bool ablate_force = false;
  add_common_train_flags(ablate_cmd, af);
  ablate_cmd->add_option("--out", ablate_out, "output directory for ablation.csv and runs")->required();
  ablate_cmd->add_option("--seeds", ablate_seeds, "comma-separated seeds");
  ablate_cmd->add_option("--jobs", ablate_jobs, "parallel runs");
  ablate_cmd->add_flag("--force", ablate_force, "overwrite existing outputs");

  // ---- sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "sweep one hyperparameter axis");
  TrainFlags sf;
  std::string sweep_out, sweep_axis, sweep_values, sweep_seeds = "1,2,3,4,5";
  int sweep_jobs = 1;
  bool sweep_force = false;
  add_common_train_flags(sweep_cmd, sf);
  sweep_cmd->add_option("--out", sweep_out, "output directory")->required();
  sweep_cmd->add_option("--axis", sweep_axis, "lambda1|lambda2|alpha|labeled_per_class")->required();
  sweep_cmd->add_option("--values", sweep_values, "comma-separated values (ALL allowed for labeled_per_class)")
      ->required();
  sweep_cmd->add_option("--seeds", sweep_seeds, "comma-separated seeds");
  sweep_cmd->add_option("--jobs", sweep_jobs, "parallel runs");
  sweep_cmd->add_flag("--force", sweep_force, "overwrite existing outputs");

  // ---- embed
  auto* embed_cmd = app.add_subcommand("embed", "export common-space features of the train split");
  std::string emb_data, emb_run, emb_out;
  bool emb_tsne = false, emb_force = false;
  double emb_perplexity = 30.0;
  int emb_iters = 500;
  std::uint64_t emb_seed = 7;
  embed_cmd->add_option("--data", emb_data, "dataset directory")->required();
  embed_cmd->add_option("--run", emb_run, "run directory")->required();
  embed_cmd->add_option("--out", emb_out, "output CSV")->required();
  embed_cmd->add_flag("--tsne", emb_tsne, "append a deterministic 2-D embedding");
  embed_cmd->add_option("--perplexity", emb_perplexity, "t-SNE perplexity");
  embed_cmd->add_option("--iters", emb_iters, "t-SNE iterations");
  embed_cmd->add_option("--tsne-seed", emb_seed, "t-SNE seed");
  embed_cmd->add_flag("--force", emb_force, "overwrite the output file");

  // ---- plot
  auto* plot_cmd = app.add_subcommand("plot", "render a CSV as a static SVG line chart");
  std::string plot_in, plot_out, plot_x, plot_y, plot_group;
  bool plot_force = false;
  plot_cmd->add_option("--in", plot_in, "input CSV")->required();
  plot_cmd->add_option("--out", plot_out, "output SVG")->required();
  plot_cmd->add_option("--x", plot_x, "x column name")->required();
  plot_cmd->add_option("--y", plot_y, "y column name")->required();
  plot_cmd->add_option("--group", plot_group, "series column name");
  plot_cmd->add_flag("--force", plot_force, "overwrite the output file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen_cmd->parsed()) {
      gen.image_h = gen.image_w = image_size;
      return cmd_gen_data(gen, gen_out, gen_force);
    }
    if (train_cmd->parsed()) {
      const mhkt::Dataset ds = mhkt::load_dataset(tf.data);
      tf.cfg.labeled_per_class = parse_labeled(tf.labeled);
      tf.cfg.variant = mhkt::parse_variant(tf.variant);
      tf.cfg.toggles = parse_toggles(tf.toggles);
      tf.cfg.out_dir = tf.out;
      tf.cfg.force = train_force;
      if (tf.precision == "f64") return do_train<double>(ds, tf.cfg);
      if (tf.precision == "f32") return do_train<float>(ds, tf.cfg);
      throw std::invalid_argument("unknown precision: " + tf.precision);
    }
    if (eval_cmd->parsed()) return cmd_eval(eval_data, eval_run, eval_out);
    if (ablate_cmd->parsed()) {
      const mhkt::Dataset ds = mhkt::load_dataset(af.data);
      af.cfg.labeled_per_class = parse_labeled(af.labeled);
      const auto outcomes =
          mhkt::run_ablation(ds, af.cfg, parse_seeds(ablate_seeds), ablate_out, ablate_jobs, ablate_force);
      std::cout << "ablation grid of " << outcomes.size() << " runs written to " << ablate_out << "\n";
      return 0;
    }
    if (sweep_cmd->parsed()) {
      const mhkt::Dataset ds = mhkt::load_dataset(sf.data);
      sf.cfg.labeled_per_class = parse_labeled(sf.labeled);
      const auto outcomes = mhkt::run_sweep(ds, sf.cfg, sweep_axis, split_csv_list(sweep_values),
                                            parse_seeds(sweep_seeds), sweep_out, sweep_jobs, sweep_force);
      std::cout << "sweep of " << outcomes.size() << " runs written to " << sweep_out << "\n";
      return 0;
    }
    if (embed_cmd->parsed())
      return cmd_embed(emb_data, emb_run, emb_out, emb_tsne, emb_perplexity, emb_iters, emb_seed, emb_force);
    if (plot_cmd->parsed()) return cmd_plot(plot_in, plot_out, plot_x, plot_y, plot_group, plot_force);
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::out_of_range& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::domain_error& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
