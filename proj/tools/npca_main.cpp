// npca: train, evaluate and analyze variance-ordered normalizing flows.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>

#include "npca/npca.hpp"

namespace fs = std::filesystem;
using namespace npca;

namespace {

std::uint64_t resolve_seed(const RunConfig& cfg, bool flag_given, std::uint64_t flag_seed) {
  if (flag_given) return flag_seed;
  if (cfg.seed_in_config) return cfg.seed;
  if (const char* env = std::getenv("NPCA_SEED")) return std::strtoull(env, nullptr, 10);
  return cfg.seed;
}

std::vector<int> parse_kappa_grid(const std::string& arg, int n) {
  std::vector<int> grid;
  if (arg.empty()) {
    // eight evenly spaced values over [0, n-1], deduplicated
    std::set<int> s;
    for (int k = 0; k < 8; ++k) s.insert(static_cast<int>(std::llround(k * (n - 1) / 7.0)));
    grid.assign(s.begin(), s.end());
    return grid;
  }
  std::istringstream is(arg);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    const int k = std::stoi(tok);
    if (k < 0 || k >= n) throw ConfigError("kappa grid value out of range: " + tok);
    grid.push_back(k);
  }
  return grid;
}

std::vector<Side> parse_sides(const std::string& arg) {
  if (arg == "both") return {Side::Leading, Side::Trailing};
  if (arg == "leading") return {Side::Leading};
  if (arg == "trailing") return {Side::Trailing};
  throw ConfigError("side must be leading|trailing|both");
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ConfigError("split must be train|val|test");
}

struct LatentsFile {
  Matrix z_train, z_val, z_test;
  std::vector<int> y_train, y_val, y_test;
  std::string variant;
  std::string config_hash;
};

std::vector<int> to_labels(const Matrix& m) {
  std::vector<int> out(m.rows());
  for (int i = 0; i < m.rows(); ++i) out[i] = static_cast<int>(m(i, 0));
  return out;
}

LatentsFile load_latents(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.meta.value("kind", "") != "latents") throw CheckpointError("checkpoint: not a latents container: " + path);
  LatentsFile f;
  f.variant = ck.meta.value("variant", "?");
  f.config_hash = ck.meta.value("config_hash", "");
  if (!ck.has_tensor("z_train")) throw CheckpointError("latents: missing split tensors (extract with --split all)");
  f.z_train = ck.tensor("z_train");
  f.z_val = ck.tensor("z_val");
  f.z_test = ck.tensor("z_test");
  f.y_train = to_labels(ck.tensor("labels_train"));
  f.y_val = to_labels(ck.tensor("labels_val"));
  f.y_test = to_labels(ck.tensor("labels_test"));
  return f;
}

int n_classes_of(const std::vector<int>& y) {
  int m = 0;
  for (int v : y) m = std::max(m, v);
  return m + 1;
}

Matrix labels_to_matrix(const std::vector<int>& y) {
  Matrix lab(static_cast<int>(y.size()), 1);
  for (std::size_t i = 0; i < y.size(); ++i) lab(static_cast<int>(i), 0) = y[i];
  return lab;
}

int image_side_of(const DatasetSpec& d) {
  if (d.name == "blobs") return d.side;
  if (d.name == "idx") return d.pad_to;
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, bool seed_given, std::uint64_t seed_flag,
              bool force) {
  RunConfig cfg = load_config(config_path);
  cfg.seed = resolve_seed(cfg, seed_given, seed_flag);
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  fs::create_directories(cfg.out_dir);

  const std::string ckpt_path = (fs::path(cfg.out_dir) / "model.npca").string();
  if (fs::exists(ckpt_path) && !force) {
    Checkpoint old = load_checkpoint(ckpt_path);
    if (old.meta.value("config_hash", "") != config_hash(cfg))
      throw ConfigError("config: existing checkpoint in " + cfg.out_dir +
                        " was produced by a different config (use --force to overwrite)");
  }

  Dataset data = build_dataset(cfg.dataset, cfg.seed);
  Model model = build_variant(cfg.variant, data.dim(), cfg.depth, cfg.width, cfg.seed, cfg.sigma_max, cfg.sigma_min);
  TrainOptions opt;
  opt.iterations = cfg.iterations;
  opt.batch_size = cfg.batch_size;
  opt.lr = cfg.lr;
  opt.cosine_schedule = cfg.schedule == "cosine";
  opt.seed = cfg.seed;

  TrainState st = train(std::move(model), data, opt);

  write_metrics_csv((fs::path(cfg.out_dir) / "metrics.csv").string(), st.metrics);
  save_checkpoint(model_to_checkpoint(st.model, cfg), ckpt_path);
  std::cout << "trained " << cfg.variant << " for " << st.iterations_done << " iterations; checkpoint " << ckpt_path
            << "\n";
  return 0;
}

int cmd_extract(const std::string& ckpt_path, const std::string& split_arg, const std::string& out_path) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  RunConfig cfg;
  Model model = model_from_checkpoint(ck, &cfg);
  Dataset data = build_dataset(cfg.dataset, cfg.seed);

  Checkpoint out;
  out.meta["kind"] = "latents";
  out.meta["variant"] = cfg.variant;
  out.meta["config_hash"] = config_hash(cfg);
  if (split_arg == "all") {
    for (auto [s, name] : {std::pair{Split::Train, "train"}, {Split::Val, "val"}, {Split::Test, "test"}}) {
      out.tensors.push_back({std::string("z_") + name, extract_latents(model, data.split_x(s))});
      out.tensors.push_back({std::string("labels_") + name, labels_to_matrix(data.split_labels(s))});
    }
  } else {
    const Split s = parse_split(split_arg);
    out.tensors.push_back({"z", extract_latents(model, data.split_x(s))});
    out.tensors.push_back({"labels", labels_to_matrix(data.split_labels(s))});
    out.meta["split"] = split_arg;
  }
  save_checkpoint(out, out_path);
  std::cout << "latents written to " << out_path << "\n";
  return 0;
}

int cmd_classify(const std::string& latents_path, const std::string& kappa_arg, const std::string& side_arg,
                 const std::string& classifier, const std::string& out_path, std::uint64_t seed) {
  LatentsFile lat = load_latents(latents_path);
  const int n = lat.z_train.cols();
  const int classes = n_classes_of(lat.y_train);
  std::vector<int> grid = parse_kappa_grid(kappa_arg, n);
  std::vector<Side> sides = parse_sides(side_arg);

  std::vector<std::vector<std::string>> rows;
  for (int kappa : grid) {
    for (Side side : sides) {
      CorruptedRep tr = corrupt(lat.z_train, kappa, side);
      CorruptedRep va = corrupt(lat.z_val, kappa, side);
      CorruptedRep te = corrupt(lat.z_test, kappa, side);
      double acc = 0.0;
      if (classifier == "mlp") {
        MlpOptions opt;
        opt.seed = seed;
        acc = mlp_classify(tr.data, lat.y_train, va.data, lat.y_val, te.data, lat.y_test, classes, opt);
      } else if (classifier == "svm") {
        SvmOptions opt;
        opt.seed = seed;
        acc = linear_svm_classify(tr.data, lat.y_train, te.data, lat.y_test, classes, opt).accuracy;
      } else {
        throw ConfigError("classifier must be mlp|svm");
      }
      rows.push_back({lat.variant, std::to_string(kappa), side_name(side), classifier + "_accuracy", fmt_double(acc),
                      std::to_string(seed)});
      std::cout << lat.variant << " kappa=" << kappa << " side=" << side_name(side) << " " << classifier
                << " accuracy=" << acc << "\n";
    }
  }
  write_csv(out_path, {"variant", "kappa", "side", "metric", "value", "seed"}, rows);
  return 0;
}

int cmd_mi(const std::string& ckpt_path, const std::string& latents_path, const std::string& kappa_arg,
           const std::string& side_arg, const std::string& out_path, std::uint64_t seed, int steps) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  RunConfig cfg;
  model_from_checkpoint(ck, &cfg);  // validates the checkpoint tensors
  Dataset data = build_dataset(cfg.dataset, cfg.seed);
  LatentsFile lat = load_latents(latents_path);
  if (!lat.config_hash.empty() && lat.config_hash != config_hash(cfg))
    throw CheckpointError("latents file was produced by a different run");

  Matrix x = data.split_x(Split::Test);
  if (x.rows() != lat.z_test.rows()) throw CheckpointError("latents/test split size mismatch");
  const int n = lat.z_test.cols();
  std::vector<int> grid = parse_kappa_grid(kappa_arg, n);
  std::vector<Side> sides = parse_sides(side_arg);

  std::vector<std::vector<std::string>> rows;
  for (int kappa : grid) {
    for (Side side : sides) {
      MiOptions opt;
      opt.seed = seed;
      if (steps > 0) opt.steps = steps;
      const double mi = estimate_mi(x, corrupt(lat.z_test, kappa, side), opt);
      rows.push_back(
          {lat.variant, std::to_string(kappa), side_name(side), "mi_nats", fmt_double(mi), std::to_string(seed)});
      std::cout << lat.variant << " kappa=" << kappa << " side=" << side_name(side) << " mi=" << mi << " nats\n";
    }
  }
  write_csv(out_path, {"variant", "kappa", "side", "metric", "value", "seed"}, rows);
  return 0;
}

int cmd_sample(const std::string& ckpt_path, int count, const std::string& out_path) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  RunConfig cfg;
  Model model = model_from_checkpoint(ck, &cfg);
  Rng rng(cfg.seed ^ 0x5a3e11ull);
  Matrix z = sample(model.base, count, rng);
  Matrix x = model.inverse(z);

  Checkpoint out;
  out.meta["kind"] = "samples";
  out.meta["variant"] = cfg.variant;
  out.meta["config_hash"] = config_hash(cfg);
  out.tensors.push_back({"x", x});
  save_checkpoint(out, out_path);
  if (const int side = image_side_of(cfg.dataset)) write_pgm_grid(out_path + ".pgm", x, side);
  std::cout << "wrote " << count << " samples to " << out_path << "\n";
  return 0;
}

int cmd_interpolate(const std::string& ckpt_path, const std::string& block_arg, int grid_points,
                    const std::string& out_path) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  RunConfig cfg;
  Model model = model_from_checkpoint(ck, &cfg);
  if (block_arg != "leading" && block_arg != "trailing") throw ConfigError("block must be leading|trailing");
  if (grid_points < 2) throw ConfigError("grid must have at least 2 points");
  const Side side = block_arg == "leading" ? Side::Leading : Side::Trailing;

  const int block_size = std::max(1, model.dim / 8);
  std::vector<double> lambdas(grid_points);
  for (int i = 0; i < grid_points; ++i) lambdas[i] = static_cast<double>(i) / (grid_points - 1);
  Matrix x = interpolate_latents(model, block_size, side, lambdas);

  Checkpoint out;
  out.meta["kind"] = "samples";
  out.meta["variant"] = cfg.variant;
  out.meta["config_hash"] = config_hash(cfg);
  out.meta["block"] = block_arg;
  out.meta["block_size"] = block_size;
  out.tensors.push_back({"x", x});
  save_checkpoint(out, out_path);
  if (const int side_px = image_side_of(cfg.dataset)) write_pgm_grid(out_path + ".pgm", x, side_px);
  std::cout << "wrote " << grid_points << "-step " << block_arg << " interpolation to " << out_path << "\n";
  return 0;
}

int cmd_analyze_rotation(const std::string& ckpt_path, const std::string& out_path) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  RunConfig cfg;
  Model model = model_from_checkpoint(ck, &cfg);
  if (!model.block || !model.block->with_rotation)
    throw ConfigError("analyze-rotation: variant '" + cfg.variant + "' has no rotation stage");
  if (!model.block->stats) throw CheckpointError("analyze-rotation: checkpoint has no frozen statistics");

  Dataset data = build_dataset(cfg.dataset, cfg.seed);
  Matrix train_x = data.split_x(Split::Train);
  const Matrix reference = model.block->stats->v_tilde;

  model.block->mode = BlockMode::Train;
  std::vector<Matrix> vs;
  for (const Matrix& b : make_batches(train_x, cfg.batch_size, model.dim)) {
    Matrix zh = model.flow.forward(b).first;
    auto [zbn, ld] = model.block->bn_forward(zh);
    (void)ld;
    model.block->pca_forward(zbn);
    vs.push_back(model.block->last_batch_v());
  }
  model.block->mode = BlockMode::Eval;

  RotationDistances rd = rotation_distance_histogram(vs, reference);
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < rd.distances.size(); ++i)
    rows.push_back({std::to_string(i), fmt_double(rd.distances[i])});
  write_csv(out_path, {"batch_index", "distance"}, rows);
  std::cout << "batches=" << rd.distances.size() << " mean=" << rd.mean << " std=" << rd.stddev << " min=" << rd.min
            << " max=" << rd.max << "\n";
  return 0;
}

int cmd_report(const std::string& run_dir) {
  // variant x metric x kappa pivot over the accuracy/MI CSVs in the run dir
  struct Key {
    std::string variant, metric, side;
    int kappa;
    bool operator<(const Key& o) const {
      return std::tie(variant, metric, side, kappa) < std::tie(o.variant, o.metric, o.side, o.kappa);
    }
  };
  std::map<Key, std::string> cells;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    if (entry.path().extension() != ".csv") continue;
    if (entry.path().filename() == "report.csv") continue;
    CsvTable t = read_csv(entry.path().string());
    if (t.header != std::vector<std::string>{"variant", "kappa", "side", "metric", "value", "seed"}) continue;
    for (const auto& row : t.rows) cells[{row[0], row[3], row[2], std::stoi(row[1])}] = row[4];
  }
  if (cells.empty()) {
    std::cout << "no metric tables found in " << run_dir << "\n";
    return 0;
  }
  std::vector<std::vector<std::string>> rows;
  std::cout << "variant,metric,side,kappa,value\n";
  for (const auto& [key, value] : cells) {
    rows.push_back({key.variant, key.metric, key.side, std::to_string(key.kappa), value});
    std::cout << key.variant << "," << key.metric << "," << key.side << "," << key.kappa << "," << value << "\n";
  }
  write_csv((fs::path(run_dir) / "report.csv").string(), {"variant", "metric", "side", "kappa", "value"}, rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"variance-ordered normalizing flows: training and evaluation"};
  app.require_subcommand(1);

  std::string config_path, out_dir, ckpt_path, latents_path, out_path, split_arg = "all";
  std::string kappa_arg, side_arg = "both", classifier = "mlp", block_arg = "leading", run_dir;
  std::uint64_t seed_flag = 0, cl_seed = 0, mi_seed = 0;
  bool force = false;
  int count = 64, grid_points = 9, mi_steps = 0;

  auto* tr = app.add_subcommand("train", "train a model variant from a JSON config");
  tr->add_option("--config", config_path, "run configuration (JSON)")->required();
  tr->add_option("--out", out_dir, "output directory (overrides config)");
  auto* seed_opt = tr->add_option("--seed", seed_flag, "seed override");
  tr->add_flag("--force", force, "overwrite a checkpoint from a different config");

  auto* ex = app.add_subcommand("extract", "map a dataset split to latents");
  ex->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
  ex->add_option("--split", split_arg, "train|val|test|all");
  ex->add_option("--out", out_path, "latents file")->required();

  auto* cl = app.add_subcommand("classify", "classification accuracy over a kappa grid");
  cl->add_option("--latents", latents_path, "latents file from extract --split all")->required();
  cl->add_option("--kappa-grid", kappa_arg, "comma list; default 8 evenly spaced");
  cl->add_option("--side", side_arg, "leading|trailing|both");
  cl->add_option("--classifier", classifier, "mlp|svm");
  cl->add_option("--out", out_path, "accuracy CSV")->required();
  cl->add_option("--seed", cl_seed, "classifier seed");

  auto* mi = app.add_subcommand("mi", "mutual information over a kappa grid");
  mi->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
  mi->add_option("--latents", latents_path, "latents file")->required();
  mi->add_option("--kappa-grid", kappa_arg, "comma list; default 8 evenly spaced");
  mi->add_option("--side", side_arg, "leading|trailing|both");
  mi->add_option("--out", out_path, "MI CSV")->required();
  mi->add_option("--steps", mi_steps, "estimator steps override");
  mi->add_option("--seed", mi_seed, "estimator seed");

  auto* sa = app.add_subcommand("sample", "draw samples through the generative direction");
  sa->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
  sa->add_option("--count", count, "number of samples");
  sa->add_option("--out", out_path, "sample container")->required();

  auto* in = app.add_subcommand("interpolate", "latent block interpolation sweep");
  in->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
  in->add_option("--block", block_arg, "leading|trailing");
  in->add_option("--grid", grid_points, "number of interpolation points");
  in->add_option("--out", out_path, "sample container")->required();

  auto* ar = app.add_subcommand("analyze-rotation", "per-batch rotation distance histogram");
  ar->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
  ar->add_option("--out", out_path, "distance CSV")->required();

  auto* re = app.add_subcommand("report", "consolidated metric table for a run directory");
  re->add_option("--run", run_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (tr->parsed()) return cmd_train(config_path, out_dir, seed_opt->count() > 0, seed_flag, force);
    if (ex->parsed()) return cmd_extract(ckpt_path, split_arg, out_path);
    if (cl->parsed()) return cmd_classify(latents_path, kappa_arg, side_arg, classifier, out_path, cl_seed);
    if (mi->parsed()) return cmd_mi(ckpt_path, latents_path, kappa_arg, side_arg, out_path, mi_seed, mi_steps);
    if (sa->parsed()) return cmd_sample(ckpt_path, count, out_path);
    if (in->parsed()) return cmd_interpolate(ckpt_path, block_arg, grid_points, out_path);
    if (ar->parsed()) return cmd_analyze_rotation(ckpt_path, out_path);
    if (re->parsed()) return cmd_report(run_dir);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: numerical: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
