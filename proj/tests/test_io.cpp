#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "npca/io.hpp"

using namespace npca;
using namespace npca::test;

namespace {

std::string tmp_path(const std::string& name) {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "npca_io_tests";
  fs::create_directories(dir);
  return (dir / name).string();
}

}  // namespace

TEST_CASE("config round-trips through canonical JSON", "[config]") {
  RunConfig c;
  c.variant = "Neural-PCA";
  c.dataset.name = "two-spiral";
  c.dataset.n_points = 4242;
  c.depth = 5;
  c.width = 48;
  c.lr = 7e-4;
  c.iterations = 1234;
  c.seed = 99;
  RunConfig back = config_from_json(config_to_json(c));
  REQUIRE(back.variant == c.variant);
  REQUIRE(back.dataset.n_points == 4242);
  REQUIRE(back.depth == 5);
  REQUIRE(back.width == 48);
  REQUIRE(back.lr == 7e-4);
  REQUIRE(back.iterations == 1234);
  REQUIRE(back.seed == 99);
  REQUIRE(config_hash(back) == config_hash(c));
}

TEST_CASE("config rejects unknown keys and bad values", "[config]") {
  json j = config_to_json(RunConfig{});
  j["surprise"] = 1;
  REQUIRE_THROWS_AS(config_from_json(j), ConfigError);

  json j2 = config_to_json(RunConfig{});
  j2["optimizer"]["momentum"] = 0.9;
  REQUIRE_THROWS_AS(config_from_json(j2), ConfigError);

  json j3 = config_to_json(RunConfig{});
  j3["variant"] = "NotAVariant";
  REQUIRE_THROWS_AS(config_from_json(j3), ConfigError);

  json j4 = config_to_json(RunConfig{});
  j4["optimizer"]["schedule"] = "linear";
  REQUIRE_THROWS_AS(config_from_json(j4), ConfigError);

  json j5 = config_to_json(RunConfig{});
  j5["dataset"] = {{"name", "mystery"}};
  REQUIRE_THROWS_AS(config_from_json(j5), ConfigError);
}

TEST_CASE("config hash tracks content", "[config]") {
  RunConfig a, b;
  REQUIRE(config_hash(a) == config_hash(b));
  b.seed = 1;
  REQUIRE(config_hash(a) != config_hash(b));
}

TEST_CASE("checkpoint save/load is bit-exact", "[checkpoint]") {
  RunConfig cfg;
  cfg.variant = "Neural-PCA";
  cfg.depth = 3;
  cfg.width = 16;
  cfg.seed = 7;
  Model m = build_variant(cfg.variant, 2, cfg.depth, cfg.width, cfg.seed, cfg.sigma_max, cfg.sigma_min);
  perturb_params(m, 8, 0.3);
  // freeze stats so the container carries them too
  Rng rng(9);
  std::vector<Matrix> batches = {Matrix::gaussian(32, 2, rng), Matrix::gaussian(32, 2, rng)};
  freeze_statistics(*m.block, [&](const Matrix& b) { return m.flow.forward(b).first; }, batches);

  const std::string path = tmp_path("model.npca");
  save_checkpoint(model_to_checkpoint(m, cfg), path);
  Checkpoint ck = load_checkpoint(path);
  Model back = model_from_checkpoint(ck);

  auto pa = m.params();
  auto pb = back.params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) REQUIRE(*pa[i] == *pb[i]);
  REQUIRE(back.block->mode == BlockMode::Eval);
  REQUIRE(back.block->stats->mu_bar == m.block->stats->mu_bar);
  REQUIRE(back.block->stats->sigma_bar == m.block->stats->sigma_bar);
  REQUIRE(back.block->stats->v_tilde == m.block->stats->v_tilde);

  // saving the loaded model reproduces the file byte for byte
  const std::string path2 = tmp_path("model2.npca");
  RunConfig cfg2 = config_from_json(ck.meta.at("config"));
  save_checkpoint(model_to_checkpoint(back, cfg2), path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  REQUIRE(b1 == b2);
}

TEST_CASE("checkpoint loader rejects corruption", "[checkpoint]") {
  const std::string path = tmp_path("corrupt.npca");
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "XXXX this is not a checkpoint";
  }
  REQUIRE_THROWS_AS(load_checkpoint(path), CheckpointError);
  REQUIRE_THROWS_AS(load_checkpoint(tmp_path("missing.npca")), CheckpointError);

  // valid header, truncated payload
  RunConfig cfg;
  cfg.variant = "Baseline";
  Model m = build_variant("Baseline", 2, 2, 8, 1);
  const std::string full = tmp_path("full.npca");
  save_checkpoint(model_to_checkpoint(m, cfg), full);
  std::ifstream in(full, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string cut = tmp_path("cut.npca");
  {
    std::ofstream out(cut, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 16));
  }
  REQUIRE_THROWS_AS(load_checkpoint(cut), CheckpointError);
}

TEST_CASE("latents container stores z and labels", "[checkpoint]") {
  Rng rng(10);
  Matrix z = Matrix::gaussian(10, 3, rng);
  std::vector<int> labels = {0, 1, 0, 1, 1, 0, 1, 0, 0, 1};
  Checkpoint ck = latents_to_checkpoint(z, labels, "Baseline", "test", "abc");
  const std::string path = tmp_path("latents.npca");
  save_checkpoint(ck, path);
  Checkpoint back = load_checkpoint(path);
  REQUIRE(back.meta.at("kind") == "latents");
  REQUIRE(back.tensor("z") == z);
  const Matrix& lab = back.tensor("labels");
  for (int i = 0; i < 10; ++i) REQUIRE(static_cast<int>(lab(i, 0)) == labels[i]);
}

TEST_CASE("csv writes a fixed header and atomic content", "[csv]") {
  const std::string path = tmp_path("table.csv");
  write_csv(path, {"a", "b"}, {{"1", "2"}, {"3", "4"}});
  CsvTable t = read_csv(path);
  REQUIRE(t.header == std::vector<std::string>{"a", "b"});
  REQUIRE(t.rows.size() == 2);
  REQUIRE(t.rows[1][1] == "4");
  REQUIRE_FALSE(std::filesystem::exists(path + ".tmp"));

  // rewriting replaces content wholesale
  write_csv(path, {"a", "b"}, {{"9", "9"}});
  REQUIRE(read_csv(path).rows.size() == 1);
}

TEST_CASE("metrics csv carries optional validation values", "[csv]") {
  std::vector<MetricsRow> rows(2);
  rows[0].iteration = 0;
  rows[0].objective = -1.5;
  rows[0].lr = 1e-3;
  rows[1].iteration = 1;
  rows[1].objective = -1.2;
  rows[1].lr = 9e-4;
  rows[1].val_nll = 2.5;
  const std::string path = tmp_path("metrics.csv");
  write_metrics_csv(path, rows);
  CsvTable t = read_csv(path);
  REQUIRE(t.header == std::vector<std::string>{"iteration", "epoch", "objective", "lr", "val_nll"});
  REQUIRE(t.rows[0].size() == 5);
  REQUIRE(t.rows[0][4].empty());
  REQUIRE(t.rows[1][4] == "2.5");
}

TEST_CASE("pgm grid writes a parsable header", "[pgm]") {
  Rng rng(11);
  Matrix samples(4, 16);
  for (auto& v : samples.data()) v = rng.uniform();
  const std::string path = tmp_path("grid.pgm");
  write_pgm_grid(path, samples, 4);
  std::ifstream in(path, std::ios::binary);
  std::string magic, dims;
  std::getline(in, magic);
  std::getline(in, dims);
  REQUIRE(magic == "P5");
  REQUIRE(dims == "8 8");
}

TEST_CASE("dataset specs build through the registry", "[config]") {
  DatasetSpec spiral;
  spiral.name = "two-spiral";
  spiral.n_points = 500;
  REQUIRE(build_dataset(spiral, 1).size() == 500);

  DatasetSpec mani;
  mani.name = "manifold";
  mani.n_points = 300;
  mani.n_ambient = 8;
  mani.n_intrinsic = 2;
  REQUIRE(build_dataset(mani, 1).dim() == 8);

  DatasetSpec blobs;
  blobs.name = "blobs";
  blobs.n_points = 64;
  blobs.side = 8;
  blobs.n_classes = 2;
  Dataset d = build_dataset(blobs, 1);
  REQUIRE(d.image);
  REQUIRE(d.dim() == 64);
}
