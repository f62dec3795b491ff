#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "npca/data.hpp"
#include "npca/model.hpp"
#include "npca/trainer.hpp"

namespace npca {

using json = nlohmann::json;

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& what) : std::runtime_error(what) {}
};

struct DatasetSpec {
  std::string name = "two-spiral";  // two-spiral | manifold | idx | blobs
  int n_points = 10000;
  double noise_std = 0.02;
  double turns = 1.75;
  int n_ambient = 16;
  int n_intrinsic = 4;
  int n_classes = 2;
  std::string images, labels;
  int pad_to = 32;
  bool dequantize = true;
  int side = 16;
};

struct RunConfig {
  std::string variant = "Neural-PCA";
  DatasetSpec dataset;
  int depth = 6;
  int width = 64;
  double sigma_max = 1.0;
  double sigma_min = 0.1;
  double lr = 1e-3;
  std::string schedule = "cosine";  // cosine | constant
  long iterations = 10000;
  int batch_size = 100;
  std::uint64_t seed = 0;
  bool seed_in_config = false;  // whether the JSON document carried a seed
  std::string out_dir = ".";
};

namespace detail {

inline void reject_unknown(const json& j, const std::vector<std::string>& allowed, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const auto& k : allowed)
      if (it.key() == k) ok = true;
    if (!ok) throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
  }
}

template <typename T>
void read_into(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(std::string("config: bad value for '") + key + "'");
    }
  }
}

}  // namespace detail

inline json dataset_to_json(const DatasetSpec& d) {
  json j;
  j["name"] = d.name;
  if (d.name == "two-spiral") {
    j["n_points"] = d.n_points;
    j["noise_std"] = d.noise_std;
    j["turns"] = d.turns;
  } else if (d.name == "manifold") {
    j["n_points"] = d.n_points;
    j["noise_std"] = d.noise_std;
    j["n_ambient"] = d.n_ambient;
    j["n_intrinsic"] = d.n_intrinsic;
    j["n_classes"] = d.n_classes;
  } else if (d.name == "idx") {
    j["images"] = d.images;
    j["labels"] = d.labels;
    j["pad_to"] = d.pad_to;
    j["dequantize"] = d.dequantize;
  } else if (d.name == "blobs") {
    j["n_points"] = d.n_points;
    j["side"] = d.side;
    j["n_classes"] = d.n_classes;
  }
  return j;
}

inline DatasetSpec dataset_from_json(const json& j) {
  if (!j.is_object() || !j.contains("name")) throw ConfigError("config: dataset needs a 'name'");
  DatasetSpec d;
  d.name = j.at("name").get<std::string>();
  if (d.name == "two-spiral") {
    detail::reject_unknown(j, {"name", "n_points", "noise_std", "turns"}, "dataset");
    detail::read_into(j, "n_points", d.n_points);
    detail::read_into(j, "noise_std", d.noise_std);
    detail::read_into(j, "turns", d.turns);
  } else if (d.name == "manifold") {
    detail::reject_unknown(j, {"name", "n_points", "noise_std", "n_ambient", "n_intrinsic", "n_classes"}, "dataset");
    d.noise_std = 0.05;
    detail::read_into(j, "n_points", d.n_points);
    detail::read_into(j, "noise_std", d.noise_std);
    detail::read_into(j, "n_ambient", d.n_ambient);
    detail::read_into(j, "n_intrinsic", d.n_intrinsic);
    detail::read_into(j, "n_classes", d.n_classes);
  } else if (d.name == "idx") {
    detail::reject_unknown(j, {"name", "images", "labels", "pad_to", "dequantize"}, "dataset");
    detail::read_into(j, "images", d.images);
    detail::read_into(j, "labels", d.labels);
    detail::read_into(j, "pad_to", d.pad_to);
    detail::read_into(j, "dequantize", d.dequantize);
  } else if (d.name == "blobs") {
    detail::reject_unknown(j, {"name", "n_points", "side", "n_classes"}, "dataset");
    d.n_points = 2048;
    d.n_classes = 4;
    detail::read_into(j, "n_points", d.n_points);
    detail::read_into(j, "side", d.side);
    detail::read_into(j, "n_classes", d.n_classes);
  } else {
    throw ConfigError("config: unknown dataset '" + d.name + "'");
  }
  return d;
}

inline json config_to_json(const RunConfig& c) {
  json j;
  j["variant"] = c.variant;
  j["dataset"] = dataset_to_json(c.dataset);
  j["flow"] = {{"depth", c.depth}, {"width", c.width}};
  j["base"] = {{"sigma_max", c.sigma_max}, {"sigma_min", c.sigma_min}};
  j["optimizer"] = {{"lr", c.lr}, {"schedule", c.schedule}, {"iterations", c.iterations}, {"batch_size", c.batch_size}};
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  return j;
}

inline RunConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: root must be an object");
  detail::reject_unknown(j, {"variant", "dataset", "flow", "base", "optimizer", "seed", "out_dir"}, "root");
  RunConfig c;
  detail::read_into(j, "variant", c.variant);
  if (!is_variant_name(c.variant)) throw ConfigError("config: unknown variant '" + c.variant + "'");
  if (j.contains("dataset")) c.dataset = dataset_from_json(j.at("dataset"));
  if (j.contains("flow")) {
    detail::reject_unknown(j.at("flow"), {"depth", "width"}, "flow");
    detail::read_into(j.at("flow"), "depth", c.depth);
    detail::read_into(j.at("flow"), "width", c.width);
  }
  if (j.contains("base")) {
    detail::reject_unknown(j.at("base"), {"sigma_max", "sigma_min"}, "base");
    detail::read_into(j.at("base"), "sigma_max", c.sigma_max);
    detail::read_into(j.at("base"), "sigma_min", c.sigma_min);
  }
  if (j.contains("optimizer")) {
    detail::reject_unknown(j.at("optimizer"), {"lr", "schedule", "iterations", "batch_size"}, "optimizer");
    detail::read_into(j.at("optimizer"), "lr", c.lr);
    detail::read_into(j.at("optimizer"), "schedule", c.schedule);
    detail::read_into(j.at("optimizer"), "iterations", c.iterations);
    detail::read_into(j.at("optimizer"), "batch_size", c.batch_size);
    if (c.schedule != "cosine" && c.schedule != "constant") throw ConfigError("config: schedule must be cosine|constant");
  }
  detail::read_into(j, "seed", c.seed);
  c.seed_in_config = j.contains("seed");
  detail::read_into(j, "out_dir", c.out_dir);
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: parse error: ") + e.what());
  }
  return config_from_json(j);
}

inline std::string config_hash(const RunConfig& c) {
  const std::string s = config_to_json(c).dump();
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

inline Dataset build_dataset(const DatasetSpec& d, std::uint64_t seed) {
  if (d.name == "two-spiral") return two_spiral(d.n_points, d.noise_std, d.turns, seed);
  if (d.name == "manifold")
    return embedded_manifold(d.n_ambient, d.n_intrinsic, d.n_points, d.noise_std, d.n_classes, seed);
  if (d.name == "idx") return load_idx_images(d.images, d.labels, d.pad_to, d.dequantize, seed);
  if (d.name == "blobs") return synthetic_blob_images(d.n_points, d.side, d.n_classes, seed);
  throw ConfigError("config: unknown dataset '" + d.name + "'");
}

// ---------------------------------------------------------------------------
// checkpoint container: "NPCA" magic, u32 version, u64 JSON length, JSON
// metadata, then the declared tensors as little-endian f64, row-major
// ---------------------------------------------------------------------------

struct NamedTensor {
  std::string name;
  Matrix value;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  json meta;
  std::vector<NamedTensor> tensors;

  const Matrix& tensor(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t.value;
    throw CheckpointError("checkpoint: missing tensor '" + name + "'");
  }

  bool has_tensor(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return true;
    return false;
  }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}

inline double get_f64(const unsigned char* p) {
  const std::uint64_t bits = get_u64(p);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

inline void atomic_write(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, target);
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  json meta = ck.meta;
  json dir = json::array();
  for (const auto& t : ck.tensors)
    dir.push_back({{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}});
  meta["tensors"] = dir;
  const std::string meta_str = meta.dump();

  std::string out;
  out += "NPCA";
  detail::put_u32(out, Checkpoint::kVersion);
  detail::put_u64(out, meta_str.size());
  out += meta_str;
  for (const auto& t : ck.tensors)
    for (double d : t.value.data()) detail::put_f64(out, d);
  detail::atomic_write(path, out);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || bytes.compare(0, 4, "NPCA") != 0)
    throw CheckpointError("checkpoint: bad magic in " + path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t version = detail::get_u32(p + 4);
  if (version != Checkpoint::kVersion) throw CheckpointError("checkpoint: unsupported version");
  const std::uint64_t meta_len = detail::get_u64(p + 8);
  if (16 + meta_len > bytes.size()) throw CheckpointError("checkpoint: truncated metadata");
  Checkpoint ck;
  try {
    ck.meta = json::parse(bytes.substr(16, meta_len));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint: corrupt metadata: ") + e.what());
  }
  if (!ck.meta.contains("tensors") || !ck.meta.at("tensors").is_array())
    throw CheckpointError("checkpoint: missing tensor directory");
  std::size_t off = 16 + meta_len;
  for (const auto& d : ck.meta.at("tensors")) {
    const std::string name = d.at("name").get<std::string>();
    const int rows = d.at("rows").get<int>();
    const int cols = d.at("cols").get<int>();
    const std::size_t count = static_cast<std::size_t>(rows) * cols;
    if (off + 8 * count > bytes.size()) throw CheckpointError("checkpoint: truncated payload");
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < count; ++i)
      m.data()[i] = detail::get_f64(reinterpret_cast<const unsigned char*>(bytes.data()) + off + 8 * i);
    off += 8 * count;
    ck.tensors.push_back({name, std::move(m)});
  }
  if (off != bytes.size()) throw CheckpointError("checkpoint: trailing bytes");
  return ck;
}

// stable parameter naming for the checkpoint directory
inline std::vector<std::pair<std::string, Matrix*>> named_params(Model& m) {
  std::vector<std::pair<std::string, Matrix*>> out;
  for (std::size_t i = 0; i < m.flow.layers.size(); ++i) {
    const std::string prefix = "flow." + std::to_string(i) + ".";
    std::visit(
        [&](auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, AffineCoupling>) {
            const char* names[] = {"w1", "b1", "w2", "b2", "ws", "bs", "wt", "bt"};
            auto ps = l.params();
            for (int k = 0; k < 8; ++k) out.emplace_back(prefix + names[k], ps[k]);
          } else if constexpr (std::is_same_v<T, ActNorm>) {
            out.emplace_back(prefix + "scale", &l.scale);
            out.emplace_back(prefix + "bias", &l.bias);
          } else if constexpr (std::is_same_v<T, HouseholderRotation>) {
            for (std::size_t k = 0; k < l.vectors.size(); ++k)
              out.emplace_back(prefix + "v" + std::to_string(k), &l.vectors[k]);
          }
        },
        m.flow.layers[i]);
  }
  if (m.block) out.emplace_back("block.log_alpha", &m.block->log_alpha);
  return out;
}

inline Checkpoint model_to_checkpoint(Model& m, const RunConfig& cfg) {
  Checkpoint ck;
  ck.meta["kind"] = "model";
  ck.meta["variant"] = m.variant;
  ck.meta["config"] = config_to_json(cfg);
  ck.meta["config_hash"] = config_hash(cfg);
  const bool has_stats = m.block && m.block->stats.has_value();
  ck.meta["has_stats"] = has_stats;
  for (auto& [name, ptr] : named_params(m)) ck.tensors.push_back({name, *ptr});
  if (has_stats) {
    ck.tensors.push_back({"stats.mu_bar", m.block->stats->mu_bar});
    ck.tensors.push_back({"stats.sigma_bar", m.block->stats->sigma_bar});
    if (m.block->with_rotation) ck.tensors.push_back({"stats.v_tilde", m.block->stats->v_tilde});
  }
  return ck;
}

inline Model model_from_checkpoint(const Checkpoint& ck, RunConfig* cfg_out = nullptr) {
  if (!ck.meta.contains("config")) throw CheckpointError("checkpoint: missing config");
  RunConfig cfg = config_from_json(ck.meta.at("config"));
  if (cfg_out) *cfg_out = cfg;
  int dim = 0;  // model dimensionality comes from the dataset spec
  if (cfg.dataset.name == "two-spiral")
    dim = 2;
  else if (cfg.dataset.name == "manifold")
    dim = cfg.dataset.n_ambient;
  else if (cfg.dataset.name == "idx")
    dim = cfg.dataset.pad_to * cfg.dataset.pad_to;
  else if (cfg.dataset.name == "blobs")
    dim = cfg.dataset.side * cfg.dataset.side;
  Model m = build_variant(cfg.variant, dim, cfg.depth, cfg.width, cfg.seed, cfg.sigma_max, cfg.sigma_min);
  for (auto& [name, ptr] : named_params(m)) {
    const Matrix& t = ck.tensor(name);
    if (t.rows() != ptr->rows() || t.cols() != ptr->cols())
      throw CheckpointError("checkpoint: tensor shape mismatch for " + name);
    *ptr = t;
  }
  if (ck.meta.value("has_stats", false)) {
    if (!m.block) throw CheckpointError("checkpoint: stats present but variant has no block");
    FrozenStats st;
    st.mu_bar = ck.tensor("stats.mu_bar");
    st.sigma_bar = ck.tensor("stats.sigma_bar");
    if (m.block->with_rotation) st.v_tilde = ck.tensor("stats.v_tilde");
    m.block->stats = st;
    m.block->mode = BlockMode::Eval;
  }
  return m;
}

// latents container: Z plus labels, tied to the producing run
inline Checkpoint latents_to_checkpoint(const Matrix& z, const std::vector<int>& labels, const std::string& variant,
                                        const std::string& split, const std::string& cfg_hash) {
  Checkpoint ck;
  ck.meta["kind"] = "latents";
  ck.meta["variant"] = variant;
  ck.meta["split"] = split;
  ck.meta["config_hash"] = cfg_hash;
  Matrix lab(static_cast<int>(labels.size()), 1);
  for (std::size_t i = 0; i < labels.size(); ++i) lab(static_cast<int>(i), 0) = labels[i];
  ck.tensors.push_back({"z", z});
  ck.tensors.push_back({"labels", lab});
  return ck;
}

// ---------------------------------------------------------------------------
// CSV with a fixed header, written atomically (temp file then rename)
// ---------------------------------------------------------------------------

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) out += ',';
    out += header[i];
  }
  out += '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += row[i];
    }
    out += '\n';
  }
  detail::atomic_write(path, out);
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("csv: cannot open " + path);
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.push_back("");
    if (first) {
      t.header = cells;
      first = false;
    } else {
      t.rows.push_back(cells);
    }
  }
  return t;
}

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rows) {
    cells.push_back({std::to_string(r.iteration), std::to_string(r.epoch), fmt_double(r.objective), fmt_double(r.lr),
                     std::isnan(r.val_nll) ? std::string() : fmt_double(r.val_nll)});
  }
  write_csv(path, {"iteration", "epoch", "objective", "lr", "val_nll"}, cells);
}

// P5 binary PGM grid of row-major [0,1) images
inline void write_pgm_grid(const std::string& path, const Matrix& samples, int side) {
  const int count = samples.rows();
  int grid = 1;
  while (grid * grid < count) ++grid;
  const int w = grid * side, h = ((count + grid - 1) / grid) * side;
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::string pixels(static_cast<std::size_t>(w) * h, '\0');
  for (int k = 0; k < count; ++k) {
    const int gr = k / grid, gc = k % grid;
    for (int r = 0; r < side; ++r)
      for (int c = 0; c < side; ++c) {
        double v = samples(k, r * side + c);
        v = std::max(0.0, std::min(1.0, v));
        pixels[static_cast<std::size_t>(gr * side + r) * w + gc * side + c] =
            static_cast<char>(static_cast<int>(v * 255.0));
      }
  }
  out += pixels;
  detail::atomic_write(path, out);
}

}  // namespace npca
