#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "npca/linalg.hpp"
#include "npca/matrix.hpp"
#include "npca/rng.hpp"

namespace npca {

enum class Split { Train, Val, Test };

struct Dataset {
  Matrix x;                // N x n
  std::vector<int> labels; // class ids, length N
  std::vector<int> train_idx, val_idx, test_idx;
  std::string generator;
  std::uint64_t seed = 0;
  int n_classes = 0;
  bool image = false;
  int image_side = 0;
  Matrix true_embedding;   // n_ambient x n_intrinsic, manifold generator only

  int size() const { return x.rows(); }
  int dim() const { return x.cols(); }

  const std::vector<int>& indices(Split s) const {
    switch (s) {
      case Split::Train: return train_idx;
      case Split::Val: return val_idx;
      default: return test_idx;
    }
  }

  Matrix split_x(Split s) const { return x.select_rows(indices(s)); }

  std::vector<int> split_labels(Split s) const {
    const auto& idx = indices(s);
    std::vector<int> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = labels[idx[i]];
    return out;
  }
};

// deterministic disjoint 70/10/20 split covering 0..n-1
inline void assign_splits(Dataset& d, std::uint64_t seed, double train_frac = 0.7, double val_frac = 0.1) {
  Rng rng(seed ^ 0x5eedull);
  std::vector<int> perm = rng.permutation(d.size());
  const int n_train = static_cast<int>(train_frac * d.size());
  const int n_val = static_cast<int>(val_frac * d.size());
  d.train_idx.assign(perm.begin(), perm.begin() + n_train);
  d.val_idx.assign(perm.begin() + n_train, perm.begin() + n_train + n_val);
  d.test_idx.assign(perm.begin() + n_train + n_val, perm.end());
}

/*
 Two interleaved planar spirals, one per class. With t uniform on
 [0, 2 pi turns] and radius t / (2 pi turns), class 0 lies on
 (r cos t, r sin t) and class 1 on its negation; isotropic Gaussian noise is
 added on top. Radius is normalized so the outermost point sits at 1.
*/
inline Dataset two_spiral(int n_points, double noise_std = 0.02, double turns = 1.75, std::uint64_t seed = 0) {
  if (n_points % 2 != 0) throw std::invalid_argument("two_spiral: n_points must be even");
  Rng rng(seed);
  Dataset d;
  d.generator = "two-spiral";
  d.seed = seed;
  d.n_classes = 2;
  d.x = Matrix(n_points, 2);
  d.labels.resize(n_points);
  const double tmax = 2.0 * 3.14159265358979323846 * turns;
  for (int i = 0; i < n_points; ++i) {
    const int cls = i < n_points / 2 ? 0 : 1;
    const double t = rng.uniform(0.0, tmax);
    const double r = t / tmax;
    double px = r * std::cos(t) + noise_std * rng.normal();
    double py = r * std::sin(t) + noise_std * rng.normal();
    if (cls == 1) {
      px = -px;
      py = -py;
    }
    d.x(i, 0) = px;
    d.x(i, 1) = py;
    d.labels[i] = cls;
  }
  assign_splits(d, seed);
  return d;
}

/*
 Class-conditional Gaussian mixture on a low-dimensional subspace, embedded
 in the ambient space by a fixed random orthonormal map, with isotropic
 off-manifold noise. Component means are placed on orthogonal directions
 (scaled by 5) so classes are linearly separable from the intrinsic
 coordinates; the embedding is recorded for oracle tests.
*/
inline Dataset embedded_manifold(int n_ambient, int n_intrinsic, int n_points, double noise_std, int n_classes,
                                 std::uint64_t seed) {
  if (n_intrinsic > n_ambient) throw std::invalid_argument("embedded_manifold: intrinsic dim exceeds ambient");
  if (n_classes < 1) throw std::invalid_argument("embedded_manifold: need at least one class");
  Rng rng(seed);
  Matrix dirs = random_rotation(n_intrinsic, rng);
  Matrix means(n_classes, n_intrinsic);
  for (int c = 0; c < n_classes; ++c) {
    if (c < n_intrinsic)
      for (int j = 0; j < n_intrinsic; ++j) means(c, j) = 5.0 * dirs(j, c);
    else
      for (int j = 0; j < n_intrinsic; ++j) means(c, j) = 5.0 * rng.normal();
  }
  Matrix q_full = random_rotation(n_ambient, rng);
  Matrix q = q_full.slice_cols(0, n_intrinsic);  // n_ambient x n_intrinsic, orthonormal columns

  Dataset d;
  d.generator = "manifold";
  d.seed = seed;
  d.n_classes = n_classes;
  d.true_embedding = q;
  d.x = Matrix(n_points, n_ambient);
  d.labels.resize(n_points);
  for (int i = 0; i < n_points; ++i) {
    const int cls = i % n_classes;
    std::vector<double> y(n_intrinsic);
    for (int j = 0; j < n_intrinsic; ++j) y[j] = means(cls, j) + rng.normal();
    double* row = d.x.row_ptr(i);
    for (int a = 0; a < n_ambient; ++a) {
      double s = 0.0;
      for (int j = 0; j < n_intrinsic; ++j) s += q(a, j) * y[j];
      row[a] = s + (noise_std > 0.0 ? noise_std * rng.normal() : 0.0);
    }
    d.labels[i] = cls;
  }
  assign_splits(d, seed);
  return d;
}

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const char* what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error(std::string("idx: truncated ") + what);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace detail

/*
 IDX image/label ingestion (big-endian magic 0x00000803 / 0x00000801).
 Pixels are mapped to [0, 1): with dequantization each byte p becomes
 (p + u) / 256 with u ~ U[0, 1), otherwise p / 256. Images are centered in a
 pad_to x pad_to zero canvas and flattened row-major.
*/
inline Dataset load_idx_images(const std::string& images_path, const std::string& labels_path, int pad_to = 32,
                               bool dequantize = true, std::uint64_t seed = 0) {
  std::ifstream fi(images_path, std::ios::binary);
  if (!fi) throw std::runtime_error("idx: cannot open " + images_path);
  if (detail::read_be32(fi, "image magic") != 0x00000803u)
    throw std::runtime_error("idx: bad image magic in " + images_path);
  const int count = static_cast<int>(detail::read_be32(fi, "image count"));
  const int rows = static_cast<int>(detail::read_be32(fi, "image rows"));
  const int cols = static_cast<int>(detail::read_be32(fi, "image cols"));
  if (rows > pad_to || cols > pad_to) throw std::runtime_error("idx: image larger than pad_to");

  std::ifstream fl(labels_path, std::ios::binary);
  if (!fl) throw std::runtime_error("idx: cannot open " + labels_path);
  if (detail::read_be32(fl, "label magic") != 0x00000801u)
    throw std::runtime_error("idx: bad label magic in " + labels_path);
  const int lcount = static_cast<int>(detail::read_be32(fl, "label count"));
  if (lcount != count) throw std::runtime_error("idx: image/label count mismatch");

  Rng rng(seed);
  Dataset d;
  d.generator = "idx";
  d.seed = seed;
  d.image = true;
  d.image_side = pad_to;
  d.x = Matrix(count, pad_to * pad_to);
  d.labels.resize(count);
  const int roff = (pad_to - rows) / 2, coff = (pad_to - cols) / 2;
  std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols);
  int max_label = 0;
  for (int i = 0; i < count; ++i) {
    if (!fi.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
      throw std::runtime_error("idx: truncated image data");
    double* row = d.x.row_ptr(i);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        const double p = buf[static_cast<std::size_t>(r) * cols + c];
        const double v = dequantize ? (p + rng.uniform()) / 256.0 : p / 256.0;
        row[(roff + r) * pad_to + (coff + c)] = v;
      }
    unsigned char lab;
    if (!fl.read(reinterpret_cast<char*>(&lab), 1)) throw std::runtime_error("idx: truncated label data");
    d.labels[i] = lab;
    max_label = std::max(max_label, static_cast<int>(lab));
  }
  d.n_classes = max_label + 1;
  assign_splits(d, seed);
  return d;
}

// Byte-quantized blob images for image-mode smoke runs: one Gaussian bump
// per image with class-dependent center, dequantized like IDX input.
inline Dataset synthetic_blob_images(int n_points, int side, int n_classes, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.generator = "blobs";
  d.seed = seed;
  d.image = true;
  d.image_side = side;
  d.n_classes = n_classes;
  d.x = Matrix(n_points, side * side);
  d.labels.resize(n_points);
  for (int i = 0; i < n_points; ++i) {
    const int cls = i % n_classes;
    const double cx = side * (0.25 + 0.5 * (cls % 2)) + rng.normal();
    const double cy = side * (0.25 + 0.5 * ((cls / 2) % 2)) + rng.normal();
    const double amp = 155.0 + 100.0 * rng.uniform();
    const double width = side / 6.0;
    double* row = d.x.row_ptr(i);
    for (int r = 0; r < side; ++r)
      for (int c = 0; c < side; ++c) {
        const double dx = c - cx, dy = r - cy;
        double p = amp * std::exp(-(dx * dx + dy * dy) / (2.0 * width * width));
        p += 8.0 * rng.uniform();  // sensor-ish noise
        int byte = static_cast<int>(p);
        byte = std::max(0, std::min(255, byte));
        row[r * side + c] = (byte + rng.uniform()) / 256.0;
      }
    d.labels[i] = cls;
  }
  assign_splits(d, seed);
  return d;
}

// batches of size `batch` drawn in order from the given rows; a trailing
// remainder smaller than `min_rows` is dropped
inline std::vector<Matrix> make_batches(const Matrix& x, int batch, int min_rows = 2) {
  std::vector<Matrix> out;
  for (int start = 0; start + min_rows <= x.rows(); start += batch) {
    const int end = std::min(start + batch, x.rows());
    if (end - start < min_rows) break;
    out.push_back(x.slice_rows(start, end));
  }
  return out;
}

}  // namespace npca
