#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "mlayer/io.hpp"
#include "mlayer/matrix.hpp"
#include "mlayer/rng.hpp"

namespace mlayer {

enum class TaskKind { kClassification, kRegression };

/// A supervised dataset. Inputs are stored as float32 (image datasets are
/// large); the example() staging call widens one row to double for the
/// model. Regression targets stay double.
struct Dataset {
  TaskKind kind = TaskKind::kRegression;
  int p = 0;            // input width
  int target_dim = 1;   // outputs per example (regression) / class count
  std::vector<float> inputs;    // size() * p, row-major
  std::vector<double> targets;  // regression: size() * target_dim
  std::vector<int> labels;      // classification: size()

  std::size_t size() const {
    return kind == TaskKind::kClassification
               ? labels.size()
               : targets.size() / static_cast<std::size_t>(target_dim);
  }

  void example(std::size_t i, std::vector<double>& x) const {
    x.resize(p);
    const float* row = &inputs[i * static_cast<std::size_t>(p)];
    for (int q = 0; q < p; ++q) x[q] = row[q];
  }

  void push_input_row(const std::vector<double>& x) {
    for (double v : x) inputs.push_back(static_cast<float>(v));
  }
};

// ---------------------------------------------------------------------------
// Synthetic generators
// ---------------------------------------------------------------------------

/// Two interleaved spiral arms, n_points/2 each, labels 0/1. Arm i covers
/// theta in [0.5*pi, 3.5*pi] with radius 10*theta/(3.5*pi), rotated by
/// i*pi, so coordinates fill [-10, 10]; uniform noise in [-noise, noise]
/// is added per coordinate.
inline Dataset gen_spirals(int n_points = 2000, double noise = 0.5,
                           std::uint64_t seed = 0) {
  if (n_points < 2 || n_points % 2 != 0)
    throw DomainError("gen_spirals: n_points must be even and positive");
  Rng rng(seed);
  Dataset d;
  d.kind = TaskKind::kClassification;
  d.p = 2;
  d.target_dim = 2;
  constexpr double kPi = std::numbers::pi;
  for (int i = 0; i < n_points; ++i) {
    const int arm = (i < n_points / 2) ? 0 : 1;
    const double theta = rng.uniform(0.5 * kPi, 3.5 * kPi);
    const double r = 10.0 * theta / (3.5 * kPi);
    const double x = r * std::cos(theta + arm * kPi) + rng.uniform(-noise, noise);
    const double y = r * std::sin(theta + arm * kPi) + rng.uniform(-noise, noise);
    d.inputs.push_back(static_cast<float>(x));
    d.inputs.push_back(static_cast<float>(y));
    d.labels.push_back(arm);
  }
  return d;
}

/// Sum of two cosines with integer frequency multipliers: the train range
/// is [0, 2], the extrapolation/test range is [2, 6].
struct PeriodicTarget {
  int k1 = 3, k2 = 4;
  double a1 = 1.0, a2 = 5.0;
  double psi1 = 0.0, psi2 = 0.0;

  double eval(double x) const {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    return a1 * std::cos(two_pi * k1 * x + psi1) + a2 * std::cos(two_pi * k2 * x + psi2);
  }

  /// E.g. "1.42 cos(6 pi x + 0.84) + 6.29 cos(8 pi x + 0.76)".
  std::string describe() const {
    std::ostringstream ss;
    ss << a1 << " cos(" << 2 * k1 << " pi x + " << psi1 << ") + " << a2 << " cos("
       << 2 * k2 << " pi x + " << psi2 << ")";
    return ss.str();
  }
};

/// Frequencies uniform in {3..9}; amplitudes in [1,2] and [5,10]; phases in
/// [0, pi/3].
inline PeriodicTarget sample_periodic_target(Rng& rng) {
  PeriodicTarget t;
  t.k1 = rng.uniform_int(3, 9);
  t.k2 = rng.uniform_int(3, 9);
  t.a1 = rng.uniform(1.0, 2.0);
  t.a2 = rng.uniform(5.0, 10.0);
  t.psi1 = rng.uniform(0.0, std::numbers::pi / 3.0);
  t.psi2 = rng.uniform(0.0, std::numbers::pi / 3.0);
  return t;
}

struct PeriodicData {
  Dataset train;  // x in [0, 2], targets carry Gaussian noise (sigma 1e-4)
  Dataset test;   // x in [2, 6], noise-free
  PeriodicTarget target;
};

inline PeriodicData gen_periodic(const PeriodicTarget& target, std::uint64_t seed,
                                 double spacing = 1e-3) {
  if (spacing <= 0.0) throw DomainError("gen_periodic: spacing must be positive");
  Rng rng(seed);
  PeriodicData out;
  out.target = target;
  auto fill = [&](Dataset& d, double lo, double hi, bool noisy) {
    d.kind = TaskKind::kRegression;
    d.p = 1;
    d.target_dim = 1;
    const long long steps = std::llround((hi - lo) / spacing);
    for (long long i = 0; i <= steps; ++i) {
      const double x = lo + static_cast<double>(i) * spacing;
      d.inputs.push_back(static_cast<float>(x));
      double y = target.eval(static_cast<double>(static_cast<float>(x)));
      if (noisy) y += rng.normal(0.0, 1e-4);
      d.targets.push_back(y);
    }
  };
  fill(out.train, 0.0, 2.0, true);
  fill(out.test, 2.0, 6.0, false);
  return out;
}

inline PeriodicData gen_periodic(std::uint64_t seed, double spacing = 1e-3) {
  Rng rng(seed);
  PeriodicTarget t = sample_periodic_target(rng);
  return gen_periodic(t, seed + 1, spacing);
}

/// Cofactor-expansion determinant; exponential in k, used as the
/// independent check against the LU path for small matrices.
inline double determinant_cofactor(const Matrix& a) {
  const int n = a.rows();
  if (n == 1) return a(0, 0);
  double det = 0.0;
  for (int j = 0; j < n; ++j) {
    if (a(0, j) == 0.0) continue;
    Matrix minor(n - 1 > 0 ? n - 1 : 1, n - 1 > 0 ? n - 1 : 1);
    for (int r = 1; r < n; ++r) {
      int cc = 0;
      for (int c = 0; c < n; ++c) {
        if (c == j) continue;
        minor(r - 1, cc++) = a(r, c);
      }
    }
    const double sign = (j % 2 == 0) ? 1.0 : -1.0;
    det += sign * a(0, j) * determinant_cofactor(minor);
  }
  return det;
}

/// Sum over all permutations; fine for k <= 6.
inline double permanent_brute_force(const Matrix& a) {
  const int n = a.rows();
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  double total = 0.0;
  do {
    double prod = 1.0;
    for (int i = 0; i < n; ++i) prod *= a(i, perm[i]);
    total += prod;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return total;
}

/// Flattened k x k matrices with entries uniform in [-1, 1]; the target is
/// the determinant (or the permanent). Targets are computed from the
/// float32-rounded inputs the model will actually see.
inline Dataset gen_determinant(int k, int n_examples, std::uint64_t seed,
                               bool permanent = false) {
  if (k < 2 || k > 6) throw DomainError("gen_determinant: k must be in [2, 6]");
  if (n_examples < 1) throw DomainError("gen_determinant: n_examples must be >= 1");
  Rng rng(seed);
  Dataset d;
  d.kind = TaskKind::kRegression;
  d.p = k * k;
  d.target_dim = 1;
  d.inputs.reserve(static_cast<std::size_t>(n_examples) * d.p);
  d.targets.reserve(n_examples);
  Matrix m(k, k);
  for (int e = 0; e < n_examples; ++e) {
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) {
        const float v = static_cast<float>(rng.uniform(-1.0, 1.0));
        d.inputs.push_back(v);
        m(i, j) = v;
      }
    d.targets.push_back(permanent ? permanent_brute_force(m) : determinant(m));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Image dataset loaders (exact binary formats)
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t read_be32(const std::string& buf, std::size_t offset,
                               const std::string& file) {
  if (offset + 4 > buf.size()) throw FormatError(file + ": truncated header", offset);
  return (std::uint32_t(static_cast<unsigned char>(buf[offset])) << 24) |
         (std::uint32_t(static_cast<unsigned char>(buf[offset + 1])) << 16) |
         (std::uint32_t(static_cast<unsigned char>(buf[offset + 2])) << 8) |
         std::uint32_t(static_cast<unsigned char>(buf[offset + 3]));
}

}  // namespace detail

/// IDX image file (magic 0x00000803, big-endian dims) as float rows scaled
/// by 1/255, plus the matching label file (magic 0x00000801).
inline Dataset load_mnist_pair(const std::filesystem::path& images_path,
                               const std::filesystem::path& labels_path) {
  const std::string img = read_file(images_path);
  const std::string lab = read_file(labels_path);
  const std::string img_name = images_path.filename().string();
  const std::string lab_name = labels_path.filename().string();

  if (detail::read_be32(img, 0, img_name) != 0x00000803u)
    throw FormatError(img_name + ": bad magic, want 0x00000803", 0);
  const std::uint32_t count = detail::read_be32(img, 4, img_name);
  const std::uint32_t rows = detail::read_be32(img, 8, img_name);
  const std::uint32_t cols = detail::read_be32(img, 12, img_name);
  const std::size_t pixels = std::size_t(rows) * cols;
  if (img.size() != 16 + std::size_t(count) * pixels)
    throw FormatError(img_name + ": image payload size mismatch", img.size());

  if (detail::read_be32(lab, 0, lab_name) != 0x00000801u)
    throw FormatError(lab_name + ": bad magic, want 0x00000801", 0);
  const std::uint32_t lab_count = detail::read_be32(lab, 4, lab_name);
  if (lab_count != count)
    throw FormatError(lab_name + ": label count " + std::to_string(lab_count) +
                          " != image count " + std::to_string(count),
                      4);
  if (lab.size() != 8 + std::size_t(count))
    throw FormatError(lab_name + ": label payload size mismatch", lab.size());

  Dataset d;
  d.kind = TaskKind::kClassification;
  d.p = static_cast<int>(pixels);
  d.target_dim = 10;
  d.inputs.resize(std::size_t(count) * pixels);
  d.labels.resize(count);
  for (std::size_t i = 0; i < std::size_t(count) * pixels; ++i)
    d.inputs[i] = static_cast<float>(static_cast<unsigned char>(img[16 + i])) / 255.0f;
  for (std::uint32_t i = 0; i < count; ++i)
    d.labels[i] = static_cast<unsigned char>(lab[8 + i]);
  return d;
}

inline std::pair<Dataset, Dataset> load_mnist(const std::filesystem::path& dir) {
  return {load_mnist_pair(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte"),
          load_mnist_pair(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte")};
}

/// CIFAR-10 binary batches: 3073-byte records, 1 label byte then 3072
/// channel-major pixel bytes, scaled to [0, 1].
inline void load_cifar10_batch(const std::filesystem::path& path, Dataset& d) {
  constexpr std::size_t kRecord = 3073;
  const std::string buf = read_file(path);
  const std::string name = path.filename().string();
  if (buf.empty() || buf.size() % kRecord != 0)
    throw FormatError(name + ": size " + std::to_string(buf.size()) +
                          " is not a multiple of 3073",
                      buf.size() - buf.size() % kRecord);
  const std::size_t records = buf.size() / kRecord;
  for (std::size_t r = 0; r < records; ++r) {
    const unsigned char label = static_cast<unsigned char>(buf[r * kRecord]);
    if (label > 9) throw FormatError(name + ": label byte out of range", r * kRecord);
    d.labels.push_back(label);
    const char* px = buf.data() + r * kRecord + 1;
    for (std::size_t i = 0; i < 3072; ++i)
      d.inputs.push_back(static_cast<float>(static_cast<unsigned char>(px[i])) / 255.0f);
  }
}

inline std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir) {
  auto make = [] {
    Dataset d;
    d.kind = TaskKind::kClassification;
    d.p = 3072;
    d.target_dim = 10;
    return d;
  };
  Dataset train = make();
  for (int b = 1; b <= 5; ++b)
    load_cifar10_batch(dir / ("data_batch_" + std::to_string(b) + ".bin"), train);
  Dataset test = make();
  load_cifar10_batch(dir / "test_batch.bin", test);
  return {train, test};
}

// ---------------------------------------------------------------------------
// CSV interchange
// ---------------------------------------------------------------------------

/// Header row then one example per line, inputs first. Classification
/// datasets end with a "label" column; regression with y0..y{h-1}. Floats
/// are written with 17 significant digits so a reload is bit-identical.
inline std::string dataset_to_csv(const Dataset& d) {
  std::string out;
  for (int q = 0; q < d.p; ++q) {
    if (q) out += ',';
    out += "x" + std::to_string(q);
  }
  if (d.kind == TaskKind::kClassification) {
    out += ",label\n";
  } else {
    for (int j = 0; j < d.target_dim; ++j) out += ",y" + std::to_string(j);
    out += '\n';
  }
  const std::size_t n = d.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (int q = 0; q < d.p; ++q) {
      if (q) out += ',';
      out += format_double(d.inputs[i * d.p + q]);
    }
    if (d.kind == TaskKind::kClassification) {
      out += ',' + std::to_string(d.labels[i]);
    } else {
      for (int j = 0; j < d.target_dim; ++j)
        out += ',' + format_double(d.targets[i * d.target_dim + j]);
    }
    out += '\n';
  }
  return out;
}

inline void write_dataset_csv(const Dataset& d, const std::filesystem::path& path) {
  atomic_write(path, dataset_to_csv(d));
}

inline Dataset dataset_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("dataset csv: empty file", 0);
  std::vector<std::string> header;
  {
    std::istringstream h(line);
    std::string col;
    while (std::getline(h, col, ',')) header.push_back(col);
  }
  Dataset d;
  int n_inputs = 0;
  while (n_inputs < static_cast<int>(header.size()) &&
         header[n_inputs] == "x" + std::to_string(n_inputs))
    ++n_inputs;
  if (n_inputs == 0) throw FormatError("dataset csv: no input columns", 0);
  d.p = n_inputs;
  if (header.size() == static_cast<std::size_t>(n_inputs) + 1 && header.back() == "label") {
    d.kind = TaskKind::kClassification;
    d.target_dim = 0;  // grown from labels below
  } else {
    d.kind = TaskKind::kRegression;
    d.target_dim = static_cast<int>(header.size()) - n_inputs;
    if (d.target_dim < 1) throw FormatError("dataset csv: no target columns", 0);
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::vector<double> values;
    while (std::getline(row, cell, ',')) values.push_back(std::stod(cell));
    if (values.size() != header.size())
      throw FormatError("dataset csv: wrong column count on line " + std::to_string(line_no),
                        line_no);
    for (int q = 0; q < d.p; ++q) d.inputs.push_back(static_cast<float>(values[q]));
    if (d.kind == TaskKind::kClassification) {
      const int label = static_cast<int>(values.back());
      d.labels.push_back(label);
      d.target_dim = std::max(d.target_dim, label + 1);
    } else {
      for (std::size_t j = n_inputs; j < values.size(); ++j) d.targets.push_back(values[j]);
    }
  }
  if (d.kind == TaskKind::kClassification && d.target_dim < 2) d.target_dim = 2;
  return d;
}

inline Dataset read_dataset_csv(const std::filesystem::path& path) {
  return dataset_from_csv(read_file(path));
}

}  // namespace mlayer
