#include "mlayer/tasks.hpp"

#include <cstdlib>
#include <filesystem>

#include <gtest/gtest.h>

namespace mlayer {
namespace {

namespace fs = std::filesystem;

fs::path temp_dir() {
  fs::path dir = fs::temp_directory_path() / "mlayer_tasks_test";
  fs::create_directories(dir);
  return dir;
}

TEST(Spirals, RangeBalanceAndDeterminism) {
  const Dataset d = gen_spirals(2000, 0.5, 7);
  EXPECT_EQ(d.size(), 2000u);
  EXPECT_EQ(d.p, 2);
  int ones = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_LE(std::abs(d.inputs[2 * i]), 10.5f);
    EXPECT_LE(std::abs(d.inputs[2 * i + 1]), 10.5f);
    ones += d.labels[i];
  }
  EXPECT_EQ(ones, 1000);

  const Dataset d2 = gen_spirals(2000, 0.5, 7);
  EXPECT_EQ(d.inputs, d2.inputs);
  const Dataset d3 = gen_spirals(2000, 0.5, 8);
  EXPECT_NE(d.inputs, d3.inputs);

  EXPECT_THROW(gen_spirals(3), DomainError);
}

TEST(Periodic, KnownTargetConfiguration) {
  PeriodicTarget t;
  t.k1 = 3;
  t.k2 = 4;
  t.a1 = 1.42;
  t.a2 = 6.29;
  t.psi1 = 0.84;
  t.psi2 = 0.76;
  EXPECT_EQ(t.describe(), "1.42 cos(6 pi x + 0.84) + 6.29 cos(8 pi x + 0.76)");
  EXPECT_NEAR(t.eval(0.0), 1.42 * std::cos(0.84) + 6.29 * std::cos(0.76), 1e-15);

  const PeriodicData data = gen_periodic(t, 5, 1e-3);
  EXPECT_EQ(data.train.size(), 2001u);
  EXPECT_EQ(data.test.size(), 4001u);
  EXPECT_FLOAT_EQ(data.train.inputs.front(), 0.0f);
  EXPECT_FLOAT_EQ(data.train.inputs.back(), 2.0f);
  EXPECT_FLOAT_EQ(data.test.inputs.front(), 2.0f);
  EXPECT_FLOAT_EQ(data.test.inputs.back(), 6.0f);

  // Test targets are noise-free: they match the analytic curve exactly.
  for (std::size_t i = 0; i < data.test.size(); i += 101) {
    const double x = data.test.inputs[i];
    EXPECT_EQ(data.test.targets[i], t.eval(x));
  }
  // Train targets carry noise at sigma = 1e-4.
  double max_dev = 0.0, min_dev = 1.0;
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    const double dev = std::abs(data.train.targets[i] -
                                t.eval(static_cast<double>(data.train.inputs[i])));
    max_dev = std::max(max_dev, dev);
    min_dev = std::min(min_dev, dev);
  }
  EXPECT_GT(max_dev, 0.0);
  EXPECT_LT(max_dev, 1e-3);
}

TEST(Periodic, SampledTargetStaysInRanges) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const PeriodicTarget t = sample_periodic_target(rng);
    EXPECT_GE(t.k1, 3);
    EXPECT_LE(t.k1, 9);
    EXPECT_GE(t.k2, 3);
    EXPECT_LE(t.k2, 9);
    EXPECT_GE(t.a1, 1.0);
    EXPECT_LE(t.a1, 2.0);
    EXPECT_GE(t.a2, 5.0);
    EXPECT_LE(t.a2, 10.0);
    EXPECT_GE(t.psi1, 0.0);
    EXPECT_LE(t.psi1, std::numbers::pi / 3.0);
  }
}

TEST(Determinant, IdentityTarget) {
  // Stitch an identity matrix through the generator's input layout by
  // evaluating the oracle directly.
  const Matrix eye = Matrix::identity(3);
  EXPECT_EQ(determinant(eye), 1.0);
  EXPECT_EQ(determinant_cofactor(eye), 1.0);
}

TEST(Determinant, LuMatchesCofactorOnGeneratedData) {
  for (int k = 2; k <= 4; ++k) {
    const Dataset d = gen_determinant(k, 200, 11);
    Matrix m(k, k);
    for (std::size_t e = 0; e < d.size(); ++e) {
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) m(i, j) = d.inputs[e * d.p + i * k + j];
      EXPECT_NEAR(d.targets[e], determinant_cofactor(m), 1e-12);
    }
  }
}

TEST(Determinant, MeanSquaredDeterminantMatchesClosedForm) {
  // With entries uniform in [-1, 1], E[det^2] = k! / 3^k.
  {
    const Dataset d = gen_determinant(3, 1000000, 123);
    double s = 0.0;
    for (double t : d.targets) s += t * t;
    EXPECT_NEAR(s / d.size(), 2.0 / 9.0, 0.002);
  }
  {
    const Dataset d = gen_determinant(5, 1000000, 321);
    double s = 0.0;
    for (double t : d.targets) s += t * t;
    EXPECT_NEAR(s / d.size(), 40.0 / 81.0, 0.005);
  }
}

TEST(Determinant, PermanentMode) {
  const Dataset d = gen_determinant(3, 100, 17, /*permanent=*/true);
  Matrix m(3, 3);
  for (std::size_t e = 0; e < d.size(); ++e) {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) m(i, j) = d.inputs[e * 9 + i * 3 + j];
    EXPECT_NEAR(d.targets[e], permanent_brute_force(m), 1e-12);
  }
  Matrix ones(3, 3);
  for (auto& v : ones.data()) v = 1.0;
  EXPECT_EQ(permanent_brute_force(ones), 6.0);
}

TEST(CsvRoundTrip, RegressionBitIdentical) {
  const Dataset d = gen_determinant(3, 50, 3);
  const std::string csv = dataset_to_csv(d);
  const Dataset r = dataset_from_csv(csv);
  EXPECT_EQ(r.kind, TaskKind::kRegression);
  EXPECT_EQ(r.p, d.p);
  EXPECT_EQ(r.inputs, d.inputs);
  EXPECT_EQ(r.targets, d.targets);
  EXPECT_EQ(dataset_to_csv(r), csv);
}

TEST(CsvRoundTrip, ClassificationBitIdentical) {
  const Dataset d = gen_spirals(100, 0.5, 5);
  const std::string csv = dataset_to_csv(d);
  const Dataset r = dataset_from_csv(csv);
  EXPECT_EQ(r.kind, TaskKind::kClassification);
  EXPECT_EQ(r.inputs, d.inputs);
  EXPECT_EQ(r.labels, d.labels);
  EXPECT_EQ(dataset_to_csv(r), csv);
}

// --- IDX / CIFAR binary formats, exercised on synthetic files -------------

void write_file(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string be32(std::uint32_t v) {
  std::string s(4, '\0');
  s[0] = static_cast<char>(v >> 24);
  s[1] = static_cast<char>(v >> 16);
  s[2] = static_cast<char>(v >> 8);
  s[3] = static_cast<char>(v);
  return s;
}

TEST(MnistLoader, SyntheticIdxPair) {
  const fs::path dir = temp_dir();
  // 3 images of 2x2 pixels.
  std::string img = be32(0x803) + be32(3) + be32(2) + be32(2);
  for (int v = 0; v < 12; ++v) img += static_cast<char>(v * 20);
  std::string lab = be32(0x801) + be32(3);
  lab += '\x01';
  lab += '\x00';
  lab += '\x09';
  write_file(dir / "img", img);
  write_file(dir / "lab", lab);

  const Dataset d = load_mnist_pair(dir / "img", dir / "lab");
  EXPECT_EQ(d.size(), 3u);
  EXPECT_EQ(d.p, 4);
  EXPECT_EQ(d.labels[0], 1);
  EXPECT_EQ(d.labels[2], 9);
  EXPECT_FLOAT_EQ(d.inputs[1], 20.0f / 255.0f);
  for (float v : d.inputs) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(MnistLoader, RejectsBadMagicTruncationAndCountMismatch) {
  const fs::path dir = temp_dir();
  write_file(dir / "bad_magic", be32(0x804) + be32(1) + be32(1) + be32(1) + "x");
  write_file(dir / "lab1", be32(0x801) + be32(1) + "\x00");
  EXPECT_THROW(load_mnist_pair(dir / "bad_magic", dir / "lab1"), FormatError);

  write_file(dir / "trunc", be32(0x803) + be32(2) + be32(2));
  EXPECT_THROW(load_mnist_pair(dir / "trunc", dir / "lab1"), FormatError);

  write_file(dir / "img1", be32(0x803) + be32(1) + be32(1) + be32(1) + "x");
  write_file(dir / "lab2", be32(0x801) + be32(2) + "\x00\x01");
  try {
    load_mnist_pair(dir / "img1", dir / "lab2");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 4u);  // the count field
  }
}

TEST(CifarLoader, SyntheticBatch) {
  const fs::path dir = temp_dir();
  std::string batch;
  for (int rec = 0; rec < 2; ++rec) {
    batch += static_cast<char>(rec + 3);  // labels 3 and 4
    for (int i = 0; i < 3072; ++i) batch += static_cast<char>((rec * 7 + i) % 256);
  }
  write_file(dir / "batch.bin", batch);
  Dataset d;
  d.kind = TaskKind::kClassification;
  d.p = 3072;
  d.target_dim = 10;
  load_cifar10_batch(dir / "batch.bin", d);
  EXPECT_EQ(d.size(), 2u);
  EXPECT_EQ(d.labels[0], 3);
  EXPECT_EQ(d.labels[1], 4);
  EXPECT_FLOAT_EQ(d.inputs[1], 1.0f / 255.0f);

  write_file(dir / "short.bin", batch.substr(0, 3000));
  Dataset e;
  EXPECT_THROW(load_cifar10_batch(dir / "short.bin", e), FormatError);
}

// --- Real datasets, exercised only when MLAYER_DATA_DIR is set ------------

const char* data_dir() { return std::getenv("MLAYER_DATA_DIR"); }

TEST(MnistLoader, RealDataSetCounts) {
  if (!data_dir()) GTEST_SKIP() << "MLAYER_DATA_DIR not set";
  const fs::path dir = fs::path(data_dir()) / "mnist";
  if (!fs::exists(dir / "train-images-idx3-ubyte"))
    GTEST_SKIP() << "MNIST files not present under " << dir;
  const auto [train, test] = load_mnist(dir);
  EXPECT_EQ(train.size(), 60000u);
  EXPECT_EQ(test.size(), 10000u);
  EXPECT_EQ(train.p, 784);
  float lo = 1.0f, hi = 0.0f;
  for (std::size_t i = 0; i < 784 * 100; ++i) {
    lo = std::min(lo, train.inputs[i]);
    hi = std::max(hi, train.inputs[i]);
  }
  EXPECT_GE(lo, 0.0f);
  EXPECT_LE(hi, 1.0f);
}

TEST(CifarLoader, RealDataClassHistogram) {
  if (!data_dir()) GTEST_SKIP() << "MLAYER_DATA_DIR not set";
  const fs::path dir = fs::path(data_dir()) / "cifar-10-batches-bin";
  if (!fs::exists(dir / "data_batch_1.bin"))
    GTEST_SKIP() << "CIFAR-10 batches not present under " << dir;
  const auto [train, test] = load_cifar10(dir);
  EXPECT_EQ(train.size(), 50000u);
  EXPECT_EQ(test.size(), 10000u);
  std::vector<int> hist(10, 0);
  for (int label : train.labels) ++hist[label];
  for (int c = 0; c < 10; ++c) EXPECT_EQ(hist[c], 5000) << "class " << c;
}

}  // namespace
}  // namespace mlayer
