#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <string>

#include "taskfuse/core/csv.hpp"
#include "taskfuse/core/image.hpp"
#include "taskfuse/core/rng.hpp"
#include "taskfuse/core/tensor.hpp"

using namespace taskfuse;

TEST_CASE("rng streams are reproducible and seed-sensitive") {
  Rng a(1234), b(1234), c(1235);
  bool all_eq = true, any_diff = false;
  for (int i = 0; i < 1000; ++i) {
    const auto x = a.next_u64();
    all_eq = all_eq && (x == b.next_u64());
    any_diff = any_diff || (x != c.next_u64());
  }
  REQUIRE(all_eq);
  REQUIRE(any_diff);
}

TEST_CASE("rng uniform stays in [0,1) and covers the range") {
  Rng r(7);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  REQUIRE(lo < 0.01);
  REQUIRE(hi > 0.99);
}

TEST_CASE("rng normal has roughly standard moments") {
  Rng r(42);
  double s = 0.0, s2 = 0.0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  const double mean = s / n;
  const double var = s2 / n - mean * mean;
  REQUIRE(std::abs(mean) < 0.02);
  REQUIRE(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("derived streams differ by tag but are reproducible") {
  Rng r1(99), r2(99);
  Rng a1 = r1.derive("alpha");
  Rng a2 = r2.derive("alpha");
  Rng b1 = r1.derive("beta");
  REQUIRE(a1.next_u64() == a2.next_u64());
  Rng a3 = r2.derive("alpha");
  REQUIRE(a3.next_u64() != b1.next_u64());
}

TEST_CASE("tensor indexing is row-major NCHW") {
  Tensor t({2, 3, 4, 5});
  REQUIRE(t.numel() == 120);
  t.at(1, 2, 3, 4) = 7.5;
  REQUIRE(t.v[119] == 7.5);
  t.at(0, 0, 0, 1) = 2.0;
  REQUIRE(t.v[1] == 2.0);
  REQUIRE(t.shape_str() == "(2,3,4,5)");
}

TEST_CASE("shape mismatch raises invalid_argument") {
  Tensor a({1, 1, 2, 2}), b({1, 1, 2, 3});
  REQUIRE_THROWS_AS(check_same_shape(a, b, "test"), std::invalid_argument);
}

TEST_CASE("csv writer emits stable rows and reader parses them back") {
  const std::string path = std::filesystem::temp_directory_path() / "tf_csv_test.csv";
  {
    CsvWriter w(path, {"epoch", "loss"});
    w.row({"0", csv_num(0.125)});
    w.row({"1", csv_num(1.0 / 3.0)});
  }
  auto rows = read_csv(path);
  REQUIRE(rows.size() == 3);
  REQUIRE(rows[0] == std::vector<std::string>{"epoch", "loss"});
  REQUIRE(rows[1][1] == "0.125");
  REQUIRE(std::stod(rows[2][1]) == Catch::Approx(1.0 / 3.0).epsilon(1e-9));
  std::filesystem::remove(path);
}

TEST_CASE("pgm roundtrip preserves 8-bit values") {
  Tensor img({1, 1, 5, 7});
  Rng r(3);
  for (auto& x : img.v) x = r.uniform();
  const std::string path = std::filesystem::temp_directory_path() / "tf_img_test.pgm";
  save_pgm(path, img);
  Tensor back = load_pnm(path);
  REQUIRE(back.shape == img.shape);
  for (std::size_t i = 0; i < img.v.size(); ++i)
    REQUIRE(std::abs(back.v[i] - img.v[i]) <= 0.5 / 255.0 + 1e-12);
  std::filesystem::remove(path);
}

TEST_CASE("color images load as luma") {
  Tensor rgb({1, 3, 2, 2});
  // pure red / green / blue / white corners
  rgb.at(0, 0, 0, 0) = 1.0;
  rgb.at(0, 1, 0, 1) = 1.0;
  rgb.at(0, 2, 1, 0) = 1.0;
  rgb.at(0, 0, 1, 1) = 1.0;
  rgb.at(0, 1, 1, 1) = 1.0;
  rgb.at(0, 2, 1, 1) = 1.0;
  const std::string path = std::filesystem::temp_directory_path() / "tf_img_test.ppm";
  save_ppm(path, rgb);
  Tensor y = load_pnm(path);
  REQUIRE(y.dim(1) == 1);
  REQUIRE(y.at(0, 0, 0, 0) == Catch::Approx(0.299).margin(2.0 / 255.0));
  REQUIRE(y.at(0, 0, 0, 1) == Catch::Approx(0.587).margin(2.0 / 255.0));
  REQUIRE(y.at(0, 0, 1, 0) == Catch::Approx(0.114).margin(2.0 / 255.0));
  REQUIRE(y.at(0, 0, 1, 1) == Catch::Approx(1.0).margin(2.0 / 255.0));
  std::filesystem::remove(path);
}

TEST_CASE("ascii pgm with comments parses") {
  const std::string path = std::filesystem::temp_directory_path() / "tf_img_ascii.pgm";
  {
    std::ofstream out(path);
    out << "P2\n# a comment\n3 2\n255\n0 128 255\n64 32 16\n";
  }
  Tensor t = load_pnm(path);
  REQUIRE(t.dim(2) == 2);
  REQUIRE(t.dim(3) == 3);
  REQUIRE(t.at(0, 0, 0, 1) == Catch::Approx(128.0 / 255.0));
  REQUIRE(t.at(0, 0, 1, 2) == Catch::Approx(16.0 / 255.0));
  std::filesystem::remove(path);
}
