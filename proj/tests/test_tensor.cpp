#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <random>

#include "ren/errors.hpp"
#include "ren/random.hpp"
#include "ren/tensor.hpp"
#include "support.hpp"

using ren::Tensor;
namespace k = ren::kernels;

TEST_CASE("tensor construction checks the value count") {
  CHECK_THROWS_AS(Tensor(2, 2, std::vector<double>{1, 2, 3}), ren::DimensionError);
  CHECK_THROWS_AS(Tensor::from_rows({{1, 2}, {3}}), ren::DimensionError);
  const Tensor t = Tensor::from_rows({{1, 2, 3}, {4, 5, 6}});
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t(1, 2) == 6);
  CHECK(t[3] == 4);
  CHECK(t.size() == 6);
}

TEST_CASE("matmul matches hand-computed products") {
  const Tensor id = Tensor::from_rows({{1, 0}, {0, 1}});
  const Tensor b = Tensor::from_rows({{3, 4}, {5, 6}});
  CHECK(k::matmul(id, b) == b);
  CHECK(k::matmul(Tensor::row({1, 2}), Tensor::from_rows({{3}, {4}})) == Tensor(1, 1, 11.0));
}

TEST_CASE("matmul rejects mismatched inner extents and names both shapes") {
  try {
    k::matmul(Tensor(2, 3), Tensor(2, 3));
    FAIL("expected a dimension error");
  } catch (const ren::DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
  }
}

TEST_CASE("transposed products agree with explicit transposes") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = testing::random_tensor(3, 4, rng);
    const Tensor b = testing::random_tensor(3, 5, rng);
    const Tensor c = testing::random_tensor(6, 4, rng);
    Tensor at(4, 3), ct(4, 6);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j) at(j, i) = a(i, j);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 4; ++j) ct(j, i) = c(i, j);
    CHECK(testing::max_abs_diff(k::matmul_tn(a, b), k::matmul(at, b)) < 1e-14);
    CHECK(testing::max_abs_diff(k::matmul_nt(a, c), k::matmul(a, ct)) < 1e-14);
  }
}

TEST_CASE("softmax rows sum to one, including very large entries") {
  CHECK(k::softmax_rows(Tensor::row({0, 0, 0}))[1] == Catch::Approx(1.0 / 3.0).epsilon(1e-15));
  const Tensor big = k::softmax_rows(Tensor::row({1000, 1000}));
  CHECK(big[0] == 0.5);
  CHECK(big[1] == 0.5);
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor x = testing::random_tensor(4, 5, rng, -1000.0, 1000.0);
    const Tensor p = k::softmax_rows(x);
    CHECK(p.all_finite());
    for (std::size_t i = 0; i < p.rows(); ++i) {
      double s = 0.0;
      for (double v : p.row_span(i)) {
        CHECK(v >= 0.0);
        s += v;
      }
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("stable sigmoid agrees with the textbook form and saturates cleanly") {
  for (double v : {-30.0, -2.5, 0.0, 0.7, 12.0}) {
    CHECK(k::sigmoid(v) == Catch::Approx(1.0 / (1.0 + std::exp(-v))).epsilon(1e-14));
  }
  CHECK(k::sigmoid(-800.0) >= 0.0);
  CHECK(k::sigmoid(800.0) == 1.0);
}

TEST_CASE("row slicing, concatenation and gathering") {
  const Tensor a = Tensor::from_rows({{1, 2}, {3, 4}});
  const Tensor b = Tensor::from_rows({{5, 6}});
  const Tensor c = k::concat_rows(a, b);
  CHECK(c == Tensor::from_rows({{1, 2}, {3, 4}, {5, 6}}));
  CHECK(k::slice_rows(c, 1, 3) == Tensor::from_rows({{3, 4}, {5, 6}}));
  CHECK(k::slice_rows(c, 2, 2).rows() == 0);
  CHECK_THROWS_AS(k::slice_rows(c, 2, 4), ren::DimensionError);
  CHECK_THROWS_AS(k::concat_rows(a, Tensor(1, 3)), ren::DimensionError);
  const std::vector<std::size_t> idx{2, 0};
  CHECK(k::gather_rows(c, idx) == Tensor::from_rows({{5, 6}, {1, 2}}));
}

TEST_CASE("finite check catches NaN and infinity") {
  Tensor t(1, 2);
  CHECK(t.all_finite());
  t[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(t.all_finite());
  t[0] = std::numeric_limits<double>::infinity();
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("derived seeds are deterministic and path-sensitive") {
  CHECK(ren::derive_seed(5, {1, 2}) == ren::derive_seed(5, {1, 2}));
  CHECK(ren::derive_seed(5, {1, 2}) != ren::derive_seed(5, {2, 1}));
  CHECK(ren::derive_seed(5, {1}) != ren::derive_seed(6, {1}));
}
