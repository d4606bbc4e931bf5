#include <catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "ren/datasets.hpp"
#include "ren/trainer.hpp"
#include "support.hpp"

using namespace ren;

TEST_CASE("noise-free moons lie on their half circles with equal class counts") {
  const PlaneSet m = make_two_moons(100, 0.0, 3);
  REQUIRE(m.size() == 100);
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double x = m.x(i, 0), y = m.x(i, 1);
    if (m.y[i] == 0) {
      ++zeros;
      CHECK(std::abs(std::hypot(x, y) - 1.0) <= 1e-12);
      CHECK(y >= 0.0);
    } else {
      CHECK(std::abs(std::hypot(x - 1.0, y - 0.5) - 1.0) <= 1e-12);
      CHECK(y <= 0.5 + 1e-12);
    }
  }
  CHECK(zeros == 50);
  CHECK(m.x == make_two_moons(100, 0.0, 3).x);
  CHECK(make_two_moons(100, 0.15, 9).x == make_two_moons(100, 0.15, 9).x);
  CHECK_FALSE(make_two_moons(100, 0.15, 9).x == make_two_moons(100, 0.15, 10).x);
  CHECK_THROWS_AS(make_two_moons(1, 0.1, 1), ConfigError);
}

TEST_CASE("blobs: exact centers without noise, sample means near centers with noise") {
  const std::vector<Point2> centers{{0.0, 0.0}, {3.0, 1.0}, {-2.0, 4.0}};
  const PlaneSet exact = make_blobs(30, 3, centers, 0.0, 1);
  for (std::size_t i = 0; i < exact.size(); ++i) {
    const auto& c = centers[static_cast<std::size_t>(exact.y[i])];
    CHECK(exact.x(i, 0) == c[0]);
    CHECK(exact.x(i, 1) == c[1]);
  }
  CHECK_THROWS_AS(make_blobs(30, 3, {{0.0, 0.0}}, 0.1, 1), ConfigError);
  CHECK_THROWS_AS(make_blobs(30, 1, {{0.0, 0.0}}, 0.1, 1), ConfigError);

  const double sigma = 0.5;
  const std::size_t n = 3000;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const PlaneSet b = make_blobs(n, 3, centers, sigma, seed);
    std::vector<double> sx(3, 0.0), sy(3, 0.0), cnt(3, 0.0);
    for (std::size_t i = 0; i < b.size(); ++i) {
      const auto k = static_cast<std::size_t>(b.y[i]);
      sx[k] += b.x(i, 0);
      sy[k] += b.x(i, 1);
      cnt[k] += 1.0;
    }
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(cnt[k] == 1000.0);
      const double bound = 3.0 * sigma / std::sqrt(cnt[k]);
      CHECK(std::abs(sx[k] / cnt[k] - centers[k][0]) <= bound);
      CHECK(std::abs(sy[k] / cnt[k] - centers[k][1]) <= bound);
    }
  }
}

TEST_CASE("class imbalance ratio sets the largest-to-smallest class ratio") {
  CHECK(class_counts(90, 3, 1.0) == std::vector<std::size_t>{30, 30, 30});
  const auto c = class_counts(1100, 2, 10.0);
  CHECK(c == std::vector<std::size_t>{1000, 100});
  const auto t = class_counts(700, 3, 4.0);
  CHECK(t[0] + t[1] + t[2] == 700);
  CHECK(static_cast<double>(t[0]) / static_cast<double>(t[2]) == Catch::Approx(4.0).margin(0.05));
  CHECK_THROWS_AS(class_counts(10, 2, 0.0), ConfigError);
}

TEST_CASE("identity shift redraws the same process; a half turn swaps the moons") {
  const PlaneSet src = make_two_moons(200, 0.0, 1);
  const PlaneSet same = apply_shift(src, ShiftSpec{}, 7);
  CHECK_FALSE(same.x == src.x);
  CHECK(same.y == src.y);
  for (std::size_t i = 0; i < same.size(); ++i) {
    if (same.y[i] == 0) CHECK(std::abs(std::hypot(same.x(i, 0), same.x(i, 1)) - 1.0) <= 1e-12);
  }

  const PlaneSet flipped = apply_shift(src, ShiftSpec{180.0, {0.0, 0.0}, 1.0, 0.0, 1.0}, 7);
  for (std::size_t i = 0; i < flipped.size(); ++i) {
    const double x = flipped.x(i, 0), y = flipped.x(i, 1);
    if (flipped.y[i] == 0) {
      // class 0 now occupies the lower arc that class 1 held
      CHECK(std::abs(std::hypot(x - 1.0, y - 0.5) - 1.0) <= 1e-12);
    } else {
      CHECK(std::abs(std::hypot(x, y) - 1.0) <= 1e-12);
    }
  }
  CHECK_THROWS_AS(apply_shift(src, ShiftSpec{0.0, {0.0, 0.0}, 0.0, 0.0, 1.0}, 1), ConfigError);
  CHECK_THROWS_AS(apply_shift(src, ShiftSpec{0.0, {0.0, 0.0}, 1.0, -1.0, 1.0}, 1), ConfigError);
}

TEST_CASE("shift translates and scales about the pivot") {
  const PlaneSet src = make_two_moons(50, 0.0, 4);
  const PlaneSet plain = apply_shift(src, ShiftSpec{}, 5);
  const PlaneSet moved = apply_shift(src, ShiftSpec{0.0, {0.3, 0.1}, 2.0, 0.0, 1.0}, 5);
  const Point2 o = src.gen.pivot();
  for (std::size_t i = 0; i < plain.size(); ++i) {
    CHECK(moved.x(i, 0) == Catch::Approx(o[0] + 2.0 * (plain.x(i, 0) - o[0]) + 0.3).margin(1e-12));
    CHECK(moved.x(i, 1) == Catch::Approx(o[1] + 2.0 * (plain.x(i, 1) - o[1]) + 0.1).margin(1e-12));
  }
}

TEST_CASE("lifting is an isometry up to the added noise") {
  const Tensor w = embedding_matrix(16, 3);
  const Tensor x = Tensor::from_rows({{0.0, 0.0}, {1.0, 2.0}, {-0.5, 0.3}});
  const Tensor z = lift(x, w, 0.0, 1);
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t b = 0; b < 3; ++b) {
      double dz = 0.0;
      for (std::size_t j = 0; j < 16; ++j) dz += (z(a, j) - z(b, j)) * (z(a, j) - z(b, j));
      const double dx = std::hypot(x(a, 0) - x(b, 0), x(a, 1) - x(b, 1));
      CHECK(std::sqrt(dz) == Catch::Approx(dx).margin(1e-12));
    }
  }
  CHECK_THROWS_AS(embedding_matrix(1, 1), ConfigError);
}

TEST_CASE("benchmark is a pure function of its parameters") {
  BenchmarkSpec spec;
  spec.seed = 4;
  const DomainDataset a = make_benchmark(spec);
  const DomainDataset b = make_benchmark(spec);
  CHECK(a.source_x == b.source_x);
  CHECK(a.target_x == b.target_x);
  CHECK(a.n_source() == 500);
  CHECK(a.n_target() == 500);
  CHECK(a.input_dim() == 16);
  CHECK(a.classes == 2);
  spec.seed = 5;
  CHECK_FALSE(make_benchmark(spec).source_x == a.source_x);
  spec.lift_dim = 0;
  CHECK(make_benchmark(spec).input_dim() == 2);
}

TEST_CASE("batches: floor division, unique ids, reproducible but epoch-dependent order") {
  BenchmarkSpec spec;
  spec.n_source = 100;
  spec.n_target = 100;
  spec.seed = 1;
  const DomainDataset ds = make_benchmark(spec);
  CHECK(batches_per_epoch(ds, 32) == 3);
  CHECK_THROWS_AS(batches_per_epoch(ds, 101), ConfigError);
  CHECK_THROWS_AS(batches_per_epoch(ds, 0), ConfigError);

  const auto e0 = batches(ds, 32, 9, 0);
  const auto e1 = batches(ds, 32, 9, 1);
  REQUIRE(e0.size() == 3);
  std::set<std::uint64_t> seen;
  for (const auto& b : e0) {
    CHECK(b.source_x.rows() == 32);
    CHECK(b.target_x.rows() == 32);
    for (auto id : b.source_ids) {
      CHECK(id < 100);
      CHECK(seen.insert(id).second);
    }
    for (auto id : b.target_ids) {
      CHECK(id >= 100);
      CHECK(seen.insert(id).second);
    }
    for (std::size_t i = 0; i < 32; ++i) {
      const std::size_t row = b.source_ids[i];
      CHECK(b.source_y[i] == ds.source_y[row]);
      for (std::size_t j = 0; j < ds.input_dim(); ++j) CHECK(b.source_x(i, j) == ds.source_x(row, j));
      const std::size_t trow = b.target_ids[i] - 100;
      for (std::size_t j = 0; j < ds.input_dim(); ++j) CHECK(b.target_x(i, j) == ds.target_x(trow, j));
    }
  }
  CHECK(e0[0].source_ids != e1[0].source_ids);
  const auto again = batches(ds, 32, 9, 1);
  CHECK(again[2].source_ids == e1[2].source_ids);
  CHECK(again[2].target_ids == e1[2].target_ids);
}

TEST_CASE("dataset CSV and metadata round trip exactly") {
  BenchmarkSpec spec;
  spec.n_source = 40;
  spec.n_target = 30;
  spec.seed = 2;
  const DomainDataset ds = make_benchmark(spec);
  testing::TempDir dir("csv");
  const auto path = dir.path / "data.csv";
  write_dataset_csv(path, ds);
  CHECK(std::filesystem::exists(dir.path / "data.meta"));
  const DomainDataset back = read_dataset_csv(path);
  CHECK(back.source_x == ds.source_x);
  CHECK(back.target_x == ds.target_x);
  CHECK(back.source_y == ds.source_y);
  CHECK(back.target_y == ds.target_y);
  CHECK(back.classes == ds.classes);
  CHECK(back.metadata == ds.metadata);
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.125}) CHECK(std::stod(format_double(v)) == v);
}

TEST_CASE("a rotated and translated target costs a source-only model at least ten points") {
  double in_domain = 0.0, shifted = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    BenchmarkSpec spec;
    spec.shift = ShiftSpec{45.0, {0.3, 0.1}, 1.0, 0.0, 1.0};
    spec.seed = seed;
    TrainConfig cfg;
    cfg.variant = Variant::source_only;
    cfg.seed = seed;
    cfg.eval_every = cfg.total_steps;
    const RunResult r = run(cfg, make_benchmark(spec));
    in_domain += r.metrics.back().acc_student_source / 5.0;
    shifted += r.metrics.back().acc_student_target / 5.0;
  }
  INFO("in-domain " << in_domain << " shifted " << shifted);
  CHECK(in_domain - shifted >= 0.10);
}
