#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ren/errors.hpp"
#include "ren/random.hpp"
#include "ren/tensor.hpp"

namespace ren {

using Point2 = std::array<double, 2>;

enum class GeneratorKind { two_moons, blobs };

inline std::string to_string(GeneratorKind k) { return k == GeneratorKind::two_moons ? "two_moons" : "blobs"; }

inline GeneratorKind parse_generator(const std::string& name) {
  if (name == "two_moons") return GeneratorKind::two_moons;
  if (name == "blobs") return GeneratorKind::blobs;
  throw ConfigError("unknown generator '" + name + "' (expected two_moons or blobs)");
}

/// Everything needed to draw more samples from the same 2-D process.
struct GeneratorParams {
  GeneratorKind kind = GeneratorKind::two_moons;
  double noise_sigma = 0.0;
  std::vector<Point2> centers;  // blobs only
  double imbalance_ratio = 1.0;

  std::size_t classes() const { return kind == GeneratorKind::two_moons ? 2 : centers.size(); }

  /// Point the shift rotates and scales about.
  Point2 pivot() const {
    if (kind == GeneratorKind::two_moons) return {0.5, 0.25};
    Point2 c{0.0, 0.0};
    for (const auto& p : centers) {
      c[0] += p[0];
      c[1] += p[1];
    }
    c[0] /= static_cast<double>(centers.size());
    c[1] /= static_cast<double>(centers.size());
    return c;
  }
};

/// Labeled 2-D samples plus the recipe that produced them.
struct PlaneSet {
  Tensor x;
  std::vector<int> y;
  GeneratorParams gen;

  std::size_t size() const { return y.size(); }
};

/// Per-class counts summing to n; class k has weight ratio^(-k/(c-1)) so the
/// largest-to-smallest ratio is `ratio`. Remainders go to the lowest classes.
inline std::vector<std::size_t> class_counts(std::size_t n, std::size_t classes, double ratio) {
  if (classes == 0) throw ConfigError("class_counts: need at least one class");
  if (!(ratio > 0.0)) throw ConfigError("class imbalance ratio must be positive");
  std::vector<double> w(classes, 1.0);
  if (classes > 1) {
    for (std::size_t k = 0; k < classes; ++k)
      w[k] = std::pow(ratio, -static_cast<double>(k) / static_cast<double>(classes - 1));
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  std::vector<std::size_t> counts(classes);
  std::size_t used = 0;
  for (std::size_t k = 0; k < classes; ++k) {
    counts[k] = static_cast<std::size_t>(std::floor(static_cast<double>(n) * w[k] / total));
    used += counts[k];
  }
  for (std::size_t k = 0; used < n; k = (k + 1) % classes, ++used) ++counts[k];
  for (std::size_t& c : counts) {
    if (c == 0 && n >= classes) {
      auto big = std::max_element(counts.begin(), counts.end());
      --*big;
      c = 1;
    }
  }
  return counts;
}

inline PlaneSet draw(const GeneratorParams& gen, std::size_t n, std::uint64_t seed) {
  if (gen.noise_sigma < 0.0) throw ConfigError("noise sigma must be >= 0");
  const std::size_t c = gen.classes();
  if (c < 2) throw ConfigError("generator needs at least two classes");
  const auto counts = class_counts(n, c, gen.imbalance_ratio);
  Rng rng(seed);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::normal_distribution<double> noise(0.0, 1.0);
  PlaneSet out{Tensor(n, 2), {}, gen};
  out.y.reserve(n);
  std::size_t row = 0;
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < counts[k]; ++i, ++row) {
      Point2 p{};
      if (gen.kind == GeneratorKind::two_moons) {
        const double t = angle(rng);
        p = k == 0 ? Point2{std::cos(t), std::sin(t)} : Point2{1.0 - std::cos(t), 0.5 - std::sin(t)};
      } else {
        p = gen.centers[k];
      }
      if (gen.noise_sigma > 0.0) {
        p[0] += gen.noise_sigma * noise(rng);
        p[1] += gen.noise_sigma * noise(rng);
      }
      out.x(row, 0) = p[0];
      out.x(row, 1) = p[1];
      out.y.push_back(static_cast<int>(k));
    }
  }
  return out;
}

/// Two interleaving half circles; class 0 on the unit upper half circle.
inline PlaneSet make_two_moons(std::size_t n, double noise_sigma, std::uint64_t seed, double imbalance_ratio = 1.0) {
  if (n < 2) throw ConfigError("make_two_moons: n must be at least 2");
  return draw({GeneratorKind::two_moons, noise_sigma, {}, imbalance_ratio}, n, seed);
}

/// Isotropic Gaussian blobs around the given centers.
inline PlaneSet make_blobs(std::size_t n, std::size_t classes, const std::vector<Point2>& centers, double sigma,
                           std::uint64_t seed, double imbalance_ratio = 1.0) {
  if (classes < 2) throw ConfigError("make_blobs: need at least two classes");
  if (centers.size() != classes) {
    throw ConfigError("make_blobs: " + std::to_string(centers.size()) + " centers for " +
                      std::to_string(classes) + " classes");
  }
  return draw({GeneratorKind::blobs, sigma, centers, imbalance_ratio}, n, seed);
}

struct ShiftSpec {
  double rotation_deg = 0.0;
  Point2 translation{0.0, 0.0};
  double scale = 1.0;
  double noise_sigma = 0.0;
  double class_imbalance_ratio = 1.0;

  void validate() const {
    if (!(scale > 0.0)) throw ConfigError("shift scale must be positive");
    if (!(noise_sigma >= 0.0)) throw ConfigError("shift noise sigma must be >= 0");
    if (!(class_imbalance_ratio > 0.0)) throw ConfigError("class imbalance ratio must be positive");
  }
};

/// Fresh draw from the source's process, rotated and scaled about the process
/// pivot, translated, then re-noised. Labels are kept for evaluation only.
/// `n` defaults to the source size.
inline PlaneSet apply_shift(const PlaneSet& source, const ShiftSpec& spec, std::uint64_t seed,
                            std::optional<std::size_t> n = std::nullopt) {
  spec.validate();
  GeneratorParams gen = source.gen;
  gen.imbalance_ratio = spec.class_imbalance_ratio;
  PlaneSet out = draw(gen, n.value_or(source.size()), derive_seed(seed, {0}));
  const double th = spec.rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  const Point2 o = gen.pivot();
  Rng rng(derive_seed(seed, {1}));
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double dx = out.x(i, 0) - o[0], dy = out.x(i, 1) - o[1];
    double px = o[0] + spec.scale * (c * dx - s * dy) + spec.translation[0];
    double py = o[1] + spec.scale * (s * dx + c * dy) + spec.translation[1];
    if (spec.noise_sigma > 0.0) {
      px += spec.noise_sigma * noise(rng);
      py += spec.noise_sigma * noise(rng);
    }
    out.x(i, 0) = px;
    out.x(i, 1) = py;
  }
  return out;
}

/// Fixed isometric embedding of the plane into `dim` dimensions: two
/// orthonormal random directions, seeded.
inline Tensor embedding_matrix(std::size_t dim, std::uint64_t seed) {
  if (dim < 2) throw ConfigError("lift dimension must be at least 2");
  Rng rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  Tensor w(2, dim);
  for (double& v : w.values()) v = n01(rng);
  auto r0 = w.row_span(0), r1 = w.row_span(1);
  double n0 = 0.0;
  for (double v : r0) n0 += v * v;
  n0 = std::sqrt(n0);
  for (double& v : r0) v /= n0;
  double d = 0.0;
  for (std::size_t j = 0; j < dim; ++j) d += r0[j] * r1[j];
  for (std::size_t j = 0; j < dim; ++j) r1[j] -= d * r0[j];
  double n1 = 0.0;
  for (double v : r1) n1 += v * v;
  n1 = std::sqrt(n1);
  for (double& v : r1) v /= n1;
  return w;
}

inline Tensor lift(const Tensor& x2, const Tensor& embedding, double noise_sigma, std::uint64_t seed) {
  Tensor out = kernels::matmul(x2, embedding);
  if (noise_sigma > 0.0) {
    Rng rng(seed);
    std::normal_distribution<double> noise(0.0, noise_sigma);
    for (double& v : out.values()) v += noise(rng);
  }
  return out;
}

using Metadata = std::map<std::string, std::string>;

/// Labeled source samples and target samples. target_y is held out: only the
/// evaluation code reads it; training batches never carry it.
struct DomainDataset {
  Tensor source_x;
  std::vector<int> source_y;
  Tensor target_x;
  std::vector<int> target_y;
  std::size_t classes = 0;
  Metadata metadata;

  std::size_t n_source() const { return source_x.rows(); }
  std::size_t n_target() const { return target_x.rows(); }
  std::size_t input_dim() const { return source_x.cols(); }

  void validate() const {
    if (source_y.size() != source_x.rows() || target_y.size() != target_x.rows()) {
      throw FormatError("dataset: label count does not match sample count");
    }
    if (source_x.cols() != target_x.cols()) throw FormatError("dataset: source and target widths differ");
    std::vector<bool> seen(classes, false);
    for (int y : source_y) {
      if (y < 0 || static_cast<std::size_t>(y) >= classes) throw FormatError("dataset: label out of range");
      seen[static_cast<std::size_t>(y)] = true;
    }
    for (int y : target_y) {
      if (y < 0 || static_cast<std::size_t>(y) >= classes) throw FormatError("dataset: label out of range");
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
      throw FormatError("dataset: a class is missing from the source labels");
    }
  }
};

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

/// The standard synthetic shift benchmark and its knobs.
struct BenchmarkSpec {
  GeneratorKind generator = GeneratorKind::two_moons;
  std::size_t n_source = 500;
  std::size_t n_target = 500;
  double noise_sigma = 0.15;
  std::size_t classes = 3;  // blobs only
  double blob_radius = 2.0;
  ShiftSpec shift{45.0, {0.0, 0.0}, 1.0, 0.0, 1.0};
  std::size_t lift_dim = 16;  // 0 keeps the plane
  double lift_noise = 0.1;
  std::uint64_t seed = 0;
};

inline std::vector<Point2> circle_centers(std::size_t classes, double radius) {
  std::vector<Point2> c;
  for (std::size_t k = 0; k < classes; ++k) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(classes);
    c.push_back({radius * std::cos(a), radius * std::sin(a)});
  }
  return c;
}

inline DomainDataset make_benchmark(const BenchmarkSpec& spec) {
  if (spec.n_source < 2 || spec.n_target < 2) throw ConfigError("benchmark needs at least 2 samples per domain");
  PlaneSet source = spec.generator == GeneratorKind::two_moons
                        ? make_two_moons(spec.n_source, spec.noise_sigma, derive_seed(spec.seed, {10}))
                        : make_blobs(spec.n_source, spec.classes, circle_centers(spec.classes, spec.blob_radius),
                                     spec.noise_sigma, derive_seed(spec.seed, {10}));
  PlaneSet target = apply_shift(source, spec.shift, derive_seed(spec.seed, {11}), spec.n_target);

  DomainDataset ds;
  ds.classes = source.gen.classes();
  ds.source_y = source.y;
  ds.target_y = target.y;
  if (spec.lift_dim == 0) {
    ds.source_x = source.x;
    ds.target_x = target.x;
  } else {
    const Tensor w = embedding_matrix(spec.lift_dim, derive_seed(spec.seed, {13}));
    ds.source_x = lift(source.x, w, spec.lift_noise, derive_seed(spec.seed, {14}));
    ds.target_x = lift(target.x, w, spec.lift_noise, derive_seed(spec.seed, {15}));
  }
  ds.metadata = {
      {"generator", to_string(spec.generator)},
      {"n_source", std::to_string(spec.n_source)},
      {"n_target", std::to_string(spec.n_target)},
      {"noise_sigma", format_double(spec.noise_sigma)},
      {"classes", std::to_string(ds.classes)},
      {"rotation_deg", format_double(spec.shift.rotation_deg)},
      {"translation_x", format_double(spec.shift.translation[0])},
      {"translation_y", format_double(spec.shift.translation[1])},
      {"scale", format_double(spec.shift.scale)},
      {"shift_noise_sigma", format_double(spec.shift.noise_sigma)},
      {"class_imbalance_ratio", format_double(spec.shift.class_imbalance_ratio)},
      {"lift_dim", std::to_string(spec.lift_dim)},
      {"lift_noise", format_double(spec.lift_noise)},
      {"input_dim", std::to_string(ds.input_dim())},
      {"seed", std::to_string(spec.seed)},
  };
  ds.validate();
  return ds;
}

/// One training step's worth of data. Target labels are not part of it.
struct Batch {
  Tensor source_x;
  std::vector<int> source_y;
  std::vector<std::uint64_t> source_ids;
  Tensor target_x;
  std::vector<std::uint64_t> target_ids;
};

/// Stable per-sample key: source rows keep their index, target rows are offset by n_source.
inline std::uint64_t sample_id(const DomainDataset& ds, bool target, std::size_t index) {
  return target ? ds.n_source() + index : index;
}

inline std::size_t batches_per_epoch(const DomainDataset& ds, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (batch_size > std::min(ds.n_source(), ds.n_target())) {
    throw ConfigError("batch size " + std::to_string(batch_size) + " exceeds the smaller domain (" +
                      std::to_string(std::min(ds.n_source(), ds.n_target())) + " samples)");
  }
  return std::min(ds.n_source(), ds.n_target()) / batch_size;
}

/// Batches for one epoch: independent seeded shuffles per domain, short tail dropped.
inline std::vector<Batch> batches(const DomainDataset& ds, std::size_t batch_size, std::uint64_t seed,
                                  std::size_t epoch) {
  const std::size_t count = batches_per_epoch(ds, batch_size);
  auto shuffled = [&](std::size_t n, std::uint64_t stream) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(derive_seed(seed, {epoch, stream}));
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
  };
  const auto src = shuffled(ds.n_source(), 0);
  const auto tgt = shuffled(ds.n_target(), 1);
  std::vector<Batch> out;
  out.reserve(count);
  for (std::size_t b = 0; b < count; ++b) {
    std::span<const std::size_t> s(src.data() + b * batch_size, batch_size);
    std::span<const std::size_t> t(tgt.data() + b * batch_size, batch_size);
    Batch batch;
    batch.source_x = kernels::gather_rows(ds.source_x, s);
    batch.target_x = kernels::gather_rows(ds.target_x, t);
    for (std::size_t i : s) {
      batch.source_y.push_back(ds.source_y[i]);
      batch.source_ids.push_back(sample_id(ds, false, i));
    }
    for (std::size_t i : t) batch.target_ids.push_back(sample_id(ds, true, i));
    out.push_back(std::move(batch));
  }
  return out;
}

// ---- CSV export / import ----------------------------------------------------

inline void write_metadata(const std::filesystem::path& path, const Metadata& meta) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  for (const auto& [k, v] : meta) os << k << '=' << v << '\n';
  if (!os) throw FormatError("write failed: " + path.string());
}

inline Metadata read_metadata(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path.string());
  Metadata meta;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("metadata: expected key=value, got '" + line + "'");
    meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return meta;
}

inline std::filesystem::path metadata_path(const std::filesystem::path& csv) {
  auto p = csv;
  p.replace_extension(".meta");
  return p;
}

/// Columns: id, split, label, x_0 .. x_{in-1}. Metadata goes to a sibling `.meta` file.
inline void write_dataset_csv(const std::filesystem::path& path, const DomainDataset& ds) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os << "id,split,label";
  for (std::size_t j = 0; j < ds.input_dim(); ++j) os << ",x_" << j;
  os << '\n';
  auto rows = [&](const Tensor& x, const std::vector<int>& y, bool target) {
    for (std::size_t i = 0; i < x.rows(); ++i) {
      os << sample_id(ds, target, i) << ',' << (target ? "target" : "source") << ',' << y[i];
      for (double v : x.row_span(i)) os << ',' << format_double(v);
      os << '\n';
    }
  };
  rows(ds.source_x, ds.source_y, false);
  rows(ds.target_x, ds.target_y, true);
  if (!os) throw FormatError("write failed: " + path.string());
  write_metadata(metadata_path(path), ds.metadata);
}

inline DomainDataset read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw FormatError("dataset csv: empty file");
  std::size_t width = 0;
  {
    std::stringstream hs(line);
    std::string cell;
    std::vector<std::string> cols;
    while (std::getline(hs, cell, ',')) cols.push_back(cell);
    if (cols.size() < 4 || cols[0] != "id" || cols[1] != "split" || cols[2] != "label") {
      throw FormatError("dataset csv: bad header '" + line + "'");
    }
    width = cols.size() - 3;
  }
  std::vector<double> sx, tx;
  DomainDataset ds;
  int max_label = -1;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string id, split, label, cell;
    std::getline(ls, id, ',');
    std::getline(ls, split, ',');
    std::getline(ls, label, ',');
    std::vector<double> row;
    while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    if (row.size() != width) throw FormatError("dataset csv: ragged row '" + line + "'");
    const int y = std::stoi(label);
    max_label = std::max(max_label, y);
    if (split == "source") {
      sx.insert(sx.end(), row.begin(), row.end());
      ds.source_y.push_back(y);
    } else if (split == "target") {
      tx.insert(tx.end(), row.begin(), row.end());
      ds.target_y.push_back(y);
    } else {
      throw FormatError("dataset csv: unknown split '" + split + "'");
    }
  }
  ds.source_x = Tensor(ds.source_y.size(), width, std::move(sx));
  ds.target_x = Tensor(ds.target_y.size(), width, std::move(tx));
  const auto meta_file = metadata_path(path);
  if (std::filesystem::exists(meta_file)) ds.metadata = read_metadata(meta_file);
  ds.classes = ds.metadata.count("classes") ? std::stoul(ds.metadata.at("classes"))
                                            : static_cast<std::size_t>(max_label + 1);
  ds.validate();
  return ds;
}

}  // namespace ren
