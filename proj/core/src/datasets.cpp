#include "convexcert/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "convexcert/random.hpp"

namespace convexcert {

Dataset Dataset::subset(std::span<const std::size_t> columns) const {
  Dataset out;
  out.name = name;
  out.classes = classes;
  out.features = Matrix(dim(), columns.size());
  out.labels.reserve(columns.size());
  for (std::size_t j = 0; j < columns.size(); ++j) {
    for (std::size_t i = 0; i < dim(); ++i) out.features(i, j) = features(i, columns[j]);
    out.labels.push_back(labels.at(columns[j]));
  }
  return out;
}

Matrix Dataset::one_hot(std::span<const std::size_t> columns) const {
  Matrix y(classes, columns.size());
  for (std::size_t j = 0; j < columns.size(); ++j) y(labels.at(columns[j]), j) = 1.0;
  return y;
}

Dataset make_blobs(std::size_t count, std::size_t classes, std::size_t dim, double spread, std::uint64_t seed) {
  if (count == 0 || classes < 2 || dim == 0) throw std::invalid_argument("blobs: empty configuration");
  Rng centers_rng = Rng::stream(seed, "blobs.centers");
  Rng rng = Rng::stream(seed, "blobs.samples");
  Matrix centers(dim, classes);
  for (double& c : centers.data()) c = centers_rng.uniform(-4.0, 4.0);

  Dataset d;
  d.name = "blobs";
  d.classes = classes;
  d.features = Matrix(dim, count);
  for (std::size_t j = 0; j < count; ++j) {
    const std::size_t label = j % classes;
    for (std::size_t i = 0; i < dim; ++i) d.features(i, j) = centers(i, label) + spread * rng.normal();
    d.labels.push_back(label);
  }
  return d;
}

Dataset make_two_moons(std::size_t count, double noise, std::uint64_t seed) {
  if (count == 0) throw std::invalid_argument("two moons: empty configuration");
  Rng rng = Rng::stream(seed, "moons");
  Dataset d;
  d.name = "two_moons";
  d.classes = 2;
  d.features = Matrix(2, count);
  for (std::size_t j = 0; j < count; ++j) {
    const std::size_t label = j % 2;
    const double t = std::numbers::pi * rng.uniform();
    double x = std::cos(t);
    double y = std::sin(t);
    if (label == 1) {
      x = 1.0 - x;
      y = 0.5 - y;
    }
    d.features(0, j) = x + noise * rng.normal();
    d.features(1, j) = y + noise * rng.normal();
    d.labels.push_back(label);
  }
  return d;
}

Dataset make_parity(std::size_t length, std::size_t count, std::uint64_t seed) {
  if (length == 0 || count == 0) throw std::invalid_argument("parity: empty configuration");
  Rng rng = Rng::stream(seed, "parity");
  Dataset d;
  d.name = "parity";
  d.classes = 2;
  d.features = Matrix(length, count);
  for (std::size_t j = 0; j < count; ++j) {
    std::size_t ones = 0;
    for (std::size_t t = 0; t < length; ++t) {
      const bool bit = (rng.next() >> 63) != 0;
      d.features(t, j) = bit ? 1.0 : -1.0;
      ones += bit;
    }
    d.labels.push_back(ones % 2);
  }
  return d;
}

Dataset load_digits_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open digits file '" + path.string() + "'");
  std::vector<double> pixels;
  Dataset d;
  d.name = "digits8x8";
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        numeric = false;
        break;
      }
    }
    if (!numeric) {
      if (line_no == 1) continue;
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": non-numeric cell");
    }
    if (row.size() != 65) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected 65 columns, got " +
                               std::to_string(row.size()));
    }
    const double label = row.back();
    if (label < 0 || label > 9 || label != std::floor(label)) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": label must be 0..9");
    }
    for (std::size_t i = 0; i < 64; ++i) pixels.push_back(row[i] / 16.0);
    d.labels.push_back(static_cast<std::size_t>(label));
  }
  if (d.labels.empty()) throw std::runtime_error("digits file '" + path.string() + "' holds no samples");
  d.classes = 10;
  d.features = Matrix(64, d.labels.size());
  for (std::size_t j = 0; j < d.labels.size(); ++j)
    for (std::size_t i = 0; i < 64; ++i) d.features(i, j) = pixels[j * 64 + i];
  return d;
}

DatasetSplit split_dataset(const Dataset& d, double test_fraction, std::uint64_t seed) {
  if (d.size() < 2) throw std::invalid_argument("dataset '" + d.name + "' is too small to split");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw std::invalid_argument("test fraction must lie in (0, 1)");
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = Rng::stream(seed, "split");
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  auto n_test = static_cast<std::size_t>(std::round(test_fraction * static_cast<double>(d.size())));
  n_test = std::clamp<std::size_t>(n_test, 1, d.size() - 1);
  std::vector<std::size_t> test(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {d.subset(train), d.subset(test)};
}

}  // namespace convexcert
