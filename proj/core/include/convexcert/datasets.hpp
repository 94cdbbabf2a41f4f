#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "convexcert/tensor.hpp"

namespace convexcert {

/// Labelled samples; features are stored one sample per column.
struct Dataset {
  std::string name;
  Matrix features;  // dim x count
  std::vector<std::size_t> labels;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.rows(); }

  Dataset subset(std::span<const std::size_t> columns) const;
  /// classes x |columns| indicator matrix of the labels.
  Matrix one_hot(std::span<const std::size_t> columns) const;
};

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

/// Isotropic Gaussian clusters around centers drawn from [-4, 4]^dim.
Dataset make_blobs(std::size_t count, std::size_t classes, std::size_t dim, double spread, std::uint64_t seed);

/// Two interleaved half circles with Gaussian noise, 2-D, 2 classes.
Dataset make_two_moons(std::size_t count, double noise, std::uint64_t seed);

/// Random +-1 sequences of the given length; label is the parity of the +1 count.
Dataset make_parity(std::size_t length, std::size_t count, std::uint64_t seed);

/// 8x8 digit images: 64 integer pixel columns (0..16) then the label, one
/// sample per line; a non-numeric first line is treated as a header. Pixels
/// are scaled to [0, 1].
Dataset load_digits_csv(const std::filesystem::path& path);

/// Shuffled split; `test_fraction` of the samples go to the test set.
DatasetSplit split_dataset(const Dataset& d, double test_fraction, std::uint64_t seed);

}  // namespace convexcert
