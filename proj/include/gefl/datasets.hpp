#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "gefl/tensor.hpp"

namespace gefl {

struct LabeledDataset {
  Tensor inputs;            // [N x d]
  std::vector<int> labels;  // length N, each in [0, class_count)
  std::size_t class_count = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t feature_dim() const { return inputs.cols(); }

  // Throws DomainError if labels and inputs disagree or a label is out of range.
  void validate() const;

  LabeledDataset subset(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> class_counts() const;

  bool operator==(const LabeledDataset&) const = default;
};

// Gaussian blobs: class c is centred at radius 3 on the unit circle of the
// first two coordinates (angle 2 pi c / C), other coordinates zero.
LabeledDataset make_blobs(std::size_t classes, std::size_t dim, std::size_t n_per_class, double spread,
                          std::uint64_t seed);

// Centre of class c used by make_blobs.
std::vector<double> blob_center(std::size_t c, std::size_t classes, std::size_t dim);

// Procedural side x side glyph images with pixel values in [0, 1].
LabeledDataset make_glyphs(std::size_t classes, std::size_t side, std::size_t n_per_class, double noise,
                           int shift_max, std::uint64_t seed);

// The fixed binary stroke template for class c (side * side pixels).
std::vector<double> glyph_template(std::size_t c, std::size_t side);

struct PartitionPlan {
  std::size_t client_count = 1;
  double fraction = 1.0;  // share of the pool used, in (0, 1]
  std::uint64_t seed = 0;
};

// Indices into the pool, one list per client. A stratified subsample of
// floor(fraction * N) items is shuffled and dealt into K equal shards of
// floor(fraction * N / K) items.
std::vector<std::vector<std::size_t>> partition_indices(const LabeledDataset& ds, const PartitionPlan& plan);

std::vector<LabeledDataset> partition_iid(const LabeledDataset& ds, const PartitionPlan& plan);

// Stratified split; per class, round(val_ratio * n_c) items go to validation.
std::pair<LabeledDataset, LabeledDataset> split_train_val(const LabeledDataset& ds, double val_ratio,
                                                          std::uint64_t seed);

// CSV with header `label,x0,x1,...`.
void write_csv(std::ostream& out, const LabeledDataset& ds);
LabeledDataset read_csv(std::istream& in, std::size_t class_count = 0);

}  // namespace gefl
