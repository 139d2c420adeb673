#include "gefl/datasets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

#include "gefl/errors.hpp"
#include "gefl/rng.hpp"

namespace gefl {

namespace {

constexpr std::uint64_t kBlobStream = 0xB10B;
constexpr std::uint64_t kGlyphStream = 0x6179;
constexpr std::uint64_t kPartitionStream = 0x9A27;
constexpr std::uint64_t kSplitStream = 0x5B17;

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void draw_line(std::vector<double>& img, std::size_t side, int r0, int c0, int r1, int c1) {
  const int steps = std::max(std::abs(r1 - r0), std::abs(c1 - c0));
  for (int s = 0; s <= steps; ++s) {
    const int r = steps == 0 ? r0 : r0 + (r1 - r0) * s / steps;
    const int c = steps == 0 ? c0 : c0 + (c1 - c0) * s / steps;
    img[static_cast<std::size_t>(r) * side + static_cast<std::size_t>(c)] = 1.0;
  }
}

}  // namespace

void LabeledDataset::validate() const {
  if (inputs.rows() != labels.size())
    throw DomainError("dataset has " + std::to_string(inputs.rows()) + " rows but " + std::to_string(labels.size()) +
                      " labels");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= class_count)
      throw DomainError("label " + std::to_string(y) + " outside [0, " + std::to_string(class_count) + ")");
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  LabeledDataset out;
  out.class_count = class_count;
  out.inputs = select_rows(inputs, indices);
  out.labels.reserve(indices.size());
  for (auto i : indices) out.labels.push_back(labels[i]);
  return out;
}

std::vector<std::size_t> LabeledDataset::class_counts() const {
  std::vector<std::size_t> counts(class_count, 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

std::vector<double> blob_center(std::size_t c, std::size_t classes, std::size_t dim) {
  std::vector<double> center(dim, 0.0);
  const double angle = 2.0 * M_PI * static_cast<double>(c) / static_cast<double>(classes);
  center[0] = 3.0 * std::cos(angle);
  center[1] = 3.0 * std::sin(angle);
  return center;
}

LabeledDataset make_blobs(std::size_t classes, std::size_t dim, std::size_t n_per_class, double spread,
                          std::uint64_t seed) {
  if (classes < 2 || dim < 2 || n_per_class < 1) throw DomainError("make_blobs needs C >= 2, d >= 2, n >= 1");
  if (!(spread > 0.0) || !std::isfinite(spread)) throw DomainError("make_blobs needs a positive finite spread");
  Rng rng(derive_seed(seed, {kBlobStream}));
  LabeledDataset ds;
  ds.class_count = classes;
  ds.inputs = Tensor::matrix(classes * n_per_class, dim);
  ds.labels.reserve(classes * n_per_class);
  std::size_t r = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const auto center = blob_center(c, classes, dim);
    for (std::size_t i = 0; i < n_per_class; ++i, ++r) {
      auto row = ds.inputs.row(r);
      for (std::size_t j = 0; j < dim; ++j) row[j] = center[j] + spread * rng.normal();
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  return ds;
}

std::vector<double> glyph_template(std::size_t c, std::size_t side) {
  if (side < 6 || side > 16) throw DomainError("glyph side must lie in [6, 16]");
  if (c >= 10) throw DomainError("at most 10 glyph classes");
  std::vector<double> img(side * side, 0.0);
  const int lo = 1;
  const int hi = static_cast<int>(side) - 2;
  const int mid = static_cast<int>(side) / 2;
  switch (c) {
    case 0:  // |
      draw_line(img, side, lo, mid, hi, mid);
      break;
    case 1:  // -
      draw_line(img, side, mid, lo, mid, hi);
      break;
    case 2:  // backslash
      draw_line(img, side, lo, lo, hi, hi);
      break;
    case 3:  // slash
      draw_line(img, side, lo, hi, hi, lo);
      break;
    case 4:  // box
      draw_line(img, side, lo, lo, lo, hi);
      draw_line(img, side, hi, lo, hi, hi);
      draw_line(img, side, lo, lo, hi, lo);
      draw_line(img, side, lo, hi, hi, hi);
      break;
    case 5:  // +
      draw_line(img, side, lo, mid, hi, mid);
      draw_line(img, side, mid, lo, mid, hi);
      break;
    case 6:  // x
      draw_line(img, side, lo, lo, hi, hi);
      draw_line(img, side, lo, hi, hi, lo);
      break;
    case 7:  // L
      draw_line(img, side, lo, lo, hi, lo);
      draw_line(img, side, hi, lo, hi, hi);
      break;
    case 8:  // T
      draw_line(img, side, lo, lo, lo, hi);
      draw_line(img, side, lo, mid, hi, mid);
      break;
    case 9:  // ||
      draw_line(img, side, lo, lo, hi, lo);
      draw_line(img, side, lo, hi, hi, hi);
      break;
  }
  return img;
}

LabeledDataset make_glyphs(std::size_t classes, std::size_t side, std::size_t n_per_class, double noise,
                           int shift_max, std::uint64_t seed) {
  if (classes < 2 || classes > 10) throw DomainError("make_glyphs needs 2 <= C <= 10");
  if (side < 6 || side > 16) throw DomainError("glyph side must lie in [6, 16]");
  if (n_per_class < 1) throw DomainError("make_glyphs needs n_per_class >= 1");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw DomainError("glyph noise must be finite and non-negative");
  if (shift_max < 0 || shift_max >= static_cast<int>(side) / 2) throw DomainError("glyph shift_max out of range");
  Rng rng(derive_seed(seed, {kGlyphStream}));
  const std::size_t d = side * side;
  LabeledDataset ds;
  ds.class_count = classes;
  ds.inputs = Tensor::matrix(classes * n_per_class, d);
  ds.labels.reserve(classes * n_per_class);
  const auto span = static_cast<std::size_t>(2 * shift_max + 1);
  const int s = static_cast<int>(side);
  std::size_t r = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const auto tmpl = glyph_template(c, side);
    for (std::size_t i = 0; i < n_per_class; ++i, ++r) {
      const int dy = static_cast<int>(rng.below(span)) - shift_max;
      const int dx = static_cast<int>(rng.below(span)) - shift_max;
      auto row = ds.inputs.row(r);
      for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
          const int sy = y - dy;
          const int sx = x - dx;
          double v = (sy >= 0 && sy < s && sx >= 0 && sx < s) ? tmpl[static_cast<std::size_t>(sy * s + sx)] : 0.0;
          if (noise > 0.0) v += noise * rng.normal();
          row[static_cast<std::size_t>(y * s + x)] = std::clamp(v, 0.0, 1.0);
        }
      }
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  return ds;
}

std::vector<std::vector<std::size_t>> partition_indices(const LabeledDataset& ds, const PartitionPlan& plan) {
  ds.validate();
  if (plan.client_count == 0) throw DomainError("partition needs at least one client");
  if (!(plan.fraction > 0.0 && plan.fraction <= 1.0)) throw DomainError("partition fraction must lie in (0, 1]");
  const std::size_t n = ds.size();
  const auto total = static_cast<std::size_t>(std::floor(plan.fraction * static_cast<double>(n)));
  if (total < plan.client_count * ds.class_count)
    throw DomainError("pool too small: fraction * N = " + std::to_string(total) + " < K * C = " +
                      std::to_string(plan.client_count * ds.class_count));

  Rng rng(derive_seed(plan.seed, {kPartitionStream}));
  std::vector<std::vector<std::size_t>> by_class(ds.class_count);
  for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

  // Largest-remainder allocation of `total` across classes, ties to the lower class.
  std::vector<std::size_t> take(ds.class_count);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t allocated = 0;
  for (std::size_t c = 0; c < ds.class_count; ++c) {
    const double exact = static_cast<double>(by_class[c].size()) * static_cast<double>(total) / static_cast<double>(n);
    take[c] = static_cast<std::size_t>(std::floor(exact));
    allocated += take[c];
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; allocated < total; ++i, ++allocated) ++take[remainders[i % remainders.size()].second];

  std::vector<std::size_t> pool;
  pool.reserve(total);
  for (std::size_t c = 0; c < ds.class_count; ++c) {
    rng.shuffle(std::span<std::size_t>(by_class[c]));
    pool.insert(pool.end(), by_class[c].begin(), by_class[c].begin() + static_cast<std::ptrdiff_t>(take[c]));
  }
  rng.shuffle(std::span<std::size_t>(pool));

  const std::size_t shard = total / plan.client_count;
  std::vector<std::vector<std::size_t>> shards(plan.client_count);
  for (std::size_t k = 0; k < plan.client_count; ++k)
    shards[k].assign(pool.begin() + static_cast<std::ptrdiff_t>(k * shard),
                     pool.begin() + static_cast<std::ptrdiff_t>((k + 1) * shard));
  return shards;
}

std::vector<LabeledDataset> partition_iid(const LabeledDataset& ds, const PartitionPlan& plan) {
  std::vector<LabeledDataset> out;
  for (const auto& idx : partition_indices(ds, plan)) out.push_back(ds.subset(idx));
  return out;
}

std::pair<LabeledDataset, LabeledDataset> split_train_val(const LabeledDataset& ds, double val_ratio,
                                                          std::uint64_t seed) {
  ds.validate();
  if (!(val_ratio > 0.0 && val_ratio < 1.0)) throw DomainError("val_ratio must lie in (0, 1)");
  Rng rng(derive_seed(seed, {kSplitStream}));
  std::vector<std::vector<std::size_t>> by_class(ds.class_count);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  std::vector<std::size_t> train, val;
  for (auto& idx : by_class) {
    rng.shuffle(std::span<std::size_t>(idx));
    const auto n_val = static_cast<std::size_t>(std::llround(val_ratio * static_cast<double>(idx.size())));
    val.insert(val.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    train.insert(train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  }
  if (train.empty() || val.empty()) throw DomainError("split leaves an empty side");
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {ds.subset(train), ds.subset(val)};
}

void write_csv(std::ostream& out, const LabeledDataset& ds) {
  out << "label";
  for (std::size_t j = 0; j < ds.feature_dim(); ++j) out << ",x" << j;
  out << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.labels[i];
    for (double v : ds.inputs.row(i)) out << ',' << format_double(v);
    out << '\n';
  }
}

LabeledDataset read_csv(std::istream& in, std::size_t class_count) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("label", 0) != 0) throw DomainError("CSV must start with a label header");
  const auto dim = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  if (dim == 0) throw DomainError("CSV has no feature columns");
  std::vector<double> values;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != dim + 1)
      throw DomainError("CSV line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) + " cells");
    try {
      labels.push_back(std::stoi(cells[0]));
      for (std::size_t j = 1; j <= dim; ++j) values.push_back(std::stod(cells[j]));
    } catch (const std::logic_error&) {
      throw DomainError("CSV line " + std::to_string(line_no) + " is not numeric");
    }
  }
  if (labels.empty()) throw DomainError("CSV has no rows");
  LabeledDataset ds;
  ds.inputs = Tensor::matrix(labels.size(), dim, std::move(values));
  ds.labels = std::move(labels);
  const int max_label = *std::max_element(ds.labels.begin(), ds.labels.end());
  ds.class_count = class_count ? class_count : static_cast<std::size_t>(std::max(max_label, 0) + 1);
  ds.validate();
  return ds;
}

}  // namespace gefl
