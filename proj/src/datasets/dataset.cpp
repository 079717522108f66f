#include "continuum/datasets/dataset.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string_view>

#include "continuum/common/error.hpp"
#include "continuum/common/rng.hpp"

namespace continuum::data {
namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return cells;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
bool parse_number(std::string_view cell, T& out) {
  cell = trim(cell);
  if (cell.empty()) return false;
  if (cell.front() == '+') cell.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out);
  return ec == std::errc{} && ptr == cell.data() + cell.size();
}

std::string where(std::size_t row, std::size_t col) {
  return "row " + std::to_string(row) + ", column " + std::to_string(col);
}

}  // namespace

void Dataset::validate() const {
  if (labels.empty()) throw std::invalid_argument("dataset '" + name + "' is empty");
  if (features.rows() != labels.size()) {
    throw DimensionError("dataset '" + name + "' has mismatched feature rows and labels");
  }
  for (Label l : labels) {
    if (l >= num_classes) throw std::invalid_argument("dataset '" + name + "' label out of range");
  }
  if (!features.all_finite()) {
    throw std::invalid_argument("dataset '" + name + "' has non-finite features");
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices, std::string subset_name) const {
  Dataset out;
  out.features = features.gather_rows(indices);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(labels.at(i));
  out.num_classes = num_classes;
  out.name = std::move(subset_name);
  return out;
}

Dataset synth_blobs(std::size_t n, std::size_t d, std::size_t num_classes, double separation,
                    std::uint64_t seed) {
  if (num_classes < 2) throw std::invalid_argument("synth_blobs needs at least 2 classes");
  if (n < num_classes) throw std::invalid_argument("synth_blobs needs n >= num_classes");
  if (d < 1) throw std::invalid_argument("synth_blobs needs d >= 1");
  if (!(separation >= 0.0) || !std::isfinite(separation)) {
    throw std::invalid_argument("synth_blobs separation must be finite and >= 0");
  }

  Rng dir_rng(mix_seed(seed, 0));
  std::vector<std::vector<double>> dirs;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::vector<double> v(d);
    double norm = 0.0;
    // Redraw on the (measure-zero) chance of a degenerate vector.
    do {
      for (double& x : v) x = dir_rng.normal();
      if (c < d) {
        for (const auto& u : dirs) {
          const double dot = std::inner_product(v.begin(), v.end(), u.begin(), 0.0);
          for (std::size_t k = 0; k < d; ++k) v[k] -= dot * u[k];
        }
      }
      norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    } while (norm < 1e-9);
    for (double& x : v) x /= norm;
    dirs.push_back(std::move(v));
  }

  Rng noise(mix_seed(seed, 1));
  Dataset ds;
  ds.features = nn::Matrix(n, d);
  ds.labels.resize(n);
  ds.num_classes = num_classes;
  ds.name = "blobs";
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<Label>(i % num_classes);
    ds.labels[i] = c;
    auto row = ds.features.row(i);
    for (std::size_t k = 0; k < d; ++k) row[k] = separation * dirs[c][k] + noise.normal();
  }
  return ds;
}

Dataset load_csv(const std::filesystem::path& path, std::size_t label_column,
                 std::size_t num_classes, CsvOptions options) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());

  std::vector<double> values;
  std::vector<Label> labels;
  std::size_t width = 0;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (row == 1 && options.has_header) continue;
    if (trim(line).empty()) continue;
    const auto cells = split_commas(line);
    if (width == 0) {
      width = cells.size();
      if (label_column >= width) {
        throw std::invalid_argument("label column " + std::to_string(label_column + 1) +
                                    " beyond the " + std::to_string(width) + " columns of " +
                                    path.string());
      }
    } else if (cells.size() != width) {
      throw std::invalid_argument(path.string() + ": row " + std::to_string(row) + " has " +
                                  std::to_string(cells.size()) + " columns, expected " +
                                  std::to_string(width));
    }
    for (std::size_t col = 0; col < cells.size(); ++col) {
      if (col == label_column) {
        long long label = 0;
        if (!parse_number(cells[col], label)) {
          throw std::invalid_argument(path.string() + ": label is not an integer at " +
                                      where(row, col + 1));
        }
        if (label < 0 || static_cast<unsigned long long>(label) >= num_classes) {
          throw std::invalid_argument(path.string() + ": label " + std::to_string(label) +
                                      " out of range at " + where(row, col + 1));
        }
        labels.push_back(static_cast<Label>(label));
        continue;
      }
      double v = 0.0;
      if (!parse_number(cells[col], v) || !std::isfinite(v)) {
        throw std::invalid_argument(path.string() + ": cannot parse '" +
                                    std::string(trim(cells[col])) + "' at " + where(row, col + 1));
      }
      values.push_back(v);
    }
  }
  if (labels.empty()) throw std::invalid_argument(path.string() + ": no data rows");

  Dataset ds;
  ds.features = nn::Matrix(labels.size(), width - 1, std::move(values));
  ds.labels = std::move(labels);
  ds.num_classes = num_classes;
  ds.name = path.stem().string();
  return ds;
}

void write_csv(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  char buf[64];
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (double v : dataset.features.row(i)) {
      const auto res = std::to_chars(buf, buf + sizeof buf, v);
      out.write(buf, res.ptr - buf);
      out.put(',');
    }
    out << dataset.labels[i] << '\n';
  }
}

PartitionPlan make_partition_plan(std::size_t n, std::size_t num_parts, std::uint64_t seed) {
  if (num_parts < 1) throw std::invalid_argument("partition needs at least one part");
  if (num_parts > n) {
    throw std::invalid_argument("cannot split " + std::to_string(n) + " samples into " +
                                std::to_string(num_parts) + " parts");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);

  PartitionPlan plan;
  plan.num_parts = num_parts;
  plan.seed = seed;
  plan.assignment.resize(n);
  plan.members.resize(num_parts);
  for (std::size_t pos = 0; pos < n; ++pos) {
    const std::size_t part = pos % num_parts;
    plan.assignment[order[pos]] = part;
    plan.members[part].push_back(order[pos]);
  }
  return plan;
}

std::vector<Dataset> partition(const Dataset& dataset, std::size_t num_parts, std::uint64_t seed) {
  const PartitionPlan plan = make_partition_plan(dataset.size(), num_parts, seed);
  std::vector<Dataset> parts;
  parts.reserve(num_parts);
  for (std::size_t p = 0; p < num_parts; ++p) {
    parts.push_back(dataset.subset(plan.members[p], dataset.name + "/part" + std::to_string(p)));
  }
  return parts;
}

nn::Batch next_round_batch(const Dataset& part, std::size_t round_index,
                           std::size_t samples_per_round) {
  if (samples_per_round < 1) throw std::invalid_argument("samples_per_round must be >= 1");
  const std::size_t n = part.size();
  if (n == 0) throw std::invalid_argument("cannot draw a batch from an empty part");
  std::vector<std::size_t> idx(samples_per_round);
  // (round * s) mod n without overflowing for large round indices.
  const std::size_t start = static_cast<std::size_t>(
      (static_cast<unsigned __int128>(round_index) * samples_per_round) % n);
  for (std::size_t k = 0; k < samples_per_round; ++k) idx[k] = (start + k) % n;
  Dataset batch = part.subset(idx, part.name);
  return nn::Batch(std::move(batch.features), std::move(batch.labels));
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& dataset, double test_fraction,
                                             std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("test fraction must lie in (0, 1)");
  }
  const std::size_t n = dataset.size();
  const auto test_n = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  if (test_n == 0 || test_n >= n) throw std::invalid_argument("split leaves an empty side");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  const std::span<const std::size_t> all(order);
  return {dataset.subset(all.first(n - test_n), dataset.name + "/train"),
          dataset.subset(all.subspan(n - test_n), dataset.name + "/test")};
}

}  // namespace continuum::data
