#include "nsk/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace nsk::data {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

Table parse_csv(const PoolPtr& pool, std::istream& in, const std::string& label_column,
                const std::string& source) {
  std::string line;
  int line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split(line);
      break;
    }
  }
  if (header.empty()) throw LoadError(source + ": missing header row");
  auto label_it = std::find(header.begin(), header.end(), label_column);
  if (label_it == header.end()) {
    throw LoadError(source + ": no column named '" + label_column + "'");
  }
  const std::size_t label_index = static_cast<std::size_t>(label_it - header.begin());
  const std::size_t k = header.size() - 1;

  std::vector<float> features, labels;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split(line);
    if (cells.size() != header.size()) {
      throw LoadError(source + ": row " + std::to_string(line_no) + " has " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(header.size()));
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      double v = 0;
      const std::string& cell = cells[c];
      auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || res.ec != std::errc() || res.ptr != cell.data() + cell.size() ||
          !std::isfinite(v)) {
        throw LoadError(source + ": row " + std::to_string(line_no) + ", column " +
                        std::to_string(c + 1) + " ('" + header[c] + "'): non-numeric cell '" +
                        cell + "'");
      }
      if (c == label_index) {
        labels.push_back(static_cast<float>(v));
      } else {
        features.push_back(static_cast<float>(v));
      }
    }
  }
  if (labels.empty()) throw LoadError(source + ": no data rows");

  Table t;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c != label_index) t.feature_names.push_back(header[c]);
  }
  t.features = make_tensor(pool, {labels.size(), k}, features);
  t.labels = make_tensor(pool, {labels.size()}, labels);
  return t;
}

Table load_csv(const PoolPtr& pool, const std::string& path, const std::string& label_column) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open '" + path + "'");
  return parse_csv(pool, in, label_column, path);
}

Dataset::Dataset(Table table, std::size_t batch_size, bool shuffle, std::uint64_t seed,
                 std::size_t workers, std::size_t capacity)
    : table_(std::move(table)),
      batch_size_(batch_size),
      shuffle_(shuffle),
      seed_(seed),
      workers_(std::max<std::size_t>(workers, 1)),
      capacity_(std::max<std::size_t>(capacity, 1)) {
  if (batch_size_ == 0) throw RuntimeError("batch size must be at least 1");
  if (table_.features->rows() != table_.labels->numel()) {
    throw ShapeError("feature rows and label count differ");
  }
}

Dataset::~Dataset() { queue_.reset(); }

void Dataset::start_epoch() {
  std::lock_guard lock(mu_);
  queue_.reset();
  ++epoch_;
  order_.resize(rows());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (shuffle_) {
    std::mt19937_64 rng(seed_ ^ (0x9e3779b97f4a7c15ULL * epoch_));
    std::shuffle(order_.begin(), order_.end(), rng);
  }
  cursor_ = 0;
  started_ = true;
  if (workers_ > 1) {
    queue_ = std::make_unique<PrefetchQueue<Batch>>(
        [this](std::size_t i) { return make_batch(i); }, num_batches(), workers_, capacity_);
  }
}

std::optional<Batch> Dataset::next_batch() {
  {
    std::unique_lock lock(mu_);
    if (!started_) {
      lock.unlock();
      start_epoch();
    }
  }
  std::lock_guard lock(mu_);
  if (queue_) {
    auto item = queue_->next();
    if (!item) return std::nullopt;
    return std::move(item->value);
  }
  if (cursor_ >= num_batches()) return std::nullopt;
  return make_batch(cursor_++);
}

Batch Dataset::make_batch(std::size_t index) const {
  const std::size_t begin = index * batch_size_;
  if (begin >= rows()) throw RuntimeError("batch index " + std::to_string(index) + " out of range");
  const std::size_t end = std::min(rows(), begin + batch_size_);
  const std::size_t n = end - begin, k = table_.features->cols();
  Batch b;
  b.index = index;
  b.features = make_tensor(table_.features->pool(), {n, k});
  b.labels = make_tensor(table_.labels->pool(), {n});
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t src = order_[begin + r];
    for (std::size_t c = 0; c < k; ++c) b.features->at(r, c) = table_.features->at(src, c);
    b.labels->data()[r] = table_.labels->data()[src];
  }
  return b;
}

}  // namespace nsk::data
