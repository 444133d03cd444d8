#pragma once

#include <cstdint>
#include <istream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "nsk/concurrency.hpp"
#include "nsk/tensor.hpp"

namespace nsk::data {

struct Table {
  TensorPtr features;  // [m×k], non-label columns in header order
  TensorPtr labels;    // [m]
  std::vector<std::string> feature_names;
};

// Numeric CSV with a header row.
Table parse_csv(const PoolPtr& pool, std::istream& in, const std::string& label_column,
                const std::string& source = "csv");
Table load_csv(const PoolPtr& pool, const std::string& path, const std::string& label_column);

struct Batch {
  std::size_t index = 0;
  TensorPtr features;
  TensorPtr labels;
};

// Mini-batch iteration over a table. Each epoch draws a fresh seeded
// permutation when shuffling; the final partial batch is kept. With more than
// one worker, batches of an epoch are produced by a prefetch queue and may
// arrive out of index order.
class Dataset {
 public:
  Dataset(Table table, std::size_t batch_size, bool shuffle, std::uint64_t seed,
          std::size_t workers = 1, std::size_t capacity = 2);
  ~Dataset();

  std::size_t rows() const noexcept { return table_.labels->numel(); }
  std::size_t batch_size() const noexcept { return batch_size_; }
  std::size_t num_batches() const noexcept { return (rows() + batch_size_ - 1) / batch_size_; }
  std::size_t epoch() const noexcept { return epoch_; }
  const Table& table() const noexcept { return table_; }

  void start_epoch();
  // std::nullopt marks the end of the epoch; repeated calls keep returning it.
  std::optional<Batch> next_batch();
  // Rows [index·batch, ...) of the current epoch's order.
  Batch make_batch(std::size_t index) const;
  const std::vector<std::size_t>& order() const noexcept { return order_; }

 private:
  Table table_;
  std::size_t batch_size_;
  bool shuffle_;
  std::uint64_t seed_;
  std::size_t workers_;
  std::size_t capacity_;
  std::size_t epoch_ = 0;
  bool started_ = false;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
  std::unique_ptr<PrefetchQueue<Batch>> queue_;
  std::mutex mu_;
};

}  // namespace nsk::data
