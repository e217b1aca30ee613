#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "subbag/sampling.hpp"

namespace subbag {

enum class Format { csv, f64_matrix, memory };

std::string to_string(Format format);
Format parse_format(const std::string& text);
/// ".csv" -> csv, anything else -> f64-matrix.
Format format_from_path(const std::string& path);

/// Byte offset of the payload in an f64-matrix file ("SBM1" + two u64).
inline constexpr std::size_t kMatrixHeaderBytes = 20;

/// Selects and orders the columns of a record. Columns are named by header
/// name (csv) or zero-based index. The record layout is
///   [response] [1.0 if intercept] [features...] [raw...]
/// An empty map selects every column as raw.
struct ColumnMap {
  std::optional<std::string> response;
  bool intercept = false;
  std::vector<std::string> features;
  std::vector<std::string> raw;

  bool empty() const { return !response && !intercept && features.empty() && raw.empty(); }
};

/// Read-only view of k rows of p values, row-major.
struct BlockView {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::span<const double> values;

  std::span<const double> row(std::size_t i) const { return values.subspan(i * cols, cols); }
};

/// The rows of one subsample, in sorted row-index order.
struct RecordBlock {
  std::size_t subsample_id = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(values).subspan(i * cols, cols);
  }
  BlockView view() const { return BlockView{rows, cols, values}; }
};

struct ExtractionStats {
  std::uint64_t passes = 0;              // full or partial sequential passes over a csv
  std::size_t peak_buffer_bytes = 0;     // block values plus merge bookkeeping
  std::size_t io_buffer_bytes = 0;       // fixed per-handle buffers (line, row scratch)
};

using BlockSink = std::function<void(RecordBlock&&)>;
using RowSink = std::function<void(std::uint64_t row_index, std::span<const double> record)>;

/// Out-of-core view of an N x p numeric dataset. Immutable after open; every
/// extract/scan call opens its own handle, so concurrent calls are safe.
class RecordSource {
 public:
  virtual ~RecordSource() = default;

  std::uint64_t n_rows() const noexcept { return n_rows_; }
  std::size_t n_cols() const noexcept { return n_cols_; }
  Format format() const noexcept { return format_; }
  const std::string& path() const noexcept { return path_; }
  /// Record column labels after the column map is applied.
  const std::vector<std::string>& column_names() const noexcept { return names_; }

  /// Emits one block per subsample id in [first, last), in id order. For csv
  /// the ids are processed batch_size at a time, one sequential pass per batch.
  virtual void extract(const SamplingPlan& plan, std::size_t first, std::size_t last,
                       std::size_t batch_size, const BlockSink& sink,
                       ExtractionStats* stats = nullptr) const = 0;

  /// Streams every record once, in row order.
  virtual void scan(const RowSink& sink) const = 0;

 protected:
  RecordSource(std::string path, Format format, std::uint64_t n_rows, std::size_t n_cols,
               std::vector<std::string> names)
      : path_(std::move(path)),
        format_(format),
        n_rows_(n_rows),
        n_cols_(n_cols),
        names_(std::move(names)) {}

  void check_plan(const SamplingPlan& plan, std::size_t first, std::size_t last,
                  std::size_t batch_size) const;

 private:
  std::string path_;
  Format format_;
  std::uint64_t n_rows_;
  std::size_t n_cols_;
  std::vector<std::string> names_;
};

std::unique_ptr<RecordSource> open_source(const std::string& path, Format format,
                                          const ColumnMap& columns = {});

/// In-memory dataset (row-major), used by the simulation harness and tests.
class MemorySource final : public RecordSource {
 public:
  MemorySource(std::vector<double> values, std::uint64_t n_rows, std::size_t n_cols);

  void extract(const SamplingPlan& plan, std::size_t first, std::size_t last,
               std::size_t batch_size, const BlockSink& sink,
               ExtractionStats* stats = nullptr) const override;
  void scan(const RowSink& sink) const override;

  BlockView view() const { return BlockView{n_rows(), n_cols(), *values_}; }
  const std::vector<double>& values() const { return *values_; }

 private:
  std::shared_ptr<const std::vector<double>> values_;
};

/// Every subsample of the plan, in plan order.
void extract_blocks(const RecordSource& source, const SamplingPlan& plan, std::size_t batch_size,
                    const BlockSink& sink, ExtractionStats* stats = nullptr);

/// max(1, floor(mem_budget / (k_n * p * 8))).
std::size_t batch_size_for_budget(std::uint64_t mem_budget_bytes, std::uint64_t k_n,
                                  std::size_t n_cols);

/// Streaming writer for the f64-matrix format.
class MatrixWriter {
 public:
  MatrixWriter(const std::string& path, std::uint64_t n_rows, std::size_t n_cols);
  ~MatrixWriter();
  MatrixWriter(const MatrixWriter&) = delete;
  MatrixWriter& operator=(const MatrixWriter&) = delete;

  void write_row(std::span<const double> row);
  /// Flushes and verifies that exactly n_rows rows were written.
  void close();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

void write_matrix_file(const std::string& path, std::uint64_t n_rows, std::size_t n_cols,
                       std::span<const double> values);

/// Converts the selected columns of a csv file into an f64-matrix file.
/// Returns the number of rows written.
std::uint64_t convert_csv_to_matrix(const std::string& csv_path, const ColumnMap& columns,
                                    const std::string& out_path);

}  // namespace subbag
