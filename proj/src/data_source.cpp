#include "subbag/data_source.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>

#include "subbag/error.hpp"

namespace subbag {

std::string to_string(Format format) {
  switch (format) {
    case Format::csv: return "csv";
    case Format::f64_matrix: return "f64-matrix";
    case Format::memory: return "memory";
  }
  return "unknown";
}

Format parse_format(const std::string& text) {
  if (text == "csv") return Format::csv;
  if (text == "f64" || text == "f64-matrix" || text == "sbm") return Format::f64_matrix;
  throw Error(ErrorKind::usage, "unknown format '" + text + "' (expected csv or f64-matrix)");
}

Format format_from_path(const std::string& path) {
  const std::string suffix = ".csv";
  if (path.size() >= suffix.size() &&
      std::equal(suffix.rbegin(), suffix.rend(), path.rbegin(),
                 [](char a, char b) { return a == std::tolower(static_cast<unsigned char>(b)); })) {
    return Format::csv;
  }
  return Format::f64_matrix;
}

std::size_t batch_size_for_budget(std::uint64_t mem_budget_bytes, std::uint64_t k_n,
                                  std::size_t n_cols) {
  const std::uint64_t per_block = std::max<std::uint64_t>(1, k_n * n_cols * sizeof(double));
  return static_cast<std::size_t>(std::max<std::uint64_t>(1, mem_budget_bytes / per_block));
}

void RecordSource::check_plan(const SamplingPlan& plan, std::size_t first, std::size_t last,
                              std::size_t batch_size) const {
  require(batch_size >= 1, "batch_size must be at least 1");
  require(first <= last && last <= plan.size(), "subsample id range out of bounds");
  if (plan.n_total() > n_rows_) {
    throw Error(ErrorKind::usage, "plan draws row indices from [0, " +
                                      std::to_string(plan.n_total()) + ") but the source has " +
                                      std::to_string(n_rows_) + " rows: index out of range");
  }
}

void extract_blocks(const RecordSource& source, const SamplingPlan& plan, std::size_t batch_size,
                    const BlockSink& sink, ExtractionStats* stats) {
  source.extract(plan, 0, plan.size(), batch_size, sink, stats);
}

namespace {

std::uint64_t load_le64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

void store_le64(unsigned char* p, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    p[i] = static_cast<unsigned char>(v & 0xff);
    v >>= 8;
  }
}

std::string trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return std::string(s);
}

bool is_index(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

// Maps a ColumnMap onto source column indices; -1 marks the intercept.
struct ResolvedColumns {
  std::vector<int> slots;
  std::vector<std::string> names;
};

ResolvedColumns resolve_columns(const ColumnMap& map, const std::vector<std::string>& header,
                                std::size_t n_source_cols) {
  auto lookup = [&](const std::string& ref) -> int {
    if (!header.empty()) {
      auto it = std::find(header.begin(), header.end(), ref);
      if (it != header.end()) return static_cast<int>(it - header.begin());
    }
    if (is_index(ref)) {
      const auto index = std::stoull(ref);
      if (index < n_source_cols) return static_cast<int>(index);
    }
    throw Error(ErrorKind::data, "column '" + ref + "' is not present in the source (" +
                                     std::to_string(n_source_cols) + " columns)");
  };
  auto label = [&](int index) {
    return header.empty() ? "col" + std::to_string(index) : header[index];
  };

  ResolvedColumns out;
  if (map.empty()) {
    for (std::size_t c = 0; c < n_source_cols; ++c) {
      out.slots.push_back(static_cast<int>(c));
      out.names.push_back(label(static_cast<int>(c)));
    }
    return out;
  }
  if (map.response) {
    const int c = lookup(*map.response);
    out.slots.push_back(c);
    out.names.push_back(label(c));
  }
  if (map.intercept) {
    out.slots.push_back(-1);
    out.names.push_back("(intercept)");
  }
  for (const auto* group : {&map.features, &map.raw}) {
    for (const auto& ref : *group) {
      const int c = lookup(ref);
      out.slots.push_back(c);
      out.names.push_back(label(c));
    }
  }
  return out;
}

std::vector<std::string> split_header(const std::string& line) {
  std::vector<std::string> names;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    names.push_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return names;
}

bool read_data_line(std::istream& in, std::string& line) {
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") != std::string::npos) return true;
  }
  return false;
}

class CsvSource final : public RecordSource {
 public:
  CsvSource(const std::string& path, std::vector<std::string> header, std::uint64_t n_rows,
            ResolvedColumns columns)
      : RecordSource(path, Format::csv, n_rows, columns.slots.size(), columns.names),
        header_(std::move(header)),
        slots_(std::move(columns.slots)),
        needed_(header_.size(), 0) {
    for (int c : slots_) {
      if (c >= 0) needed_[c] = 1;
    }
  }

  void extract(const SamplingPlan& plan, std::size_t first, std::size_t last,
               std::size_t batch_size, const BlockSink& sink,
               ExtractionStats* stats) const override {
    check_plan(plan, first, last, batch_size);
    const std::size_t k = plan.k_n();
    const std::size_t p = n_cols();
    // Row indices of a block are parked in the tail of its own value buffer
    // until consumed; row i only overwrites tail entries at positions <= i.
    const std::size_t tail = k * p - k;
    IndexList scratch;
    std::string line;
    std::vector<double> parsed(header_.size());
    std::vector<double> record(p);

    for (std::size_t start = first; start < last; start += batch_size) {
      const std::size_t count = std::min(batch_size, last - start);
      std::vector<RecordBlock> blocks(count);
      std::vector<std::uint32_t> pos(count, 0);
      std::vector<std::uint32_t> heap;
      heap.reserve(count);
      for (std::size_t s = 0; s < count; ++s) {
        auto& block = blocks[s];
        block.subsample_id = start + s;
        block.rows = k;
        block.cols = p;
        block.values.resize(k * p);
        plan.subsample(start + s, scratch);
        for (std::size_t i = 0; i < k; ++i) {
          block.values[tail + i] = std::bit_cast<double>(scratch[i]);
        }
        heap.push_back(static_cast<std::uint32_t>(s));
      }
      auto next_row = [&](std::uint32_t s) {
        return std::bit_cast<std::uint64_t>(blocks[s].values[tail + pos[s]]);
      };
      auto later = [&](std::uint32_t a, std::uint32_t b) {
        const auto ra = next_row(a);
        const auto rb = next_row(b);
        return ra > rb || (ra == rb && a > b);
      };
      std::make_heap(heap.begin(), heap.end(), later);

      if (stats) {
        std::size_t bytes = pos.capacity() * sizeof(std::uint32_t) +
                            heap.capacity() * sizeof(std::uint32_t);
        for (const auto& block : blocks) bytes += block.values.capacity() * sizeof(double);
        stats->peak_buffer_bytes = std::max(stats->peak_buffer_bytes, bytes);
      }

      std::ifstream in = open_stream();
      std::uint64_t data_row = 0;
      bool have_row = false;
      while (!heap.empty()) {
        const std::uint64_t target = next_row(heap.front());
        while (!have_row || data_row < target) {
          if (!read_data_line(in, line)) {
            throw Error(ErrorKind::data, path() + ": unexpected end of file before data row " +
                                             std::to_string(target));
          }
          if (have_row) ++data_row;
          have_row = true;
        }
        parse_record(line, data_row, parsed, record);
        while (!heap.empty() && next_row(heap.front()) == target) {
          std::pop_heap(heap.begin(), heap.end(), later);
          const std::uint32_t s = heap.back();
          heap.pop_back();
          std::copy(record.begin(), record.end(), blocks[s].values.begin() + pos[s] * p);
          if (++pos[s] < k) {
            heap.push_back(s);
            std::push_heap(heap.begin(), heap.end(), later);
          }
        }
      }
      if (stats) {
        ++stats->passes;
        stats->io_buffer_bytes =
            std::max(stats->io_buffer_bytes, line.capacity() + (parsed.capacity() + record.capacity()) * sizeof(double));
      }
      for (auto& block : blocks) sink(std::move(block));
    }
  }

  void scan(const RowSink& sink) const override {
    std::ifstream in = open_stream();
    std::string line;
    std::vector<double> parsed(header_.size());
    std::vector<double> record(n_cols());
    std::uint64_t row = 0;
    while (read_data_line(in, line)) {
      parse_record(line, row, parsed, record);
      sink(row, record);
      ++row;
    }
  }

 private:
  std::ifstream open_stream() const {
    std::ifstream in(path());
    if (!in) throw Error(ErrorKind::data, "cannot open '" + path() + "'");
    std::string header;
    std::getline(in, header);
    return in;
  }

  void parse_record(const std::string& line, std::uint64_t row, std::vector<double>& parsed,
                    std::vector<double>& record) const {
    std::size_t field = 0;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      const std::size_t end = comma == std::string::npos ? line.size() : comma;
      if (field < needed_.size() && needed_[field]) {
        std::string_view text(line.data() + start, end - start);
        while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
        while (!text.empty() && (text.back() == ' ' || text.back() == '\t')) text.remove_suffix(1);
        if (!text.empty() && text.front() == '+') text.remove_prefix(1);
        double value = 0.0;
        const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
        if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
          throw Error(ErrorKind::data, path() + ": row " + std::to_string(row) + ", column '" +
                                           header_[field] + "' (index " + std::to_string(field) +
                                           "): non-numeric value '" +
                                           std::string(line.substr(start, end - start)) + "'");
        }
        if (!std::isfinite(value)) {
          throw Error(ErrorKind::data, path() + ": row " + std::to_string(row) + ", column '" +
                                           header_[field] + "' (index " + std::to_string(field) +
                                           "): non-finite value");
        }
        parsed[field] = value;
      }
      ++field;
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (field != header_.size()) {
      throw Error(ErrorKind::data, path() + ": row " + std::to_string(row) + " has " +
                                       std::to_string(field) + " fields, header has " +
                                       std::to_string(header_.size()));
    }
    for (std::size_t s = 0; s < slots_.size(); ++s) {
      record[s] = slots_[s] < 0 ? 1.0 : parsed[slots_[s]];
    }
  }

  std::vector<std::string> header_;
  std::vector<int> slots_;
  std::vector<char> needed_;
};

class MatrixFileSource final : public RecordSource {
 public:
  MatrixFileSource(const std::string& path, std::uint64_t n_rows, std::size_t file_cols,
                   ResolvedColumns columns)
      : RecordSource(path, Format::f64_matrix, n_rows, columns.slots.size(), columns.names),
        file_cols_(file_cols),
        slots_(std::move(columns.slots)) {}

  void extract(const SamplingPlan& plan, std::size_t first, std::size_t last,
               std::size_t batch_size, const BlockSink& sink,
               ExtractionStats* stats) const override {
    check_plan(plan, first, last, batch_size);
    const std::size_t k = plan.k_n();
    const std::size_t p = n_cols();
    std::ifstream in = open_stream();
    IndexList rows;
    std::vector<unsigned char> raw(file_cols_ * sizeof(double));
    for (std::size_t j = first; j < last; ++j) {
      plan.subsample(j, rows);
      RecordBlock block;
      block.subsample_id = j;
      block.rows = k;
      block.cols = p;
      block.values.resize(k * p);
      for (std::size_t i = 0; i < k; ++i) {
        read_row(in, rows[i], raw, std::span<double>(block.values).subspan(i * p, p));
      }
      if (stats) {
        stats->peak_buffer_bytes =
            std::max(stats->peak_buffer_bytes, block.values.capacity() * sizeof(double));
        stats->io_buffer_bytes = std::max(stats->io_buffer_bytes, raw.capacity());
      }
      sink(std::move(block));
    }
  }

  void scan(const RowSink& sink) const override {
    std::ifstream in = open_stream();
    std::vector<unsigned char> raw(file_cols_ * sizeof(double));
    std::vector<double> record(n_cols());
    for (std::uint64_t row = 0; row < n_rows(); ++row) {
      read_row(in, row, raw, record);
      sink(row, record);
    }
  }

 private:
  std::ifstream open_stream() const {
    std::ifstream in(path(), std::ios::binary);
    if (!in) throw Error(ErrorKind::data, "cannot open '" + path() + "'");
    return in;
  }

  void read_row(std::ifstream& in, std::uint64_t row, std::vector<unsigned char>& raw,
                std::span<double> out) const {
    const std::uint64_t offset = kMatrixHeaderBytes + row * file_cols_ * sizeof(double);
    in.seekg(static_cast<std::streamoff>(offset));
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) {
      throw Error(ErrorKind::data, path() + ": read failed at row " + std::to_string(row) +
                                       " (byte offset " + std::to_string(offset) + ")");
    }
    for (std::size_t s = 0; s < slots_.size(); ++s) {
      if (slots_[s] < 0) {
        out[s] = 1.0;
        continue;
      }
      const double value = std::bit_cast<double>(load_le64(raw.data() + slots_[s] * sizeof(double)));
      if (!std::isfinite(value)) {
        throw Error(ErrorKind::data, path() + ": row " + std::to_string(row) + ", column " +
                                         std::to_string(slots_[s]) + ": non-finite value");
      }
      out[s] = value;
    }
  }

  std::size_t file_cols_;
  std::vector<int> slots_;
};

std::unique_ptr<RecordSource> open_csv(const std::string& path, const ColumnMap& columns) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::data, "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::data, path + ": missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split_header(line);
  if (std::any_of(header.begin(), header.end(), [](const auto& h) { return h.empty(); })) {
    throw Error(ErrorKind::data, path + ": malformed header (empty column name)");
  }
  std::uint64_t n_rows = 0;
  while (read_data_line(in, line)) ++n_rows;
  if (n_rows == 0) throw Error(ErrorKind::data, path + ": no data rows");
  auto resolved = resolve_columns(columns, header, header.size());
  return std::make_unique<CsvSource>(path, std::move(header), n_rows, std::move(resolved));
}

std::unique_ptr<RecordSource> open_matrix(const std::string& path, const ColumnMap& columns) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw Error(ErrorKind::data, "cannot open '" + path + "'");
  const auto file_size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);
  std::array<unsigned char, kMatrixHeaderBytes> header{};
  in.read(reinterpret_cast<char*>(header.data()), header.size());
  if (!in || std::string(header.begin(), header.begin() + 4) != "SBM1") {
    throw Error(ErrorKind::data, path + ": malformed header (expected magic SBM1)");
  }
  const std::uint64_t n_rows = load_le64(header.data() + 4);
  const std::uint64_t n_cols = load_le64(header.data() + 12);
  if (n_rows == 0 || n_cols == 0) {
    throw Error(ErrorKind::data, path + ": malformed header (zero rows or columns)");
  }
  if (n_cols > std::numeric_limits<std::uint64_t>::max() / 8 / n_rows ||
      file_size != kMatrixHeaderBytes + n_rows * n_cols * 8) {
    throw Error(ErrorKind::data, path + ": payload size does not match header dimensions");
  }
  auto resolved = resolve_columns(columns, {}, n_cols);
  return std::make_unique<MatrixFileSource>(path, n_rows, n_cols, std::move(resolved));
}

}  // namespace

std::unique_ptr<RecordSource> open_source(const std::string& path, Format format,
                                          const ColumnMap& columns) {
  switch (format) {
    case Format::csv: return open_csv(path, columns);
    case Format::f64_matrix: return open_matrix(path, columns);
    case Format::memory: break;
  }
  throw Error(ErrorKind::usage, "memory sources are constructed directly, not opened");
}

MemorySource::MemorySource(std::vector<double> values, std::uint64_t n_rows, std::size_t n_cols)
    : RecordSource("<memory>", Format::memory, n_rows, n_cols, {}),
      values_(std::make_shared<const std::vector<double>>(std::move(values))) {
  require(n_rows >= 1 && n_cols >= 1, "memory source needs at least one row and column");
  require(values_->size() == n_rows * n_cols, "memory source size does not match dimensions");
  for (std::size_t i = 0; i < values_->size(); ++i) {
    if (!std::isfinite((*values_)[i])) {
      throw Error(ErrorKind::data, "row " + std::to_string(i / n_cols) + ", column " +
                                       std::to_string(i % n_cols) + ": non-finite value");
    }
  }
}

void MemorySource::extract(const SamplingPlan& plan, std::size_t first, std::size_t last,
                           std::size_t batch_size, const BlockSink& sink,
                           ExtractionStats* stats) const {
  check_plan(plan, first, last, batch_size);
  const std::size_t k = plan.k_n();
  const std::size_t p = n_cols();
  IndexList rows;
  for (std::size_t j = first; j < last; ++j) {
    plan.subsample(j, rows);
    RecordBlock block;
    block.subsample_id = j;
    block.rows = k;
    block.cols = p;
    block.values.resize(k * p);
    for (std::size_t i = 0; i < k; ++i) {
      std::copy_n(values_->begin() + rows[i] * p, p, block.values.begin() + i * p);
    }
    if (stats) {
      stats->peak_buffer_bytes =
          std::max(stats->peak_buffer_bytes, block.values.capacity() * sizeof(double));
    }
    sink(std::move(block));
  }
}

void MemorySource::scan(const RowSink& sink) const {
  const std::size_t p = n_cols();
  for (std::uint64_t row = 0; row < n_rows(); ++row) {
    sink(row, std::span<const double>(*values_).subspan(row * p, p));
  }
}

struct MatrixWriter::Impl {
  std::string path;
  std::ofstream out;
  std::uint64_t n_rows = 0;
  std::size_t n_cols = 0;
  std::uint64_t written = 0;
  std::vector<unsigned char> buffer;
};

MatrixWriter::MatrixWriter(const std::string& path, std::uint64_t n_rows, std::size_t n_cols)
    : impl_(std::make_unique<Impl>()) {
  impl_->path = path;
  impl_->n_rows = n_rows;
  impl_->n_cols = n_cols;
  impl_->out.open(path, std::ios::binary | std::ios::trunc);
  if (!impl_->out) throw Error(ErrorKind::data, "cannot create '" + path + "'");
  std::array<unsigned char, kMatrixHeaderBytes> header{'S', 'B', 'M', '1'};
  store_le64(header.data() + 4, n_rows);
  store_le64(header.data() + 12, n_cols);
  impl_->out.write(reinterpret_cast<const char*>(header.data()), header.size());
  impl_->buffer.resize(n_cols * sizeof(double));
}

MatrixWriter::~MatrixWriter() = default;

void MatrixWriter::write_row(std::span<const double> row) {
  require(row.size() == impl_->n_cols, "row width does not match the matrix file");
  require(impl_->written < impl_->n_rows, "more rows written than declared");
  for (std::size_t c = 0; c < row.size(); ++c) {
    store_le64(impl_->buffer.data() + c * sizeof(double), std::bit_cast<std::uint64_t>(row[c]));
  }
  impl_->out.write(reinterpret_cast<const char*>(impl_->buffer.data()),
                   static_cast<std::streamsize>(impl_->buffer.size()));
  ++impl_->written;
}

void MatrixWriter::close() {
  if (impl_->written != impl_->n_rows) {
    throw Error(ErrorKind::data, impl_->path + ": wrote " + std::to_string(impl_->written) +
                                     " rows, header declares " + std::to_string(impl_->n_rows));
  }
  impl_->out.flush();
  if (!impl_->out) throw Error(ErrorKind::data, impl_->path + ": write failed");
  impl_->out.close();
}

void write_matrix_file(const std::string& path, std::uint64_t n_rows, std::size_t n_cols,
                       std::span<const double> values) {
  require(values.size() == n_rows * n_cols, "matrix size does not match dimensions");
  MatrixWriter writer(path, n_rows, n_cols);
  for (std::uint64_t r = 0; r < n_rows; ++r) writer.write_row(values.subspan(r * n_cols, n_cols));
  writer.close();
}

std::uint64_t convert_csv_to_matrix(const std::string& csv_path, const ColumnMap& columns,
                                    const std::string& out_path) {
  const auto source = open_source(csv_path, Format::csv, columns);
  MatrixWriter writer(out_path, source->n_rows(), source->n_cols());
  source->scan([&](std::uint64_t, std::span<const double> record) { writer.write_row(record); });
  writer.close();
  return source->n_rows();
}

}  // namespace subbag
