#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "molgnn/csv.hpp"
#include "molgnn/featurize.hpp"
#include "molgnn/training.hpp"

namespace molgnn {

struct TableRow {
  std::size_t line = 0;  // 1-based CSV record number, header excluded
  std::string smiles;
  Vector labels;  // 0 where masked
  Vector mask;    // 1 where a label is present
};

struct RejectedRow {
  std::size_t line = 0;
  std::string reason;
};

struct Table {
  std::vector<std::string> label_columns;
  std::vector<TableRow> rows;
  std::vector<RejectedRow> rejected;
};

/// Reads (SMILES, labels) rows. Empty label cells are masked out; rows with
/// an empty SMILES cell or a non-numeric label are rejected and reported.
Table read_table(const std::filesystem::path& path, const std::string& smiles_column,
                 const std::vector<std::string>& label_columns);
Table table_from_csv(const CsvTable& csv, const std::string& smiles_column,
                     const std::vector<std::string>& label_columns);

struct LoadedDataset {
  LabeledGraphs data;
  std::vector<std::size_t> rows;  // table row index of every graph
  std::vector<RejectedRow> rejected;
};

/// Encodes every row. Strict mode throws ParseFailures naming each bad row;
/// lenient mode drops them and lists them in `rejected`.
LoadedDataset encode_table(const Table& table, const FeatureConfig& cfg, bool strict = true);

// ------------------------------------------------------------------ records

constexpr char kRecordMagic[4] = {'M', 'G', 'R', 'F'};
constexpr std::uint16_t kRecordVersion = 1;
constexpr std::size_t kRecordHeaderSize = 4 + 2 + 32 + 8;

enum RecordFlags : std::uint8_t { kHasEdgeFeature = 1, kHasEdgeWeight = 2 };

struct GraphRecord {
  GraphTensor graph;
  Vector labels;
  Vector mask;
};

/// Serialized record payload (without its u32 length prefix).
std::string encode_record(const GraphRecord& record, const FeatureConfig& cfg);

/// Writes the header and one length-prefixed record per graph. `labels` and
/// `mask` may be empty matrices (no labels stored).
void write_records(const std::filesystem::path& path, const std::vector<GraphTensor>& graphs,
                   const Matrix& labels, const Matrix& mask, const FeatureConfig& cfg);

/// Streaming reader: holds one record in memory at a time.
class RecordReader {
 public:
  /// Validates magic, version and feature digest (DigestMismatch).
  RecordReader(const std::filesystem::path& path, const FeatureConfig& cfg);

  std::uint64_t count() const { return count_; }
  std::uint64_t consumed() const { return consumed_; }
  /// Byte offset of the next record.
  std::uint64_t offset() const { return offset_; }

  /// Next record, or nullopt after `count()` records. Throws TruncatedRecord
  /// with the offset of the record start when the file ends early.
  std::optional<GraphRecord> next();

 private:
  std::ifstream in_;
  FeatureConfig cfg_;
  std::uint64_t count_ = 0;
  std::uint64_t consumed_ = 0;
  std::uint64_t offset_ = 0;
  std::string buffer_;
};

/// Reads a whole file into a labeled dataset (labels empty when none stored).
LabeledGraphs read_records(const std::filesystem::path& path, const FeatureConfig& cfg);

// ------------------------------------------------------------------ splits

enum class SplitStrategy { Random, Stratified };

/// Partition sizes by largest remainder (ties go to the earlier partition).
std::vector<std::size_t> partition_sizes(std::size_t n, const std::vector<double>& fractions);

/// Disjoint, exhaustive partitions of [0, n) in shuffled order.
std::vector<std::vector<std::size_t>> split(std::size_t n, const std::vector<double>& fractions, std::uint64_t seed);

/// Stratified split: every class is partitioned by largest remainder on its own.
std::vector<std::vector<std::size_t>> split_stratified(const std::vector<int>& classes,
                                                       const std::vector<double>& fractions, std::uint64_t seed);

}  // namespace molgnn
