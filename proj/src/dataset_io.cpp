#include "molgnn/dataset_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <numeric>

#include "molgnn/binary_io.hpp"
#include "molgnn/random.hpp"

namespace molgnn {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

bool parse_double(const std::string& text, double& out) {
  const char* begin = text.data();
  const char* end = begin + text.size();
  if (begin != end && *begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace

// ---------------------------------------------------------------- tables

Table table_from_csv(const CsvTable& csv, const std::string& smiles_column,
                     const std::vector<std::string>& label_columns) {
  const int smiles_at = csv.column(smiles_column);
  if (smiles_at < 0) throw Error(ErrorCode::MissingColumn, "no column named '" + smiles_column + "'");
  std::vector<int> label_at;
  for (const auto& name : label_columns) {
    const int at = csv.column(name);
    if (at < 0) throw Error(ErrorCode::MissingColumn, "no column named '" + name + "'");
    label_at.push_back(at);
  }

  Table table;
  table.label_columns = label_columns;
  const auto tasks = static_cast<Index>(label_columns.size());
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& cells = csv.rows[r];
    auto cell = [&](int at) { return at < static_cast<int>(cells.size()) ? trim(cells[static_cast<std::size_t>(at)]) : std::string(); };
    TableRow row;
    row.line = r + 1;
    row.smiles = cell(smiles_at);
    if (row.smiles.empty()) {
      table.rejected.push_back({row.line, "empty SMILES"});
      continue;
    }
    row.labels = Vector::Zero(tasks);
    row.mask = Vector::Zero(tasks);
    std::string problem;
    for (Index t = 0; t < tasks; ++t) {
      const std::string text = cell(label_at[static_cast<std::size_t>(t)]);
      if (text.empty()) continue;
      double value = 0.0;
      if (!parse_double(text, value) || !std::isfinite(value)) {
        problem = "label '" + label_columns[static_cast<std::size_t>(t)] + "' is not a number: '" + text + "'";
        break;
      }
      row.labels(t) = value;
      row.mask(t) = 1.0;
    }
    if (!problem.empty()) {
      table.rejected.push_back({row.line, problem});
      continue;
    }
    table.rows.push_back(std::move(row));
  }
  if (table.rows.empty()) throw Error(ErrorCode::NoValidRows, "no usable rows");
  return table;
}

Table read_table(const std::filesystem::path& path, const std::string& smiles_column,
                 const std::vector<std::string>& label_columns) {
  return table_from_csv(read_csv(path.string()), smiles_column, label_columns);
}

LoadedDataset encode_table(const Table& table, const FeatureConfig& cfg, bool strict) {
  LoadedDataset out;
  out.rejected = table.rejected;
  std::vector<RejectedRow> failures;
  std::vector<std::size_t> kept;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    try {
      out.data.graphs.push_back(encode_molecule(table.rows[r].smiles, cfg));
      kept.push_back(r);
    } catch (const Error& e) {
      failures.push_back({table.rows[r].line, table.rows[r].smiles + ": " + e.what()});
    }
  }
  if (strict && !failures.empty()) {
    std::string msg = std::to_string(failures.size()) + " unparseable row(s):";
    for (const auto& f : failures) msg += " [line " + std::to_string(f.line) + "] " + f.reason + ";";
    throw Error(ErrorCode::ParseFailures, msg);
  }
  out.rejected.insert(out.rejected.end(), failures.begin(), failures.end());
  std::sort(out.rejected.begin(), out.rejected.end(),
            [](const RejectedRow& a, const RejectedRow& b) { return a.line < b.line; });
  if (kept.empty()) throw Error(ErrorCode::NoValidRows, "no row could be encoded");

  const auto tasks = static_cast<Index>(table.label_columns.size());
  out.data.labels.resize(static_cast<Index>(kept.size()), tasks);
  out.data.mask.resize(static_cast<Index>(kept.size()), tasks);
  for (std::size_t k = 0; k < kept.size(); ++k) {
    out.data.labels.row(static_cast<Index>(k)) = table.rows[kept[k]].labels.transpose();
    out.data.mask.row(static_cast<Index>(k)) = table.rows[kept[k]].mask.transpose();
  }
  out.rows = std::move(kept);
  return out;
}

// ---------------------------------------------------------------- records

std::string encode_record(const GraphRecord& record, const FeatureConfig& cfg) {
  const GraphTensor& g = record.graph;
  if (g.num_graphs() != 1) throw Error(ErrorCode::ShapeMismatch, "a record holds exactly one graph");
  if (g.node_feature.cols() != cfg.atom_width())
    throw Error(ErrorCode::LayoutMismatch, "node feature width does not match the feature config");
  if (g.edge_feature && g.edge_feature->cols() != cfg.bond_width())
    throw Error(ErrorCode::LayoutMismatch, "edge feature width does not match the feature config");
  if (record.labels.size() != record.mask.size())
    throw Error(ErrorCode::ShapeMismatch, "label and mask lengths differ");
  if (record.labels.size() > 0xffff) throw Error(ErrorCode::ShapeMismatch, "too many labels for one record");

  const auto nodes = static_cast<std::uint32_t>(g.num_nodes());
  const auto edges = static_cast<std::uint32_t>(g.edge_src.size());
  std::string out;
  bin::put_u32(out, nodes);
  bin::put_u32(out, edges);
  std::uint8_t flags = 0;
  if (g.edge_feature) flags |= kHasEdgeFeature;
  if (g.edge_weight) flags |= kHasEdgeWeight;
  bin::put_u8(out, flags);
  for (Index r = 0; r < g.node_feature.rows(); ++r)
    for (Index c = 0; c < g.node_feature.cols(); ++c) bin::put_f32(out, static_cast<float>(g.node_feature(r, c)));
  for (int s : g.edge_src) bin::put_u32(out, static_cast<std::uint32_t>(s));
  for (int d : g.edge_dst) bin::put_u32(out, static_cast<std::uint32_t>(d));
  if (g.edge_feature) {
    const Matrix& ef = *g.edge_feature;
    for (Index r = 0; r < ef.rows(); ++r)
      for (Index c = 0; c < ef.cols(); ++c) bin::put_f32(out, static_cast<float>(ef(r, c)));
  }
  if (g.edge_weight)
    for (Index e = 0; e < g.edge_weight->size(); ++e) bin::put_f32(out, static_cast<float>((*g.edge_weight)(e)));
  const auto count = static_cast<std::uint16_t>(record.labels.size());
  bin::put_u16(out, count);
  for (Index k = 0; k < record.labels.size(); ++k) bin::put_f32(out, static_cast<float>(record.labels(k)));
  std::string bits((count + 7) / 8, '\0');
  for (Index k = 0; k < record.mask.size(); ++k)
    if (record.mask(k) != 0.0) bits[static_cast<std::size_t>(k / 8)] |= static_cast<char>(1u << (k % 8));
  out += bits;
  return out;
}

void write_records(const std::filesystem::path& path, const std::vector<GraphTensor>& graphs,
                   const Matrix& labels, const Matrix& mask, const FeatureConfig& cfg) {
  const bool has_labels = labels.size() > 0;
  if (has_labels && (labels.rows() != static_cast<Index>(graphs.size()) || mask.rows() != labels.rows() ||
                     mask.cols() != labels.cols()))
    throw Error(ErrorCode::ShapeMismatch, "labels and mask must have one row per graph");

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  std::string header(kRecordMagic, 4);
  bin::put_u16(header, kRecordVersion);
  const Digest digest = cfg.digest();
  header.append(reinterpret_cast<const char*>(digest.data()), digest.size());
  bin::put_u64(header, graphs.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));

  for (std::size_t i = 0; i < graphs.size(); ++i) {
    GraphRecord record{graphs[i], Vector(), Vector()};
    if (has_labels) {
      record.labels = labels.row(static_cast<Index>(i)).transpose();
      record.mask = mask.row(static_cast<Index>(i)).transpose();
    }
    const std::string payload = encode_record(record, cfg);
    std::string prefix;
    bin::put_u32(prefix, static_cast<std::uint32_t>(payload.size()));
    out.write(prefix.data(), 4);
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

RecordReader::RecordReader(const std::filesystem::path& path, const FeatureConfig& cfg)
    : in_(path, std::ios::binary), cfg_(cfg) {
  if (!in_) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  char header[kRecordHeaderSize];
  in_.read(header, kRecordHeaderSize);
  if (in_.gcount() != static_cast<std::streamsize>(kRecordHeaderSize))
    throw Error(ErrorCode::TruncatedRecord, "file header truncated at offset 0");
  if (std::memcmp(header, kRecordMagic, 4) != 0) throw Error(ErrorCode::CorruptFile, "not a graph record file");
  const auto version = bin::get_uint<std::uint16_t>(header + 4);
  if (version != kRecordVersion)
    throw Error(ErrorCode::CorruptFile, "unsupported record file version " + std::to_string(version));
  const Digest expected = cfg.digest();
  if (std::memcmp(header + 6, expected.data(), expected.size()) != 0) {
    Digest found;
    std::memcpy(found.data(), header + 6, found.size());
    throw Error(ErrorCode::DigestMismatch,
                "file was written with feature layout " + to_hex(found) + ", reader expects " + to_hex(expected));
  }
  count_ = bin::get_uint<std::uint64_t>(header + 38);
  offset_ = kRecordHeaderSize;
}

std::optional<GraphRecord> RecordReader::next() {
  if (consumed_ == count_) {
    if (in_.peek() != std::char_traits<char>::eof())
      throw Error(ErrorCode::CorruptFile, "unexpected data after the last record at offset " + std::to_string(offset_));
    return std::nullopt;
  }
  const std::uint64_t start = offset_;
  const auto truncated = [start] {
    return Error(ErrorCode::TruncatedRecord, "record truncated; it starts at offset " + std::to_string(start));
  };
  char prefix[4];
  in_.read(prefix, 4);
  if (in_.gcount() != 4) throw truncated();
  const auto length = bin::get_uint<std::uint32_t>(prefix);
  buffer_.resize(length);
  in_.read(buffer_.data(), length);
  if (in_.gcount() != static_cast<std::streamsize>(length)) throw truncated();

  const auto corrupt = [start](const std::string& what) {
    return Error(ErrorCode::CorruptFile, "record at offset " + std::to_string(start) + ": " + what);
  };
  bin::Cursor cur(buffer_.data(), buffer_.size());
  const auto nodes = cur.uint<std::uint32_t>();
  const auto edges = cur.uint<std::uint32_t>();
  const auto flags = cur.uint<std::uint8_t>();
  const Index aw = cfg_.atom_width();
  const Index bw = cfg_.bond_width();
  // Validate sizes before allocating anything proportional to them.
  std::uint64_t needed = std::uint64_t{nodes} * aw * 4 + std::uint64_t{edges} * 8;
  if (flags & kHasEdgeFeature) needed += std::uint64_t{edges} * bw * 4;
  if (flags & kHasEdgeWeight) needed += std::uint64_t{edges} * 4;
  if (!cur.ok() || needed + 2 > cur.remaining() || (flags & ~(kHasEdgeFeature | kHasEdgeWeight)))
    throw corrupt("inconsistent sizes");

  GraphRecord record;
  GraphTensor& g = record.graph;
  g.sizes = {static_cast<int>(nodes)};
  g.node_feature.resize(nodes, aw);
  for (Index r = 0; r < static_cast<Index>(nodes); ++r)
    for (Index c = 0; c < aw; ++c) g.node_feature(r, c) = cur.f32();
  g.edge_src.resize(edges);
  g.edge_dst.resize(edges);
  for (auto& s : g.edge_src) s = static_cast<int>(cur.uint<std::uint32_t>());
  for (auto& d : g.edge_dst) d = static_cast<int>(cur.uint<std::uint32_t>());
  if (flags & kHasEdgeFeature) {
    Matrix ef(edges, bw);
    for (Index r = 0; r < static_cast<Index>(edges); ++r)
      for (Index c = 0; c < bw; ++c) ef(r, c) = cur.f32();
    g.edge_feature = std::move(ef);
  }
  if (flags & kHasEdgeWeight) {
    Vector w(edges);
    for (Index e = 0; e < static_cast<Index>(edges); ++e) w(e) = cur.f32();
    g.edge_weight = std::move(w);
  }
  const auto count = cur.uint<std::uint16_t>();
  if (!cur.ok() || cur.remaining() != std::size_t{count} * 4 + (count + 7) / 8) throw corrupt("label block size");
  record.labels.resize(count);
  record.mask.resize(count);
  for (Index k = 0; k < count; ++k) record.labels(k) = cur.f32();
  const char* bits = cur.take((count + 7) / 8);
  for (Index k = 0; k < count; ++k)
    record.mask(k) = (static_cast<unsigned char>(bits[k / 8]) >> (k % 8)) & 1u ? 1.0 : 0.0;
  for (std::size_t e = 0; e < g.edge_src.size(); ++e)
    if (g.edge_src[e] < 0 || g.edge_src[e] >= static_cast<int>(nodes) || g.edge_dst[e] < 0 ||
        g.edge_dst[e] >= static_cast<int>(nodes))
      throw corrupt("edge endpoint out of range");

  offset_ = start + 4 + length;
  ++consumed_;
  return record;
}

LabeledGraphs read_records(const std::filesystem::path& path, const FeatureConfig& cfg) {
  RecordReader reader(path, cfg);
  LabeledGraphs out;
  std::vector<Vector> labels, masks;
  while (auto record = reader.next()) {
    out.graphs.push_back(std::move(record->graph));
    labels.push_back(std::move(record->labels));
    masks.push_back(std::move(record->mask));
  }
  const Index tasks = labels.empty() ? 0 : labels.front().size();
  out.labels.resize(static_cast<Index>(labels.size()), tasks);
  out.mask.resize(static_cast<Index>(labels.size()), tasks);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].size() != tasks) throw Error(ErrorCode::CorruptFile, "records disagree on label count");
    out.labels.row(static_cast<Index>(i)) = labels[i].transpose();
    out.mask.row(static_cast<Index>(i)) = masks[i].transpose();
  }
  return out;
}

// ---------------------------------------------------------------- splits

std::vector<std::size_t> partition_sizes(std::size_t n, const std::vector<double>& fractions) {
  if (fractions.empty()) throw Error(ErrorCode::BadFractions, "no fractions given");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0) || !std::isfinite(f)) throw Error(ErrorCode::BadFractions, "fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw Error(ErrorCode::BadFractions, "fractions sum to " + std::to_string(total) + ", not 1");

  std::vector<std::size_t> sizes(fractions.size());
  std::vector<double> remainder(fractions.size());
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < fractions.size(); ++k) {
    const double exact = fractions[k] * static_cast<double>(n);
    // Guard against 0.7 * 10 = 6.999... style representation error.
    double whole = std::floor(exact + 1e-9);
    sizes[k] = static_cast<std::size_t>(whole);
    remainder[k] = std::max(0.0, exact - whole);
    assigned += sizes[k];
  }
  if (assigned > n) throw Error(ErrorCode::BadFractions, "fractions over-allocate");
  std::vector<std::size_t> order(fractions.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < n; k = (k + 1) % order.size(), ++assigned) ++sizes[order[k]];
  return sizes;
}

std::vector<std::vector<std::size_t>> split(std::size_t n, const std::vector<double>& fractions, std::uint64_t seed) {
  const auto sizes = partition_sizes(n, fractions);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = substream(seed, "split");
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> parts;
  std::size_t at = 0;
  for (std::size_t size : sizes) {
    parts.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                       order.begin() + static_cast<std::ptrdiff_t>(at + size));
    at += size;
  }
  return parts;
}

std::vector<std::vector<std::size_t>> split_stratified(const std::vector<int>& classes,
                                                       const std::vector<double>& fractions, std::uint64_t seed) {
  partition_sizes(classes.size(), fractions);
  std::vector<int> distinct(classes.begin(), classes.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  Rng rng = substream(seed, "split");
  std::vector<std::vector<std::size_t>> parts(fractions.size());
  for (int c : distinct) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < classes.size(); ++i)
      if (classes[i] == c) members.push_back(i);
    rng.shuffle(members);
    const auto sizes = partition_sizes(members.size(), fractions);
    std::size_t at = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      parts[k].insert(parts[k].end(), members.begin() + static_cast<std::ptrdiff_t>(at),
                      members.begin() + static_cast<std::ptrdiff_t>(at + sizes[k]));
      at += sizes[k];
    }
  }
  for (auto& part : parts) rng.shuffle(part);
  return parts;
}

}  // namespace molgnn
