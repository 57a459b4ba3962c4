#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <system_error>
#include <unordered_map>
#include <vector>

#include "loopynet/error.hpp"
#include "loopynet/graph.hpp"

namespace loopynet {

struct EdgeListLoad {
  Graph graph;
  std::size_t self_loops = 0;
  std::size_t duplicate_edges = 0;
};

enum class TableKind { features, labels };

namespace detail {

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "file not found: " + path);
  return in;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r' || s.front() == '\n'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\n'))
    s.remove_suffix(1);
  return s;
}

inline std::string_view strip_bom(std::string_view s) {
  if (s.size() >= 3 && static_cast<unsigned char>(s[0]) == 0xEF &&
      static_cast<unsigned char>(s[1]) == 0xBB && static_cast<unsigned char>(s[2]) == 0xBF) {
    s.remove_prefix(3);
  }
  return s;
}

struct CsvRecord {
  std::vector<std::string> fields;
  std::size_t line = 0;  // 1-based line where the record starts
};

// RFC-4180 reader: quoted fields, doubled quotes, CRLF or LF endings,
// line breaks inside quotes. Blank lines are skipped.
inline std::vector<CsvRecord> read_csv(std::istream& in, const std::string& source) {
  std::vector<CsvRecord> records;
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::string_view data = strip_bom(text);

  CsvRecord current;
  std::string field;
  bool in_quotes = false;
  bool field_was_quoted = false;
  std::size_t line = 1;
  current.line = 1;

  auto end_record = [&] {
    current.fields.push_back(std::move(field));
    field.clear();
    const bool blank = current.fields.size() == 1 && current.fields[0].empty() &&
                       !field_was_quoted;
    if (!blank) records.push_back(std::move(current));
    current = CsvRecord{};
    field_was_quoted = false;
  };

  for (std::size_t i = 0; i < data.size(); ++i) {
    const char c = data[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < data.size() && data[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field.empty()) {
          throw Error(ErrorKind::parse, source + ":" + std::to_string(line) +
                                            ": stray quote inside unquoted field");
        }
        in_quotes = true;
        field_was_quoted = true;
        break;
      case ',':
        current.fields.push_back(std::move(field));
        field.clear();
        break;
      case '\r':
        break;
      case '\n':
        end_record();
        ++line;
        current.line = line;
        break;
      default:
        field.push_back(c);
    }
  }
  if (in_quotes) {
    throw Error(ErrorKind::parse, source + ": unterminated quoted field");
  }
  if (!field.empty() || !current.fields.empty() || field_was_quoted) end_record();
  return records;
}

inline double parse_real(std::string_view text, const std::string& where) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw Error(ErrorKind::parse, where + ": not a number: '" + std::string(text) + "'");
  }
  if (!std::isfinite(value)) {
    throw Error(ErrorKind::parse, where + ": non-finite value");
  }
  return value;
}

}  // namespace detail

/// Shortest decimal text that reads back to the same double.
inline std::string format_real(double value) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

inline EdgeListLoad read_edge_list(std::istream& in, Indexing indexing,
                                   const std::string& source = "<edges>") {
  EdgeListLoad result;
  Graph& g = result.graph;
  std::unordered_map<std::string, NodeIndex> index;
  auto intern = [&](const std::string& id) {
    auto [it, inserted] = index.try_emplace(id, g.node_ids.size());
    if (inserted) {
      g.node_ids.push_back(id);
      g.adjacency.emplace_back();
    }
    return it->second;
  };

  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = detail::trim(raw);
    if (line_no == 1) line = detail::strip_bom(line);
    if (line.empty() || line.front() == '#') continue;

    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      fields.emplace_back(line.substr(start, tab == std::string_view::npos ? tab : tab - start));
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 2 || fields[0].empty() || fields[1].empty()) {
      throw Error(ErrorKind::parse, source + ":" + std::to_string(line_no) +
                                        ": expected 'src<TAB>dst', got " +
                                        std::to_string(fields.size()) + " field(s)");
    }
    const NodeIndex a = intern(fields[0]);
    const NodeIndex b = intern(fields[1]);
    if (a == b) {
      ++result.self_loops;
    } else if (!add_edge(g.adjacency, a, b)) {
      ++result.duplicate_edges;
    }
  }
  g.indexing = indexing;
  if (indexing == Indexing::sorted_id) canonicalize(g);
  return result;
}

inline EdgeListLoad load_edge_list(const std::string& path,
                                   Indexing indexing = Indexing::first_appearance) {
  auto in = detail::open_input(path);
  return read_edge_list(in, indexing, path);
}

/// Attaches a feature or label table to `graph`.
///
/// The header must start with `id`; the vector dimension is the number of
/// remaining columns. A feature table may introduce ids that never appear in
/// the edge list; they become isolated nodes. Label tables must name exactly
/// the known nodes, with values in [0, 1].
inline Graph read_node_table(std::istream& in, Graph graph, TableKind kind,
                             const std::string& source = "<table>") {
  const auto records = detail::read_csv(in, source);
  if (records.empty()) throw Error(ErrorKind::parse, source + ": missing header row");
  const auto& header = records.front().fields;
  if (header.empty() || detail::trim(header[0]) != "id") {
    throw Error(ErrorKind::parse, source + ": header must start with 'id'");
  }
  if (header.size() < 2) {
    throw Error(ErrorKind::parse, source + ": table has no value columns");
  }
  const std::size_t dim = header.size() - 1;

  std::unordered_map<std::string, NodeIndex> index;
  for (NodeIndex i = 0; i < graph.node_count(); ++i) index.emplace(graph.node_ids[i], i);

  std::vector<std::optional<Eigen::VectorXd>> rows(graph.node_count());
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    const std::string where = source + ":" + std::to_string(rec.line);
    if (rec.fields.size() != header.size()) {
      throw Error(ErrorKind::parse, where + ": expected " + std::to_string(header.size()) +
                                        " columns, got " + std::to_string(rec.fields.size()));
    }
    const std::string id(detail::trim(rec.fields[0]));
    auto it = index.find(id);
    if (it == index.end()) {
      if (kind == TableKind::labels) {
        throw Error(ErrorKind::schema, where + ": label row for unknown node " + id);
      }
      it = index.emplace(id, graph.node_ids.size()).first;
      graph.node_ids.push_back(id);
      graph.adjacency.emplace_back();
      rows.emplace_back();
      if (!graph.labels.empty()) {
        throw Error(ErrorKind::schema, where + ": node " + id + " has no label row");
      }
    }
    if (rows[it->second]) {
      throw Error(ErrorKind::schema, where + ": duplicate row for node " + id);
    }
    Eigen::VectorXd values(static_cast<Eigen::Index>(dim));
    for (std::size_t c = 0; c < dim; ++c) {
      const double v = detail::parse_real(rec.fields[c + 1], where);
      if (kind == TableKind::labels && (v < 0.0 || v > 1.0)) {
        throw Error(ErrorKind::range, where + ": label value " + format_real(v) +
                                          " for node " + id + " outside [0,1]");
      }
      values[static_cast<Eigen::Index>(c)] = v;
    }
    rows[it->second] = std::move(values);
  }

  std::vector<Eigen::VectorXd> table;
  table.reserve(rows.size());
  for (NodeIndex i = 0; i < rows.size(); ++i) {
    if (!rows[i]) {
      throw Error(ErrorKind::schema, source + ": missing row for node " + graph.node_ids[i]);
    }
    table.push_back(std::move(*rows[i]));
  }
  if (kind == TableKind::features) {
    graph.features = std::move(table);
    graph.feature_dim = dim;
  } else {
    graph.labels = std::move(table);
    graph.label_dim = dim;
  }
  if (graph.indexing == Indexing::sorted_id) canonicalize(graph);
  return graph;
}

inline Graph load_node_table(const std::string& path, Graph graph, TableKind kind) {
  auto in = detail::open_input(path);
  return read_node_table(in, std::move(graph), kind, path);
}

/// Loads edges, features and (optionally) labels in one go.
inline Graph load_graph(const std::string& edges, const std::string& features,
                        const std::string& labels, Indexing indexing) {
  Graph g = load_edge_list(edges, indexing).graph;
  g = load_node_table(features, std::move(g), TableKind::features);
  if (!labels.empty()) g = load_node_table(labels, std::move(g), TableKind::labels);
  validate(g);
  return g;
}

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace detail

inline void write_edge_list(std::ostream& out, const Graph& g) {
  for (NodeIndex i = 0; i < g.node_count(); ++i) {
    for (NodeIndex j : g.adjacency[i]) {
      if (i < j) out << g.node_ids[i] << '\t' << g.node_ids[j] << '\n';
    }
  }
}

inline void write_node_table(std::ostream& out, const Graph& g, TableKind kind) {
  const auto& table = kind == TableKind::features ? g.features : g.labels;
  const std::size_t dim = kind == TableKind::features ? g.feature_dim : g.label_dim;
  out << "id";
  for (std::size_t c = 0; c < dim; ++c) out << ",c" << c;
  out << '\n';
  for (NodeIndex i = 0; i < g.node_count(); ++i) {
    out << detail::csv_field(g.node_ids[i]);
    for (Eigen::Index c = 0; c < table[i].size(); ++c) out << ',' << format_real(table[i][c]);
    out << '\n';
  }
}

}  // namespace loopynet
