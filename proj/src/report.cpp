#include "advdet/report.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "advdet/error.hpp"

#ifndef ADVDET_GIT_DESCRIBE
#define ADVDET_GIT_DESCRIBE "unknown"
#endif

namespace advdet {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
  }
  out.push_back(std::move(field));
  return out;
}

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string opt_number(const std::optional<double>& v) { return v ? format_number(*v) : ""; }

// Rows of a CSV document keyed by the columns of a fixed header.
class Table {
 public:
  Table(const std::string& csv, const char* header) {
    std::vector<std::string> expected = split_line(header);
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty report", 0);
    strip(line);
    const auto cols = split_line(line);
    for (const auto& e : expected) {
      bool found = false;
      for (const auto& c : cols) found = found || c == e;
      if (!found) throw FormatError("report is missing column '" + e + "'", 0);
    }
    for (std::size_t i = 0; i < cols.size(); ++i) {
      bool known = false;
      for (const auto& e : expected) known = known || cols[i] == e;
      if (!known) throw FormatError("report has unexpected column '" + cols[i] + "'", 0);
      index_[cols[i]] = i;
    }
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      strip(line);
      if (line.empty()) continue;
      auto fields = split_line(line);
      if (fields.size() != cols.size())
        throw FormatError("report line " + std::to_string(line_no) + " has " +
                              std::to_string(fields.size()) + " fields, expected " +
                              std::to_string(cols.size()),
                          0);
      rows_.push_back(std::move(fields));
      lines_.push_back(line_no);
    }
  }

  std::size_t size() const { return rows_.size(); }
  const std::string& text(std::size_t r, const std::string& col) const {
    return rows_[r][index_.at(col)];
  }
  double number(std::size_t r, const std::string& col) const {
    const auto& s = text(r, col);
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) bad(r, col);
    return v;
  }
  std::optional<double> maybe(std::size_t r, const std::string& col) const {
    if (text(r, col).empty()) return std::nullopt;
    return number(r, col);
  }
  template <class T>
  T integer(std::size_t r, const std::string& col) const {
    const auto& s = text(r, col);
    T v{};
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) bad(r, col);
    return v;
  }

 private:
  static void strip(std::string& line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
  }
  [[noreturn]] void bad(std::size_t r, const std::string& col) const {
    throw FormatError("report line " + std::to_string(lines_[r]) + ": column '" + col +
                          "' holds '" + text(r, col) + "'",
                      0);
  }

  std::map<std::string, std::size_t> index_;
  std::vector<std::vector<std::string>> rows_;
  std::vector<std::size_t> lines_;
};

}  // namespace

std::string format_number(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw Error("number formatting failed");
  return std::string(buf, p);
}

std::string read_text(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string eval_reports_csv(const std::vector<EvalReport>& reports) {
  std::string out = std::string(kEvalHeader) + "\n";
  for (const auto& r : reports) {
    out += quote(r.adversary) + "," + format_number(r.epsilon) + "," + opt_number(r.sigma) + "," +
           format_number(r.accuracy) + "," + opt_number(r.detectability) + "," +
           std::to_string(r.n_original) + "," + std::to_string(r.n_adversarial) + "," +
           std::to_string(r.n_degenerate) + "," + std::to_string(r.seed) + "\n";
  }
  return out;
}

std::vector<EvalReport> parse_eval_reports(const std::string& csv) {
  const Table t(csv, kEvalHeader);
  std::vector<EvalReport> out;
  for (std::size_t r = 0; r < t.size(); ++r) {
    EvalReport e;
    e.adversary = t.text(r, "adversary");
    e.epsilon = t.number(r, "epsilon");
    e.sigma = t.maybe(r, "sigma");
    e.accuracy = t.number(r, "accuracy");
    e.detectability = t.maybe(r, "detectability");
    e.n_original = t.integer<std::size_t>(r, "n_original");
    e.n_adversarial = t.integer<std::size_t>(r, "n_adversarial");
    e.n_degenerate = t.integer<std::size_t>(r, "n_degenerate");
    e.seed = t.integer<std::uint64_t>(r, "seed");
    out.push_back(std::move(e));
  }
  return out;
}

void write_report(const std::filesystem::path& path, const std::vector<EvalReport>& reports) {
  write_text(path, eval_reports_csv(reports));
}

std::vector<EvalReport> read_eval_reports(const std::filesystem::path& path) {
  return parse_eval_reports(read_text(path));
}

std::string transfer_csv(const TransferMatrix& m) {
  std::string out = std::string(kTransferHeader) + "\n";
  for (std::size_t r = 0; r < m.rows.size(); ++r)
    for (std::size_t c = 0; c < m.cols.size(); ++c)
      out += quote(m.row_label) + "," + quote(m.rows[r]) + "," + quote(m.col_label) + "," +
             quote(m.cols[c]) + "," + opt_number(m.cells[r][c]) + "\n";
  return out;
}

TransferMatrix parse_transfer(const std::string& csv) {
  const Table t(csv, kTransferHeader);
  TransferMatrix m;
  auto index_of = [](std::vector<std::string>& keys, const std::string& k) {
    for (std::size_t i = 0; i < keys.size(); ++i)
      if (keys[i] == k) return i;
    keys.push_back(k);
    return keys.size() - 1;
  };
  std::vector<std::tuple<std::size_t, std::size_t, std::optional<double>>> cells;
  for (std::size_t r = 0; r < t.size(); ++r) {
    if (r == 0) {
      m.row_label = t.text(r, "row_label");
      m.col_label = t.text(r, "col_label");
    } else if (t.text(r, "row_label") != m.row_label || t.text(r, "col_label") != m.col_label) {
      throw FormatError("transfer report mixes axis labels", 0);
    }
    const auto i = index_of(m.rows, t.text(r, "row"));
    const auto j = index_of(m.cols, t.text(r, "col"));
    cells.emplace_back(i, j, t.maybe(r, "detectability"));
  }
  if (cells.size() != m.rows.size() * m.cols.size())
    throw FormatError("transfer report does not cover every cell", 0);
  m.cells.assign(m.rows.size(), std::vector<std::optional<double>>(m.cols.size()));
  for (const auto& [i, j, v] : cells) m.cells[i][j] = v;
  return m;
}

void write_report(const std::filesystem::path& path, const TransferMatrix& m) {
  write_text(path, transfer_csv(m));
}

TransferMatrix read_transfer(const std::filesystem::path& path) {
  return parse_transfer(read_text(path));
}

std::string depth_csv(const std::vector<DepthCell>& cells) {
  std::string out = std::string(kDepthHeader) + "\n";
  for (const auto& c : cells)
    out += quote(c.adversary) + "," + std::to_string(c.ad_index) + "," + opt_number(c.detectability) + "\n";
  return out;
}

std::vector<DepthCell> parse_depth(const std::string& csv) {
  const Table t(csv, kDepthHeader);
  std::vector<DepthCell> out;
  for (std::size_t r = 0; r < t.size(); ++r)
    out.push_back({t.text(r, "adversary"), t.integer<int>(r, "ad_index"), t.maybe(r, "detectability")});
  return out;
}

void write_report(const std::filesystem::path& path, const std::vector<DepthCell>& cells) {
  write_text(path, depth_csv(cells));
}

std::vector<DepthCell> read_depth(const std::filesystem::path& path) {
  return parse_depth(read_text(path));
}

const char* git_describe() { return ADVDET_GIT_DESCRIBE; }

void write_manifest(const std::filesystem::path& path, nlohmann::json manifest) {
  manifest["git_describe"] = git_describe();
  write_text(path, manifest.dump(2) + "\n");
}

nlohmann::json read_manifest(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what(), 0);
  }
}

}  // namespace advdet
