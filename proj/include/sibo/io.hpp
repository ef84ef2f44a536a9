#pragma once

#include <Eigen/Dense>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sibo/common.hpp"
#include "sibo/loop.hpp"

namespace sibo::io {

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// 17 significant digits: the shortest width that round-trips every double
// through decimal exactly, keeping replay byte-identical.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string json_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size() + 2);
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
    }
  }
  return out;
}

inline std::string json_vector(const Eigen::VectorXd& v) {
  std::string out = "[";
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += format_double(v(i));
  }
  return out + "]";
}

inline std::string json_matrix(const Eigen::MatrixXd& m) {
  std::string out = "[";
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if (r) out += ",";
    out += json_vector(m.row(r).transpose());
  }
  return out + "]";
}

inline std::string json_indices(const std::vector<Eigen::Index>& idx) {
  std::string out = "[";
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(idx[i]);
  }
  return out + "]";
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path + ": cannot open file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ParseError(tmp + ": cannot open file for writing");
    out << content;
    if (!out) throw ParseError(tmp + ": write failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw ParseError(path + ": cannot replace file");
}

struct Csv {
  std::vector<std::string> header;
  Eigen::MatrixXd values;

  Eigen::Index column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<Eigen::Index>(i);
    return -1;
  }
};

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\r'))
      cell.pop_back();
    std::size_t start = cell.find_first_not_of(' ');
    cells.push_back(start == std::string::npos ? "" : cell.substr(start));
  }
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

inline Csv read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open file");
  std::string line;
  long line_no = 0;
  Csv csv;
  std::vector<Eigen::VectorXd> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells = split_line(line);
    if (csv.header.empty()) {
      csv.header = cells;
      continue;
    }
    if (cells.size() != csv.header.size())
      throw ParseError(path + ": line " + std::to_string(line_no) +
                       ": expected " + std::to_string(csv.header.size()) +
                       " columns, got " + std::to_string(cells.size()));
    Eigen::VectorXd row(static_cast<Eigen::Index>(cells.size()));
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const char* text = cells[c].c_str();
      char* end = nullptr;
      double v = std::strtod(text, &end);
      if (end == text || *end != '\0')
        throw ParseError(path + ": line " + std::to_string(line_no) +
                         ": cannot parse number from '" + cells[c] + "'");
      row(static_cast<Eigen::Index>(c)) = v;
    }
    rows.push_back(std::move(row));
  }
  if (csv.header.empty())
    throw ParseError(path + ": line 0: empty file");
  csv.values.resize(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(csv.header.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    csv.values.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
  return csv;
}

inline std::string summary_csv(const std::vector<StrategySummary>& summary) {
  std::string out = "strategy,iteration,mean_log10_regret,std_log10_regret\n";
  for (const StrategySummary& s : summary) {
    for (Eigen::Index i = 0; i < s.mean_log10_regret.size(); ++i) {
      out += strategy_name(s.strategy.kind);
      out += ",";
      out += std::to_string(i + 1);
      out += ",";
      out += format_double(s.mean_log10_regret(i));
      out += ",";
      out += format_double(s.std_log10_regret(i));
      out += "\n";
    }
  }
  return out;
}

// Wall-clock timings are deliberately absent: trace files must be identical
// across reruns with one seed.
inline std::string trace_record_json(const TraceRecord& rec) {
  std::string out = "{\"iteration\":" + std::to_string(rec.iteration);
  out += ",\"pool_index\":" + std::to_string(rec.pool_index);
  out += ",\"input\":" + json_vector(rec.input);
  out += ",\"observation\":" + json_vector(rec.observation);
  out += ",\"objective\":" + format_double(rec.objective);
  out += ",\"incumbent_value\":" + format_double(rec.incumbent_value);
  out += ",\"incumbent_input\":" + json_vector(rec.incumbent_input);
  out += ",\"acquisition_value\":" + format_double(rec.acquisition_value);
  return out + "}";
}

inline std::string trace_jsonl(const Trace& trace, const std::string& strategy,
                               long trial, long budget) {
  std::string out;
  std::string prefix = "{\"strategy\":\"" + json_escape(strategy) +
                       "\",\"trial\":" + std::to_string(trial) + ",";
  for (const TraceRecord& rec : trace.records) {
    std::string body = trace_record_json(rec);
    out += prefix + body.substr(1) + "\n";
  }
  if (static_cast<long>(trace.records.size()) < budget)
    out += prefix + "\"pool_exhausted\":true}\n";
  return out;
}

}  // namespace sibo::io
