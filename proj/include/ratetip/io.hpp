#pragma once

// Plain-text outputs: CSV with a leading '#' comment line holding JSON
// metadata, 17 significant digits, LF line endings.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "bvp_path.hpp"
#include "errors.hpp"

namespace ratetip::io {

/// Shortest text that reads back to the same double ("%.17g").
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  std::string comment;  // written after "# " when non-empty (one line)

  void add(std::vector<double> row) {
    if (row.size() != columns.size()) throw InvalidArgument("table: row width does not match header");
    rows.push_back(std::move(row));
  }
};

inline void write_csv(std::ostream& os, const Table& t) {
  if (!t.comment.empty()) os << "# " << t.comment << '\n';
  for (std::size_t c = 0; c < t.columns.size(); ++c) os << (c ? "," : "") << t.columns[c];
  os << '\n';
  for (const auto& r : t.rows) {
    for (std::size_t c = 0; c < r.size(); ++c) os << (c ? "," : "") << format_double(r[c]);
    os << '\n';
  }
}

/// Writes `content` to `path` in binary mode (no newline translation).
inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << content;
  f.close();
  if (!f) throw IoError("write to " + path + " failed");
}

inline std::string to_csv(const Table& t) {
  std::ostringstream os;
  write_csv(os, t);
  return os.str();
}

/// Path export: tau, t, x1, x2, lam, z1, z2, z3 at every Lagrange point.
inline Table path_table(const PathSolution& p) {
  Table t;
  t.columns = {"tau", "t", "x1", "x2", "lam", "z1", "z2", "z3"};
  const auto& m = p.sol.mesh;
  for (int k = 0; k < m.n_points(); ++k) {
    const double tau = m.point(k);
    const auto y = p.physical(&p.sol.y[static_cast<std::size_t>(k) * 6]);
    t.add({tau, p.t_of(tau), y[0], y[1], y[2], y[3], y[4], y[5]});
  }
  std::ostringstream c;
  c << "{\"T_end\":" << format_double(p.T_end()) << ",\"M\":" << format_double(p.M())
    << ",\"m\":" << format_double(p.m()) << ",\"epsilon\":" << format_double(p.epsilon())
    << ",\"D\":" << format_double(p.D()) << "}";
  t.comment = c.str();
  return t;
}

}  // namespace ratetip::io
