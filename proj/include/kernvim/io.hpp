#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "kernvim/common.hpp"
#include "kernvim/nuisance.hpp"
#include "kernvim/pipeline.hpp"
#include "kernvim/simulate.hpp"

namespace kernvim {

// ---------------------------------------------------------------------------
// Minimal CSV: comma separation, optional double-quote wrapping with ""
// escapes, no embedded newlines. The first record is the header.

struct csv_table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (header[j] == name) return static_cast<int>(j);
    return -1;
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cell));
      cell.clear();
    } else {
      cell += c;
    }
  }
  if (quoted) throw input_error("unterminated quote on CSV line " + std::to_string(line_no));
  out.push_back(std::move(cell));
  return out;
}

inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) return std::nullopt;
  return v;
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace detail

inline csv_table read_csv(std::istream& in, const std::string& origin) {
  csv_table t;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() && line_no > 1) continue;
    std::vector<std::string> cells = detail::split_csv_line(line, line_no);
    if (line_no == 1) {
      t.header = std::move(cells);
    } else {
      if (cells.size() != t.header.size())
        throw input_error(origin + ": line " + std::to_string(line_no) + " has " +
                          std::to_string(cells.size()) + " fields, expected " +
                          std::to_string(t.header.size()));
      t.rows.push_back(std::move(cells));
    }
  }
  if (t.header.empty()) throw input_error(origin + ": empty CSV");
  return t;
}

inline csv_table read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw input_error("cannot open " + path);
  return read_csv(in, path);
}

// ---------------------------------------------------------------------------
// Dataset loading. Numeric columns become singleton groups; non-numeric
// columns are one-hot encoded over their sorted levels and tested jointly as
// one group.

struct loaded_dataset {
  dataset data;
  std::vector<variable_group> groups;
};

inline loaded_dataset load_dataset(const csv_table& t, const std::string& outcome,
                                   const std::string& treatment,
                                   const std::vector<std::string>& covariates,
                                   bool treatment_required) {
  const std::size_t n = t.rows.size();
  if (n < 2) throw input_error("dataset needs at least two rows");

  int y_col = t.column(outcome);
  if (y_col < 0) throw input_error("outcome column '" + outcome + "' not found");
  int a_col = -1;
  if (!treatment.empty()) {
    a_col = t.column(treatment);
    if (a_col < 0) throw input_error("treatment column '" + treatment + "' not found");
  } else if (treatment_required) {
    throw input_error("a treatment column is required");
  }

  std::vector<std::string> use = covariates;
  if (use.empty()) {
    for (const std::string& h : t.header)
      if (h != outcome && h != treatment) use.push_back(h);
  }
  if (use.empty()) throw input_error("no covariate columns selected");
  std::set<std::string> dedup(use.begin(), use.end());
  if (dedup.size() != use.size()) throw input_error("duplicate covariate selection");
  for (const std::string& c : use)
    if (c == outcome || c == treatment)
      throw input_error("covariate '" + c + "' overlaps outcome/treatment");

  loaded_dataset out;
  out.data.y.resize(static_cast<Eigen::Index>(n));
  out.data.a = ivec::Zero(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    auto y = detail::parse_double(t.rows[i][static_cast<std::size_t>(y_col)]);
    if (!y) throw input_error("non-numeric outcome on data row " + std::to_string(i + 1));
    out.data.y[static_cast<Eigen::Index>(i)] = *y;
    if (a_col >= 0) {
      auto a = detail::parse_double(t.rows[i][static_cast<std::size_t>(a_col)]);
      if (!a || (*a != 0.0 && *a != 1.0))
        throw input_error("treatment must be 0/1 on data row " + std::to_string(i + 1));
      out.data.a[static_cast<Eigen::Index>(i)] = static_cast<int>(*a);
    }
  }

  // decide numeric vs categorical per selected column, building the design
  // matrix columns as we go
  std::vector<std::vector<double>> numeric_cols;
  for (const std::string& name : use) {
    int c = t.column(name);
    if (c < 0) throw input_error("covariate column '" + name + "' not found");
    bool numeric = true;
    std::vector<double> vals(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::string& cell = t.rows[i][static_cast<std::size_t>(c)];
      if (cell.empty()) throw input_error("missing value in column '" + name + "'");
      auto v = detail::parse_double(cell);
      if (!v) {
        numeric = false;
        break;
      }
      vals[i] = *v;
    }
    variable_group grp;
    grp.name = name;
    if (numeric) {
      grp.cols = {static_cast<int>(numeric_cols.size())};
      numeric_cols.push_back(std::move(vals));
    } else {
      std::set<std::string> levels;
      for (std::size_t i = 0; i < n; ++i) levels.insert(t.rows[i][static_cast<std::size_t>(c)]);
      if (levels.size() < 2)
        throw degenerate_error("categorical column '" + name + "' has a single level");
      for (const std::string& lv : levels) {
        std::vector<double> ind(n);
        for (std::size_t i = 0; i < n; ++i)
          ind[i] = t.rows[i][static_cast<std::size_t>(c)] == lv ? 1.0 : 0.0;
        grp.cols.push_back(static_cast<int>(numeric_cols.size()));
        numeric_cols.push_back(std::move(ind));
        out.data.names.push_back(name + "=" + lv);
      }
      out.groups.push_back(std::move(grp));
      continue;
    }
    out.data.names.push_back(name);
    out.groups.push_back(std::move(grp));
  }

  out.data.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(numeric_cols.size()));
  for (std::size_t j = 0; j < numeric_cols.size(); ++j)
    for (std::size_t i = 0; i < n; ++i)
      out.data.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = numeric_cols[j][i];
  validate(out.data);
  return out;
}

// External nuisance predictions, row-aligned with the analysis dataset;
// header must carry g1, mu1, mu0.
inline nuisance_predictions load_nuisance_csv(const std::string& path, std::int64_t n) {
  csv_table t = read_csv_file(path);
  int g_col = t.column("g1"), m1_col = t.column("mu1"), m0_col = t.column("mu0");
  if (g_col < 0 || m1_col < 0 || m0_col < 0)
    throw input_error(path + ": nuisance CSV needs columns g1, mu1, mu0");
  if (static_cast<std::int64_t>(t.rows.size()) != n)
    throw input_error(path + ": nuisance rows do not match the dataset");
  nuisance_predictions p{vec(n), vec(n), vec(n)};
  for (std::int64_t i = 0; i < n; ++i) {
    auto g = detail::parse_double(t.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(g_col)]);
    auto m1 = detail::parse_double(t.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(m1_col)]);
    auto m0 = detail::parse_double(t.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(m0_col)]);
    if (!g || !m1 || !m0)
      throw input_error(path + ": non-numeric nuisance value on row " + std::to_string(i + 1));
    if (!(*g > 0.0 && *g < 1.0))
      throw input_error(path + ": propensity outside (0, 1) on row " + std::to_string(i + 1));
    p.g1[i] = *g;
    p.mu1[i] = *m1;
    p.mu0[i] = *m0;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Writers.

inline void write_band_csv(std::ostream& os, const band_table& b) {
  os << detail::csv_escape(b.variable) << ",estimate,lower,upper\n";
  for (Eigen::Index i = 0; i < b.grid_value.size(); ++i)
    os << detail::fmt_double(b.grid_value[i]) << ',' << detail::fmt_double(b.band.estimate[i])
       << ',' << detail::fmt_double(b.band.lower[i]) << ','
       << detail::fmt_double(b.band.upper[i]) << '\n';
}

inline void write_mc_csv(std::ostream& os, const std::vector<mc_row>& rows) {
  os << "measure,n,sigma,beta,alternative,reps,reject_rate,mean_norm,coverage,failures\n";
  for (const mc_row& r : rows) {
    os << r.measure << ',' << r.n << ',' << detail::fmt_double(r.sigma) << ','
       << detail::fmt_double(r.beta) << ',' << r.alternative << ',' << r.reps << ','
       << detail::fmt_double(r.reject_rate) << ',' << detail::fmt_double(r.mean_norm) << ','
       << (r.coverage ? detail::fmt_double(*r.coverage) : std::string("NA")) << ','
       << r.failures << '\n';
  }
}

}  // namespace kernvim
