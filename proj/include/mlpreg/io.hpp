#pragma once

// Persisted formats: dataset CSV, weights / truth / gamma JSON, and the
// number rendering they share.

#include <cerrno>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mlpreg/dataset.hpp"
#include "mlpreg/mlp.hpp"
#include "mlpreg/spd.hpp"

namespace mlpreg {

using json = nlohmann::json;

/// %.17g; parse_double(format_double(x)) == x for every finite double.
inline std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// Whole-string decimal parse; nullopt on junk, trailing text or overflow.
inline std::optional<double> parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes atomically enough for our purposes: full content, then close.
inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  out << content;
  out.close();
  if (!out) throw Error("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Dataset CSV: header z1..zq,y1..yd, one observation per line.

inline std::string dataset_csv(const Dataset& data) {
  std::string s;
  for (Eigen::Index i = 0; i < data.q(); ++i) s += (i ? ",z" : "z") + std::to_string(i + 1);
  for (Eigen::Index j = 0; j < data.d(); ++j) s += ",y" + std::to_string(j + 1);
  s += '\n';
  for (Eigen::Index t = 0; t < data.n(); ++t) {
    for (Eigen::Index i = 0; i < data.q(); ++i) s += (i ? "," : "") + format_double(data.inputs(t, i));
    for (Eigen::Index j = 0; j < data.d(); ++j) s += "," + format_double(data.targets(t, j));
    s += '\n';
  }
  return s;
}

/// Errors are ConfigError anchored at the 1-based line, with the column.
inline Dataset parse_dataset_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty dataset file", 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> head = split(line, ',');
  int q = 0, d = 0;
  for (size_t c = 0; c < head.size(); ++c) {
    const std::string want_z = "z" + std::to_string(q + 1), want_y = "y" + std::to_string(d + 1);
    if (d == 0 && head[c] == want_z) ++q;
    else if (q > 0 && head[c] == want_y) ++d;
    else
      throw ConfigError("column " + std::to_string(c + 1) + ": header '" + head[c] + "', expected '" +
                            (d == 0 ? want_z + "' or '" + want_y : want_y) + "'",
                        1);
  }
  if (q == 0 || d == 0) throw ConfigError("header needs z1..zq,y1..yd", 1);

  std::vector<double> vals;
  int lineno = 1;
  Eigen::Index n = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> cells = split(line, ',');
    if (cells.size() != head.size())
      throw ConfigError("expected " + std::to_string(head.size()) + " columns, found " +
                            std::to_string(cells.size()),
                        lineno);
    for (size_t c = 0; c < cells.size(); ++c) {
      const auto v = parse_double(cells[c]);
      if (!v || !std::isfinite(*v))
        throw ConfigError("column " + std::to_string(c + 1) + " (" + head[c] + "): bad number '" +
                              cells[c] + "'",
                          lineno);
      vals.push_back(*v);
    }
    ++n;
  }
  if (n == 0) throw ConfigError("dataset has a header but no rows", lineno);
  RowMatrix z(n, q), y(n, d);
  for (Eigen::Index t = 0; t < n; ++t) {
    for (int i = 0; i < q; ++i) z(t, i) = vals[t * (q + d) + i];
    for (int j = 0; j < d; ++j) y(t, j) = vals[t * (q + d) + q + j];
  }
  return Dataset(std::move(z), std::move(y));
}

inline Dataset read_dataset_csv(const std::string& path) {
  try {
    return parse_dataset_csv(read_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError::in_file(path, e);
  }
}

// ---------------------------------------------------------------------------
// JSON: {arch: {q, hidden, d, activation}, values: [...]}

inline json to_json(const Architecture& a) {
  return {{"q", a.input_dim}, {"hidden", a.hidden_dims}, {"d", a.output_dim},
          {"activation", to_string(a.activation)}};
}

inline json to_json(const Vector& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

inline json to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json weights_json(const ParamVector& w) {
  return {{"arch", to_json(w.arch)}, {"values", to_json(w.values)}};
}

namespace detail {

template <class F>
auto json_guard(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

}  // namespace detail

inline Architecture architecture_from_json(const json& j) {
  Architecture a(j.at("q").get<int>(), j.at("hidden").get<std::vector<int>>(), j.at("d").get<int>());
  if (j.contains("activation")) a.activation = activation_from_string(j.at("activation").get<std::string>());
  a.validate();
  return a;
}

inline Vector vector_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline Matrix matrix_from_json(const json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  if (rows.empty()) throw ConfigError("empty matrix");
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) throw ConfigError("ragged matrix");
    for (size_t k = 0; k < rows[i].size(); ++k) m(i, k) = rows[i][k];
  }
  return m;
}

inline ParamVector weights_from_json(const json& j) {
  return detail::json_guard("weights", [&] {
    return ParamVector(architecture_from_json(j.at("arch")), vector_from_json(j.at("values")));
  });
}

inline ParamVector read_weights(const std::string& path) {
  return detail::json_guard(path, [&] { return weights_from_json(json::parse(read_file(path))); });
}

/// Truth file: {arch, w0, gamma0, seed}.
inline json truth_json(const ParamVector& w0, const SpdMatrix& gamma0, std::uint64_t seed) {
  return {{"arch", to_json(w0.arch)}, {"w0", to_json(w0.values)}, {"gamma0", to_json(gamma0.entries())},
          {"seed", seed}};
}

/// A d x d matrix given either as a bare JSON array of rows or as the
/// "gamma0" member of an object (so a truth file can be passed directly).
inline SpdMatrix read_gamma(const std::string& path) {
  return detail::json_guard(path, [&] {
    const json j = json::parse(read_file(path));
    const Matrix m = matrix_from_json(j.is_object() ? j.at("gamma0") : j);
    if (m.rows() != m.cols()) throw ConfigError(path + ": gamma must be square");
    try {
      return SpdMatrix(m);
    } catch (const NotPositiveDefinite&) {
      throw ConfigError(path + ": gamma is not positive definite");
    }
  });
}

/// Pretty-printed with a trailing newline. Doubles use the shortest text that
/// parses back to the same value.
inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace mlpreg
