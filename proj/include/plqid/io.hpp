#pragma once

#include <Eigen/Dense>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace plqid {

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, sep)) out.push_back(trim(tok));
  return out;
}

inline bool is_number(const std::string& s) {
  if (s.empty()) return false;
  char* end = nullptr;
  std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

}  // namespace detail

/// Reads a two-column CSV of (input, output) samples; a non-numeric first
/// line is treated as a header.
inline void read_series_csv(const std::string& path, Eigen::VectorXd& u, Eigen::VectorXd& y) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open input file: " + path);
  std::vector<double> us, ys;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    line = detail::trim(line);
    if (line.empty()) continue;
    auto cols = detail::split(line, ',');
    if (cols.size() < 2) throw std::runtime_error("expected two CSV columns in " + path);
    if (first && !detail::is_number(cols[0])) {
      first = false;
      continue;  // header
    }
    first = false;
    if (!detail::is_number(cols[0]) || !detail::is_number(cols[1]))
      throw std::runtime_error("non-numeric CSV value in " + path + ": " + line);
    us.push_back(std::stod(cols[0]));
    ys.push_back(std::stod(cols[1]));
  }
  if (us.empty()) throw std::runtime_error("no data rows in " + path);
  u = Eigen::Map<Eigen::VectorXd>(us.data(), static_cast<Eigen::Index>(us.size()));
  y = Eigen::Map<Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));
}

/// index,coefficient rows with 17 significant digits (round-trip exact).
inline void write_estimate_csv(const std::string& path, const Eigen::VectorXd& x) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open output file: " + path);
  out << "index,coefficient\n";
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < x.size(); ++i) out << (i + 1) << "," << x[i] << "\n";
}

/// Constraint rows a^T x <= bound. Each line is either the shorthand
/// "x>=0" (nonnegativity of every coefficient) or "a_1 a_2 ... a_n ; bound".
inline void read_constraints_file(const std::string& path, Eigen::Index n, Eigen::MatrixXd& A_x,
                                  Eigen::VectorXd& a_x) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open constraints file: " + path);
  std::vector<Eigen::VectorXd> rows;
  std::vector<double> bounds;
  std::string line;
  while (std::getline(in, line)) {
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::string compact;
    for (char ch : line)
      if (!std::isspace(static_cast<unsigned char>(ch))) compact += ch;
    if (compact == "x>=0") {
      for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::VectorXd row = Eigen::VectorXd::Zero(n);
        row[i] = -1.0;  // -x_i <= 0
        rows.push_back(row);
        bounds.push_back(0.0);
      }
      continue;
    }
    const auto parts = detail::split(line, ';');
    if (parts.size() != 2)
      throw std::runtime_error("constraint line must be 'a1 a2 ... ; bound': " + line);
    std::istringstream coeffs(parts[0]);
    Eigen::VectorXd row = Eigen::VectorXd::Zero(n);
    double v;
    Eigen::Index i = 0;
    while (coeffs >> v) {
      if (i >= n) throw std::runtime_error("too many coefficients in constraint: " + line);
      row[i++] = v;
    }
    if (i != n) throw std::runtime_error("expected " + std::to_string(n) + " coefficients: " + line);
    rows.push_back(row);
    bounds.push_back(std::stod(parts[1]));
  }
  A_x.resize(n, static_cast<Eigen::Index>(rows.size()));
  a_x.resize(static_cast<Eigen::Index>(rows.size()));
  for (size_t j = 0; j < rows.size(); ++j) {
    A_x.col(static_cast<Eigen::Index>(j)) = rows[j];
    a_x[static_cast<Eigen::Index>(j)] = bounds[j];
  }
}

/// Flat key=value config; '#' starts a comment.
inline std::map<std::string, std::string> read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("config line is not key=value: " + line);
    kv[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
  }
  return kv;
}

}  // namespace plqid
