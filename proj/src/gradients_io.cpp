#include "fodkit/gradients_io.hpp"

#include "fodkit/errors.hpp"

#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace fodkit {

namespace {

struct Token {
  double value;
  int column;  // 1-based
};

// Non-empty lines of numbers; `line_numbers` receives the 1-based source line
// of each returned row.
std::vector<std::vector<Token>> parse_rows(const std::string& text, const std::string& name,
                                           std::vector<int>& line_numbers) {
  std::vector<std::vector<Token>> rows;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::vector<Token> row;
    std::size_t i = 0;
    while (i < line.size()) {
      if (std::isspace(static_cast<unsigned char>(line[i])) || line[i] == ',') {
        ++i;
        continue;
      }
      if (line[i] == '#') break;
      std::size_t j = i;
      while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j])) && line[j] != ',') ++j;
      const std::string tok = line.substr(i, j - i);
      char* end = nullptr;
      errno = 0;
      const double v = std::strtod(tok.c_str(), &end);
      if (end != tok.c_str() + tok.size() || errno == ERANGE || !std::isfinite(v))
        throw ParseError(name, line_no, static_cast<int>(i) + 1, "not a number: '" + tok + "'");
      row.push_back({v, static_cast<int>(i) + 1});
      i = j;
    }
    if (!row.empty()) {
      rows.push_back(std::move(row));
      line_numbers.push_back(line_no);
    }
  }
  return rows;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ParseError(path, 0, 0, "cannot open file");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

GradientReadResult parse_gradients(const std::string& bvals_text, const std::string& bvecs_text,
                                   const std::string& bvals_name, const std::string& bvecs_name) {
  std::vector<int> bval_lines, bvec_lines;
  auto bvals = parse_rows(bvals_text, bvals_name, bval_lines);
  auto bvecs = parse_rows(bvecs_text, bvecs_name, bvec_lines);

  // A single column of values is accepted as well as a single row.
  if (bvals.size() > 1) {
    std::vector<Token> flat;
    for (std::size_t r = 0; r < bvals.size(); ++r) {
      if (bvals[r].size() != 1)
        throw ParseError(bvals_name, bval_lines[r], bvals[r][1].column, "expected a single row or a single column");
      flat.push_back(bvals[r][0]);
    }
    bvals = {flat};
  }
  if (bvals.empty()) throw ParseError(bvals_name, 1, 1, "no b-values");
  const std::size_t n = bvals[0].size();

  if (bvecs.size() != 3) {
    const int line = bvecs.size() > 3 ? bvec_lines[3] : (bvec_lines.empty() ? 1 : bvec_lines.back() + 1);
    throw ParseError(bvecs_name, line, 1, "expected 3 rows of vector components, found " + std::to_string(bvecs.size()));
  }
  for (std::size_t r = 0; r < 3; ++r) {
    if (bvecs[r].size() != n) {
      const int col = bvecs[r].size() > n ? bvecs[r][n].column : 1;
      throw ParseError(bvecs_name, bvec_lines[r], col,
                       "row has " + std::to_string(bvecs[r].size()) + " columns, bvals has " + std::to_string(n));
    }
  }

  GradientReadResult out;
  out.table.entries.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& e = out.table.entries[i];
    e.bvalue = bvals[0][i].value;
    if (e.bvalue < 0.0) throw ParseError(bvals_name, bval_lines[0], bvals[0][i].column, "negative b-value");
    Direction d(bvecs[0][i].value, bvecs[1][i].value, bvecs[2][i].value);
    if (e.bvalue < kB0Threshold) {
      e.direction = d;
      continue;
    }
    const double norm = d.norm();
    if (norm == 0.0)
      throw ParseError(bvecs_name, bvec_lines[0], bvecs[0][i].column,
                       "zero direction for b=" + std::to_string(e.bvalue));
    if (std::abs(norm - 1.0) > 1e-3) {
      std::ostringstream msg;
      msg << "column " << i + 1 << ": direction norm " << norm << " renormalized";
      out.warnings.push_back(msg.str());
    }
    e.direction = d / norm;
  }
  return out;
}

GradientReadResult read_gradients(const std::string& bvals_path, const std::string& bvecs_path) {
  return parse_gradients(slurp(bvals_path), slurp(bvecs_path), bvals_path, bvecs_path);
}

void write_gradients(const GradientTable& table, const std::string& bvals_path, const std::string& bvecs_path) {
  std::ofstream bv(bvals_path), bd(bvecs_path);
  if (!bv || !bd) throw std::runtime_error("write_gradients: cannot create output files");
  bv << std::setprecision(17);
  bd << std::setprecision(17);
  for (std::size_t i = 0; i < table.size(); ++i) bv << (i ? " " : "") << table.entries[i].bvalue;
  bv << "\n";
  for (int r = 0; r < 3; ++r) {
    for (std::size_t i = 0; i < table.size(); ++i) bd << (i ? " " : "") << table.entries[i].direction(r);
    bd << "\n";
  }
  if (!bv || !bd) throw std::runtime_error("write_gradients: write failed");
}

}  // namespace fodkit
