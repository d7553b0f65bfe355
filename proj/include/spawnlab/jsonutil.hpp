// spawnlab/jsonutil.hpp

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABILITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// JSON <-> dense matrix/vector helpers shared by checkpoint and config IO.
// Doubles round-trip losslessly (shortest-representation serialization).

#ifndef SPAWNLAB_JSONUTIL_HPP_
#define SPAWNLAB_JSONUTIL_HPP_

#include <charconv>
#include <cstdint>
#include <string>

#include "json.hpp"
#include "spawnlab/errors.hpp"
#include "spawnlab/matrix.hpp"

namespace spawnlab {

// Shortest decimal form that round-trips to the same double.
inline std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline std::string format_hex16(uint64_t x) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[x & 0xf];
    x >>= 4;
  }
  return out;
}

inline nlohmann::json vec_to_json(const Vec& v) {
  return nlohmann::json(v);
}

inline Vec vec_from_json(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array()) throw ParseError(what + ": expected an array");
  Vec out;
  out.reserve(j.size());
  for (const auto& x : j) {
    if (!x.is_number()) throw ParseError(what + ": expected numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array()) throw ParseError(what + ": expected an array of rows");
  const int rows = static_cast<int>(j.size());
  if (rows == 0) return Matrix();
  if (!j[0].is_array()) throw ParseError(what + ": expected rows to be arrays");
  const int cols = static_cast<int>(j[0].size());
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    if (!j[r].is_array() || static_cast<int>(j[r].size()) != cols)
      throw ParseError(what + ": ragged rows");
    for (int c = 0; c < cols; ++c) {
      if (!j[r][c].is_number()) throw ParseError(what + ": expected numbers");
      m(r, c) = j[r][c].get<double>();
    }
  }
  return m;
}

}  // namespace spawnlab

#endif  // SPAWNLAB_JSONUTIL_HPP_
