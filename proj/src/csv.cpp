// Copyright 2026 The ensdiv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include "ensdiv/csv.hpp"

#include <charconv>
#include <sstream>

#include "ensdiv/error.hpp"
#include "ensdiv/tensor_io.hpp"

namespace ensdiv::csv {

std::size_t Table::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  fail(ErrorCode::kNotFound, "no CSV column '" + name + "'");
}

std::string format_number(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string to_string(const Table& table) {
  std::string out;
  auto line = [&out](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out += ',';
      out += fields[i];
    }
    out += '\n';
  };
  line(table.header);
  for (const auto& row : table.rows) line(row);
  return out;
}

void write(const std::filesystem::path& path, const Table& table) {
  io::write_file(path, to_string(table));
}

Table read(const std::filesystem::path& path) {
  std::istringstream in(io::read_file(path));
  Table table;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      fields.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (first) {
      table.header = std::move(fields);
      first = false;
    } else {
      if (fields.size() != table.header.size()) {
        fail(ErrorCode::kFormat, path.string() + ": row " + std::to_string(table.rows.size() + 1) +
                                     " has " + std::to_string(fields.size()) + " fields, expected " +
                                     std::to_string(table.header.size()));
      }
      table.rows.push_back(std::move(fields));
    }
  }
  if (first) fail(ErrorCode::kFormat, path.string() + ": empty CSV");
  return table;
}

double parse_double(const std::string& field) {
  double v = 0.0;
  const auto r = std::from_chars(field.data(), field.data() + field.size(), v);
  if (r.ec != std::errc() || r.ptr != field.data() + field.size()) {
    fail(ErrorCode::kFormat, "not a number: '" + field + "'");
  }
  return v;
}

std::size_t parse_index(const std::string& field) {
  std::size_t v = 0;
  const auto r = std::from_chars(field.data(), field.data() + field.size(), v);
  if (r.ec != std::errc() || r.ptr != field.data() + field.size()) {
    fail(ErrorCode::kFormat, "not a non-negative integer: '" + field + "'");
  }
  return v;
}

}  // namespace ensdiv::csv
