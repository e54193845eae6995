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


// Minimal CSV reading and writing for reports and prediction logs. Fields
// never contain commas or quotes, so no quoting is performed.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace ensdiv::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name; kNotFound when absent.
  std::size_t column(const std::string& name) const;
};

/// Shortest representation that round-trips, e.g. "0.1", "3", "-2.5e-07".
std::string format_number(double v);

std::string to_string(const Table& table);
/// Byte-exact write via io::write_file.
void write(const std::filesystem::path& path, const Table& table);
/// kFormat on ragged rows or an empty file.
Table read(const std::filesystem::path& path);

double parse_double(const std::string& field);
std::size_t parse_index(const std::string& field);

}  // namespace ensdiv::csv
