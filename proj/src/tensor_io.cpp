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

#include "ensdiv/tensor_io.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <iterator>
#include <sstream>

#include "ensdiv/error.hpp"
#include "json.hpp"

namespace ensdiv::io {
namespace {

template <typename T>
void put_le(std::ostream& os, T v) {
  std::array<char, sizeof(T)> buf;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  }
  os.write(buf.data(), buf.size());
}

template <typename T>
T get_le(std::istream& is, std::string_view what) {
  std::array<unsigned char, sizeof(T)> buf;
  is.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (is.gcount() != static_cast<std::streamsize>(buf.size())) {
    fail(ErrorCode::kFormat, "truncated file while reading " + std::string(what));
  }
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) { put_le(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { put_le(os, v); }
void write_f64(std::ostream& os, double v) { put_le(os, std::bit_cast<std::uint64_t>(v)); }

void write_f64s(std::ostream& os, std::span<const double> values) {
  for (double v : values) write_f64(os, v);
}

std::uint32_t read_u32(std::istream& is, std::string_view what) {
  return get_le<std::uint32_t>(is, what);
}

std::uint64_t read_u64(std::istream& is, std::string_view what) {
  return get_le<std::uint64_t>(is, what);
}

void read_f64s(std::istream& is, std::span<double> out, std::string_view what) {
  for (double& v : out) v = std::bit_cast<double>(get_le<std::uint64_t>(is, what));
}

std::string read_bytes(std::istream& is, std::size_t n, std::string_view what) {
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (is.gcount() != static_cast<std::streamsize>(n)) {
    fail(ErrorCode::kFormat, "truncated file while reading " + std::string(what));
  }
  return s;
}

void write_preamble(std::ostream& os, std::string_view magic, std::uint32_t version,
                    std::string_view header) {
  os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
  write_u32(os, version);
  write_u64(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
}

std::string read_preamble(std::istream& is, std::string_view magic, std::uint32_t version) {
  std::string got(magic.size(), '\0');
  is.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (is.gcount() != static_cast<std::streamsize>(got.size()) || got != magic) {
    fail(ErrorCode::kVersionMismatch,
         "bad magic bytes: expected " + std::string(magic) + " file");
  }
  const std::uint32_t v = read_u32(is, "format version");
  if (v != version) {
    fail(ErrorCode::kVersionMismatch, "unsupported format version " + std::to_string(v) +
                                          " (expected " + std::to_string(version) + ")");
  }
  const std::uint64_t len = read_u64(is, "header length");
  if (len > (std::uint64_t{1} << 30)) fail(ErrorCode::kFormat, "implausible header length");
  return read_bytes(is, static_cast<std::size_t>(len), "header");
}

void expect_eof(std::istream& is, std::string_view what) {
  if (is.peek() != std::char_traits<char>::eof()) {
    fail(ErrorCode::kFormat, "trailing bytes after " + std::string(what));
  }
}

void save_tensors(const std::filesystem::path& path, std::span<const NamedTensor> tensors) {
  nlohmann::json header = nlohmann::json::array();
  for (const NamedTensor& t : tensors) {
    header.push_back({{"name", t.name}, {"shape", t.tensor.shape()}});
  }
  std::ostringstream os(std::ios::binary);
  write_preamble(os, kTensorMagic, kTensorVersion, header.dump());
  for (const NamedTensor& t : tensors) write_f64s(os, t.tensor.data());
  write_file(path, os.str());
}

std::vector<NamedTensor> load_tensors(const std::filesystem::path& path) {
  std::istringstream is(read_file(path), std::ios::binary);
  const std::string text = read_preamble(is, kTensorMagic, kTensorVersion);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("tensor dump header: ") + e.what());
  }
  std::vector<NamedTensor> out;
  for (const auto& entry : header) {
    NamedTensor t;
    Shape shape;
    try {
      t.name = entry.at("name").get<std::string>();
      shape = entry.at("shape").get<Shape>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kFormat, std::string("tensor dump header entry: ") + e.what());
    }
    Tensor value(shape);
    read_f64s(is, value.data(), t.name);
    t.tensor = std::move(value);
    out.push_back(std::move(t));
  }
  expect_eof(is, "tensor dump");
  return out;
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) fail(ErrorCode::kIo, "cannot open " + tmp.string() + " for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) fail(ErrorCode::kIo, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::kIo, "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

}  // namespace ensdiv::io
