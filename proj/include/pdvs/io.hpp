/*
 * Copyright 2026 The pdvs Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Binary vector/graph files and atomic artifact writes.
//
// Vector file: repeated records of [u32 d][d x f32], all little-endian, all
// records with the same d.
// Graph file: [u64 N][u64 D] then N*D u32 ids, row-major, little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "pdvs/ann_graph.hpp"
#include "pdvs/common.hpp"

namespace pdvs::io {

namespace detail {

template <typename UInt>
void put_le(std::vector<unsigned char>& out, UInt v) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

template <typename UInt>
UInt get_le(const unsigned char* p) {
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(p[i]) << (8 * i);
  return v;
}

inline std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
inline void write_atomic(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::vector<unsigned char> encode_vectors(const VectorStore& store) {
  std::vector<unsigned char> out;
  out.reserve(store.count() * (4 + 4 * store.dim()));
  for (std::size_t i = 0; i < store.count(); ++i) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.dim()));
    for (float v : store.row(i)) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

inline VectorStore decode_vectors(std::span<const unsigned char> bytes) {
  std::size_t pos = 0;
  std::uint32_t dim = 0;
  std::vector<float> data;
  while (pos < bytes.size()) {
    if (bytes.size() - pos < 4) throw InputError("vector file: truncated record header");
    const auto d = detail::get_le<std::uint32_t>(bytes.data() + pos);
    pos += 4;
    if (d == 0) throw InputError("vector file: zero dimension");
    if (dim == 0) dim = d;
    if (d != dim) throw InputError("vector file: inconsistent dimensions");
    if ((bytes.size() - pos) / 4 < d) throw InputError("vector file: truncated record");
    for (std::uint32_t j = 0; j < d; ++j, pos += 4)
      data.push_back(std::bit_cast<float>(detail::get_le<std::uint32_t>(bytes.data() + pos)));
  }
  if (data.empty()) throw InputError("vector file: no records");
  return VectorStore(dim, std::move(data));
}

inline std::vector<unsigned char> encode_graph(const NeighborGraph& graph) {
  std::vector<unsigned char> out;
  out.reserve(16 + 4 * graph.adjacency.size());
  detail::put_le<std::uint64_t>(out, graph.rows());
  detail::put_le<std::uint64_t>(out, graph.degree);
  for (VectorId id : graph.adjacency) detail::put_le<std::uint32_t>(out, id);
  return out;
}

inline NeighborGraph decode_graph(std::span<const unsigned char> bytes) {
  if (bytes.size() < 16) throw InputError("graph file: truncated header");
  const auto n = detail::get_le<std::uint64_t>(bytes.data());
  const auto d = detail::get_le<std::uint64_t>(bytes.data() + 8);
  if (d == 0) throw InputError("graph file: zero degree");
  if ((bytes.size() - 16) / 4 / d != n || (bytes.size() - 16) != n * d * 4)
    throw InputError("graph file: payload size does not match header");
  NeighborGraph graph{static_cast<std::size_t>(d), std::vector<VectorId>(n * d)};
  for (std::size_t i = 0; i < graph.adjacency.size(); ++i)
    graph.adjacency[i] = detail::get_le<std::uint32_t>(bytes.data() + 16 + 4 * i);
  return graph;
}

inline std::string_view as_chars(const std::vector<unsigned char>& bytes) {
  return {reinterpret_cast<const char*>(bytes.data()), bytes.size()};
}

inline void write_vectors(const std::filesystem::path& path, const VectorStore& store) {
  write_atomic(path, as_chars(encode_vectors(store)));
}
inline VectorStore read_vectors(const std::filesystem::path& path) {
  return decode_vectors(detail::read_all(path));
}
inline void write_graph(const std::filesystem::path& path, const NeighborGraph& graph) {
  write_atomic(path, as_chars(encode_graph(graph)));
}
inline NeighborGraph read_graph(const std::filesystem::path& path) {
  return decode_graph(detail::read_all(path));
}

}  // namespace pdvs::io
