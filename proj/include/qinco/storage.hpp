// Copyright 2026 the qinco-cpp authors
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

#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <deque>
#include <fstream>
#include <iterator>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "qinco/codec.hpp"
#include "qinco/linalg.hpp"
#include "qinco/qinco_model.hpp"
#include "qinco/search.hpp"

namespace qinco {

class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

/// Little-endian byte sink.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void i32(std::int32_t v) { put(static_cast<std::uint32_t>(v), 4); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void str(std::string_view s) {
    u64(s.size());
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  template <typename T>
  void scalar(T v) {
    if constexpr (sizeof(T) == 4) {
      f32(static_cast<float>(v));
    } else {
      f64(static_cast<double>(v));
    }
  }

  std::vector<std::uint8_t>& buffer() { return buf_; }
  std::size_t size() const { return buf_.size(); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

/// Little-endian byte source; every failure reports the offending offset.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data, std::size_t base = 0) : data_(data), base_(base) {}

  std::size_t offset() const { return base_ + pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return pos_ == data_.size(); }

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  std::int32_t i32() { return static_cast<std::int32_t>(static_cast<std::uint32_t>(get(4))); }
  float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(get(4))); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::string str() {
    const std::uint64_t n = u64();
    auto b = bytes(static_cast<std::size_t>(n));
    return {b.begin(), b.end()};
  }
  template <typename T>
  T scalar(std::uint8_t width) {
    if (width == 4) return static_cast<T>(f32());
    if (width == 8) return static_cast<T>(f64());
    throw FormatError("unsupported scalar width " + std::to_string(width), offset());
  }

  [[noreturn]] void fail(const std::string& what) const { throw FormatError(what, offset()); }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) {
      throw FormatError("truncated input: need " + std::to_string(n) + " bytes, " + std::to_string(remaining()) +
                            " left",
                        offset());
    }
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const std::uint8_t> data_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// fvecs / bvecs / ivecs: per record a little-endian int32 dimension d followed
// by d elements (float32, uint8 or int32).

enum class VecsKind : std::uint8_t { f32, u8, i32 };

inline std::size_t element_size(VecsKind k) { return k == VecsKind::u8 ? 1 : 4; }

inline VecsKind vecs_kind_from_path(const std::string& path) {
  auto ends = [&](std::string_view s) { return path.size() >= s.size() && path.compare(path.size() - s.size(), s.size(), s) == 0; };
  if (ends(".fvecs")) return VecsKind::f32;
  if (ends(".bvecs")) return VecsKind::u8;
  if (ends(".ivecs")) return VecsKind::i32;
  throw std::invalid_argument("cannot infer vecs kind from '" + path + "'");
}

/// Parses a vecs buffer; u8 elements are widened to 0..255 and i32 elements
/// converted to T.
template <typename T>
Matrix<T> parse_vecs(std::span<const std::uint8_t> bytes, VecsKind kind) {
  ByteReader r(bytes);
  std::size_t dim = 0;
  std::vector<T> values;
  std::size_t rows = 0;
  while (!r.done()) {
    const std::size_t record = r.offset();
    if (r.remaining() < 4) r.fail("truncated dimension field");
    const std::int32_t d = r.i32();
    if (d <= 0) throw FormatError("invalid dimension " + std::to_string(d), record);
    if (rows == 0) {
      dim = static_cast<std::size_t>(d);
    } else if (static_cast<std::size_t>(d) != dim) {
      throw FormatError("inconsistent dimension " + std::to_string(d) + " (expected " + std::to_string(dim) + ")",
                        record);
    }
    if (r.remaining() < dim * element_size(kind)) {
      throw FormatError("truncated record " + std::to_string(rows) + ": need " +
                            std::to_string(dim * element_size(kind)) + " bytes, " + std::to_string(r.remaining()) +
                            " left",
                        r.offset());
    }
    for (std::size_t i = 0; i < dim; ++i) {
      switch (kind) {
        case VecsKind::f32: values.push_back(static_cast<T>(r.f32())); break;
        case VecsKind::u8: values.push_back(static_cast<T>(r.u8())); break;
        case VecsKind::i32: values.push_back(static_cast<T>(r.i32())); break;
      }
    }
    ++rows;
  }
  return Matrix<T>(rows, dim, std::move(values));
}

template <typename T>
std::vector<std::uint8_t> serialize_vecs(const Matrix<T>& m, VecsKind kind) {
  if (m.cols() == 0 && m.rows() > 0) throw std::invalid_argument("serialize_vecs: zero-dimensional rows");
  ByteWriter w;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    w.i32(static_cast<std::int32_t>(m.cols()));
    for (T v : m.row(i)) {
      switch (kind) {
        case VecsKind::f32: w.f32(static_cast<float>(v)); break;
        case VecsKind::u8: w.u8(static_cast<std::uint8_t>(v)); break;
        case VecsKind::i32: w.i32(static_cast<std::int32_t>(v)); break;
      }
    }
  }
  return std::move(w.buffer());
}

template <typename T = float>
Matrix<T> read_vecs(const std::string& path, VecsKind kind) {
  const auto bytes = read_file(path);
  try {
    return parse_vecs<T>(bytes, kind);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what(), e.offset());
  }
}

template <typename T = float>
Matrix<T> read_vecs(const std::string& path) {
  return read_vecs<T>(path, vecs_kind_from_path(path));
}

template <typename T>
void write_vecs(const std::string& path, const Matrix<T>& m, VecsKind kind) {
  write_file(path, serialize_vecs(m, kind));
}

// ---------------------------------------------------------------------------
// Containers: 8-byte magic, u32 version, u32 section count, then sections
// each prefixed by a u64 byte length. All values little-endian.

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::string_view kModelMagic = "QINCOMDL";
inline constexpr std::string_view kCodesMagic = "QINCOCDS";
inline constexpr std::string_view kIndexMagic = "QINCOIVF";

class ContainerWriter {
 public:
  ContainerWriter(std::string_view magic) : magic_(magic) {}
  ByteWriter& section() {
    sections_.emplace_back();
    return sections_.back();
  }
  std::vector<std::uint8_t> finish() {
    ByteWriter w;
    w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(magic_.data()), magic_.size()));
    w.u32(kFormatVersion);
    w.u32(static_cast<std::uint32_t>(sections_.size()));
    for (auto& s : sections_) {
      w.u64(s.size());
      w.bytes(s.buffer());
    }
    return std::move(w.buffer());
  }

 private:
  std::string_view magic_;
  std::deque<ByteWriter> sections_;
};

class ContainerReader {
 public:
  ContainerReader(std::span<const std::uint8_t> bytes, std::string_view magic) {
    ByteReader r(bytes);
    auto m = r.bytes(magic.size());
    if (std::string_view(reinterpret_cast<const char*>(m.data()), m.size()) != magic) {
      throw FormatError("bad magic: expected " + std::string(magic), 0);
    }
    const std::size_t version_at = r.offset();
    const std::uint32_t version = r.u32();
    if (version != kFormatVersion) {
      throw FormatError("unsupported format version " + std::to_string(version) + " (this build reads " +
                            std::to_string(kFormatVersion) + ")",
                        version_at);
    }
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::uint64_t len = r.u64();
      const std::size_t at = r.offset();
      if (len > r.remaining()) {
        throw FormatError("section " + std::to_string(i) + " claims " + std::to_string(len) + " bytes, " +
                              std::to_string(r.remaining()) + " left",
                          at);
      }
      sections_.emplace_back(r.bytes(static_cast<std::size_t>(len)), at);
    }
    if (!r.done()) r.fail("trailing bytes after last section");
  }

  std::size_t count() const { return sections_.size(); }
  ByteReader section(std::size_t i) const {
    if (i >= sections_.size()) throw FormatError("missing section " + std::to_string(i), 0);
    return ByteReader(sections_[i].first, sections_[i].second);
  }

 private:
  std::vector<std::pair<std::span<const std::uint8_t>, std::size_t>> sections_;
};

namespace detail {

template <typename T>
void write_tensor(ByteWriter& w, const Matrix<T>& m) {
  w.u64(m.rows());
  w.u64(m.cols());
  for (T v : m.flat()) w.scalar<T>(v);
}

template <typename T>
Matrix<T> read_tensor(ByteReader& r, std::uint8_t width) {
  const std::size_t at = r.offset();
  const std::uint64_t rows = r.u64();
  const std::uint64_t cols = r.u64();
  if (cols != 0 && rows > r.remaining() / std::max<std::uint64_t>(cols * width, 1)) {
    throw FormatError("tensor " + std::to_string(rows) + "x" + std::to_string(cols) + " exceeds section", at);
  }
  Matrix<T> m(rows, cols);
  for (T& v : m.flat()) v = r.scalar<T>(width);
  return m;
}

template <typename T>
void expect_done(const ByteReader& r, const char* what) {
  if (!r.done()) r.fail(std::string("unexpected trailing bytes in ") + what + " section");
}

// Indices are stored with 1 byte when K ≤ 256, else 2 bytes.
inline void write_indices(ByteWriter& w, std::span<const std::uint32_t> idx, std::size_t k) {
  for (std::uint32_t v : idx) {
    if (k <= 256) {
      w.u8(static_cast<std::uint8_t>(v));
    } else {
      w.u8(static_cast<std::uint8_t>(v));
      w.u8(static_cast<std::uint8_t>(v >> 8));
    }
  }
}

inline void read_indices(ByteReader& r, std::span<std::uint32_t> out, std::size_t k) {
  for (auto& v : out) {
    const std::size_t at = r.offset();
    v = k <= 256 ? r.u8() : (static_cast<std::uint32_t>(r.u8()) | (static_cast<std::uint32_t>(r.u8()) << 8));
    if (v >= k) throw FormatError("index " + std::to_string(v) + " exceeds K=" + std::to_string(k), at);
  }
}

}  // namespace detail

/// Serializes config, norm scale and every tensor in visit() order.
template <typename T>
std::vector<std::uint8_t> serialize_model(const QincoModel<T>& model, std::string_view metadata = {}) {
  ContainerWriter c(kModelMagic);
  ByteWriter& cfg = c.section();
  const QincoConfig& q = model.config;
  cfg.u32(static_cast<std::uint32_t>(q.dim));
  cfg.u32(static_cast<std::uint32_t>(q.steps));
  cfg.u32(static_cast<std::uint32_t>(q.codebook_size));
  cfg.u32(static_cast<std::uint32_t>(q.blocks));
  cfg.u32(static_cast<std::uint32_t>(q.hidden));
  cfg.u8(static_cast<std::uint8_t>(q.variant));
  cfg.u8(q.ivf_coupled_step1 ? 1 : 0);
  cfg.u8(static_cast<std::uint8_t>(sizeof(T)));
  cfg.scalar<T>(model.norm_scale);
  ByteWriter& tensors = c.section();
  std::uint64_t count = 0;
  model.visit([&](const Matrix<T>&) { ++count; });
  tensors.u64(count);
  model.visit([&](const Matrix<T>& m) { detail::write_tensor(tensors, m); });
  c.section().str(metadata);
  return c.finish();
}

template <typename T>
QincoModel<T> parse_model(std::span<const std::uint8_t> bytes, std::string* metadata = nullptr) {
  ContainerReader c(bytes, kModelMagic);
  ByteReader cfg = c.section(0);
  QincoConfig q;
  q.dim = cfg.u32();
  q.steps = cfg.u32();
  q.codebook_size = cfg.u32();
  q.blocks = cfg.u32();
  q.hidden = cfg.u32();
  const std::size_t variant_at = cfg.offset();
  const std::uint8_t variant = cfg.u8();
  if (variant > 1) throw FormatError("unknown variant " + std::to_string(variant), variant_at);
  q.variant = static_cast<Variant>(variant);
  q.ivf_coupled_step1 = cfg.u8() != 0;
  const std::uint8_t width = cfg.u8();
  try {
    q.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what(), 0);
  }
  QincoModel<T> model(q);
  model.norm_scale = cfg.scalar<T>(width);
  detail::expect_done<T>(cfg, "config");

  ByteReader tr = c.section(1);
  const std::size_t count_at = tr.offset();
  const std::uint64_t count = tr.u64();
  auto params = model.parameters();
  if (count != params.size()) {
    throw FormatError("tensor count " + std::to_string(count) + " does not match config (" +
                          std::to_string(params.size()) + ")",
                      count_at);
  }
  for (Matrix<T>* p : params) {
    const std::size_t at = tr.offset();
    Matrix<T> m = detail::read_tensor<T>(tr, width);
    if (m.rows() != p->rows() || m.cols() != p->cols()) {
      throw FormatError("tensor shape " + shape_str(m.rows(), m.cols()) + " does not match expected " +
                            shape_str(p->rows(), p->cols()),
                        at);
    }
    *p = std::move(m);
  }
  detail::expect_done<T>(tr, "tensor");
  ByteReader meta = c.section(2);
  std::string md = meta.str();
  if (metadata) *metadata = std::move(md);
  return model;
}

template <typename T>
void save_model(const std::string& path, const QincoModel<T>& model, std::string_view metadata = {}) {
  write_file(path, serialize_model(model, metadata));
}

template <typename T = float>
QincoModel<T> load_model(const std::string& path, std::string* metadata = nullptr) {
  const auto bytes = read_file(path);
  try {
    return parse_model<T>(bytes, metadata);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what(), e.offset());
  }
}

inline std::vector<std::uint8_t> serialize_codes(const CodeArray& codes, std::string_view metadata = {}) {
  codes.validate();
  ContainerWriter c(kCodesMagic);
  ByteWriter& h = c.section();
  h.u64(codes.n);
  h.u32(static_cast<std::uint32_t>(codes.steps));
  h.u32(static_cast<std::uint32_t>(codes.codebook_size));
  h.u8(static_cast<std::uint8_t>(codes.index_bytes()));
  h.u8(codes.has_norms() ? 1 : 0);
  detail::write_indices(c.section(), codes.indices, codes.codebook_size);
  ByteWriter& norms = c.section();
  for (float v : codes.norms) norms.f32(v);
  c.section().str(metadata);
  return c.finish();
}

inline CodeArray parse_codes(std::span<const std::uint8_t> bytes, std::string* metadata = nullptr) {
  ContainerReader c(bytes, kCodesMagic);
  ByteReader h = c.section(0);
  CodeArray codes;
  codes.n = h.u64();
  codes.steps = h.u32();
  const std::size_t k_at = h.offset();
  codes.codebook_size = h.u32();
  if (codes.codebook_size == 0 || codes.codebook_size > 65536) {
    throw FormatError("K=" + std::to_string(codes.codebook_size) + " outside [1, 65536]", k_at);
  }
  const std::size_t width_at = h.offset();
  const std::uint8_t width = h.u8();
  if (width != codes.index_bytes()) {
    throw FormatError("index width " + std::to_string(width) + " inconsistent with K=" +
                          std::to_string(codes.codebook_size),
                      width_at);
  }
  const bool has_norms = h.u8() != 0;
  detail::expect_done<float>(h, "header");
  ByteReader idx = c.section(1);
  if (idx.remaining() != codes.n * codes.steps * width) {
    idx.fail("index section holds " + std::to_string(idx.remaining()) + " bytes, expected " +
             std::to_string(codes.n * codes.steps * width));
  }
  codes.indices.resize(codes.n * codes.steps);
  detail::read_indices(idx, codes.indices, codes.codebook_size);
  ByteReader nr = c.section(2);
  if (has_norms) {
    if (nr.remaining() != codes.n * 4) nr.fail("norm section size does not match N");
    codes.norms.resize(codes.n);
    for (std::size_t i = 0; i < codes.n; ++i) {
      const std::size_t at = nr.offset();
      codes.norms[i] = nr.f32();
      if (!(codes.norms[i] >= 0.0f)) throw FormatError("negative or NaN norm", at);
    }
  }
  detail::expect_done<float>(nr, "norm");
  ByteReader meta = c.section(3);
  std::string md = meta.str();
  if (metadata) *metadata = std::move(md);
  return codes;
}

inline void save_codes(const std::string& path, const CodeArray& codes, std::string_view metadata = {}) {
  write_file(path, serialize_codes(codes, metadata));
}

inline CodeArray load_codes(const std::string& path, std::string* metadata = nullptr) {
  const auto bytes = read_file(path);
  try {
    return parse_codes(bytes, metadata);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what(), e.offset());
  }
}

template <typename T>
std::vector<std::uint8_t> serialize_index(const IvfIndex<T>& index, std::string_view metadata = {}) {
  ContainerWriter c(kIndexMagic);
  ByteWriter& h = c.section();
  h.u64(index.k_ivf());
  h.u8(static_cast<std::uint8_t>(sizeof(T)));
  detail::write_tensor(h, index.centroids);
  c.section().bytes(serialize_model(index.model));
  ByteWriter& aq = c.section();
  aq.u64(index.aq.codebooks.size());
  for (const auto& cb : index.aq.codebooks) detail::write_tensor(aq, cb);
  aq.f64(index.aq.fitted_mse);
  ByteWriter& lists = c.section();
  const std::size_t k = index.model.codebook_size();
  for (const auto& l : index.lists) {
    lists.u64(l.ids.size());
    for (std::uint32_t id : l.ids) lists.u32(id);
    detail::write_indices(lists, l.codes, k);
    for (float v : l.norms) lists.f32(v);
  }
  c.section().str(metadata);
  return c.finish();
}

template <typename T>
IvfIndex<T> parse_index(std::span<const std::uint8_t> bytes, std::string* metadata = nullptr) {
  ContainerReader c(bytes, kIndexMagic);
  IvfIndex<T> index;
  ByteReader h = c.section(0);
  const std::uint64_t k_ivf = h.u64();
  const std::uint8_t width = h.u8();
  index.centroids = detail::read_tensor<T>(h, width);
  if (index.centroids.rows() != k_ivf) h.fail("centroid count does not match K_ivf");
  detail::expect_done<T>(h, "index header");
  ByteReader mr = c.section(1);
  const std::size_t model_at = mr.offset();
  try {
    index.model = parse_model<T>(mr.bytes(mr.remaining()));
  } catch (const FormatError& e) {
    throw FormatError(std::string("embedded model: ") + e.what(), model_at + e.offset());
  }
  if (index.model.dim() != index.centroids.cols()) h.fail("centroid dimension does not match model");
  ByteReader ar = c.section(2);
  const std::uint64_t steps = ar.u64();
  if (steps != index.model.steps()) ar.fail("AQ codebook count does not match model");
  for (std::uint64_t m = 0; m < steps; ++m) {
    Matrix<T> cb = detail::read_tensor<T>(ar, width);
    if (cb.rows() != index.model.codebook_size() || cb.cols() != index.model.dim()) {
      ar.fail("AQ codebook shape does not match model");
    }
    index.aq.codebooks.push_back(std::move(cb));
  }
  index.aq.fitted_mse = ar.f64();
  detail::expect_done<T>(ar, "AQ");
  ByteReader lr = c.section(3);
  const std::size_t k = index.model.codebook_size();
  const std::size_t m = index.model.steps();
  index.lists.resize(k_ivf);
  for (auto& l : index.lists) {
    const std::size_t at = lr.offset();
    const std::uint64_t n = lr.u64();
    if (n > lr.remaining()) throw FormatError("list length " + std::to_string(n) + " exceeds section", at);
    l.ids.resize(n);
    for (auto& id : l.ids) id = lr.u32();
    l.codes.resize(n * m);
    detail::read_indices(lr, l.codes, k);
    l.norms.resize(n);
    for (auto& v : l.norms) v = lr.f32();
  }
  detail::expect_done<T>(lr, "inverted list");
  ByteReader meta = c.section(4);
  std::string md = meta.str();
  if (metadata) *metadata = std::move(md);
  index.refresh_tables();
  return index;
}

template <typename T>
void save_index(const std::string& path, const IvfIndex<T>& index, std::string_view metadata = {}) {
  write_file(path, serialize_index(index, metadata));
}

template <typename T = float>
IvfIndex<T> load_index(const std::string& path, std::string* metadata = nullptr) {
  const auto bytes = read_file(path);
  try {
    return parse_index<T>(bytes, metadata);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what(), e.offset());
  }
}

}  // namespace qinco
