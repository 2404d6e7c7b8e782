/*
 * Copyright 2026 The Cytoclass Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "cytoclass/model_store.hpp"

#include <bit>
#include <cstring>

#include "cytoclass/config.hpp"
#include "cytoclass/error.hpp"
#include "cytoclass/image.hpp"
#include "cytoclass/io.hpp"
#include "cytoclass/parallel.hpp"

namespace cytoclass {
namespace {

using nlohmann::json;

constexpr char kCacheMagic[4] = {'H', 'O', 'G', 'F'};
constexpr char kBlobMagic[4] = {'M', 'D', 'L', 'B'};

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(ErrorCode::kTruncatedFile, "unexpected end of data");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void check_magic(std::span<const std::uint8_t> bytes, const char (&magic)[4], const char* what) {
  if (bytes.size() < 4) throw Error(ErrorCode::kTruncatedFile, std::string(what) + " shorter than its header");
  if (std::memcmp(bytes.data(), magic, 4) != 0) {
    throw Error(ErrorCode::kCorruptFile, std::string("not a ") + what + " (bad magic)");
  }
}

std::uint32_t stored_crc(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes.subspan(bytes.size() - 4));
  return r.u32();
}

}  // namespace

// ---------------------------------------------------------------------------
// Feature cache

std::vector<std::uint8_t> encode_feature_cache(const FeatureMatrix& f) {
  if (static_cast<Eigen::Index>(f.labels.size()) != f.rows()) {
    throw Error(ErrorCode::kLengthMismatch, "feature rows and labels differ in count");
  }
  ByteWriter w;
  w.raw(std::string_view(kCacheMagic, 4));
  w.u32(kFeatureCacheVersion);
  w.u64(static_cast<std::uint64_t>(f.rows()));
  w.u64(static_cast<std::uint64_t>(f.cols()));
  for (const int label : f.labels) {
    if (label < 0 || label > 255) throw Error(ErrorCode::kLabelOutOfRange, "label does not fit a byte");
    w.u8(static_cast<std::uint8_t>(label));
  }
  for (Eigen::Index i = 0; i < f.values.size(); ++i) w.f64(f.values.data()[i]);
  auto& bytes = w.bytes();
  const std::uint32_t crc = crc32_of(std::span(bytes).subspan(4));
  w.u32(crc);
  return std::move(bytes);
}

FeatureMatrix decode_feature_cache(std::span<const std::uint8_t> bytes, std::optional<Eigen::Index> expected_cols) {
  check_magic(bytes, kCacheMagic, "feature cache");
  ByteReader r(bytes.subspan(4));
  const std::uint32_t version = r.u32();
  if (version != kFeatureCacheVersion) {
    throw Error(ErrorCode::kVersionMismatch, "feature cache version " + std::to_string(version) + ", expected " +
                                                 std::to_string(kFeatureCacheVersion));
  }
  const std::uint64_t rows = r.u64();
  const std::uint64_t cols = r.u64();
  const std::uint64_t cells = rows * cols;
  if ((cols != 0 && cells / cols != rows) || cells > (std::uint64_t{1} << 40)) {
    throw Error(ErrorCode::kCorruptFile, "feature cache declares an impossible size");
  }
  const std::uint64_t expected = rows + 8 * cells + 4;
  if (r.remaining() < expected) throw Error(ErrorCode::kTruncatedFile, "feature cache payload is shorter than declared");
  if (r.remaining() > expected) throw Error(ErrorCode::kCorruptFile, "trailing bytes after feature cache");
  if (crc32_of(bytes.subspan(4, bytes.size() - 8)) != stored_crc(bytes)) {
    throw Error(ErrorCode::kChecksumFailure, "feature cache CRC mismatch");
  }
  if (expected_cols && static_cast<std::uint64_t>(*expected_cols) != cols) {
    throw Error(ErrorCode::kDimensionMismatch, "feature cache has " + std::to_string(cols) + " columns, expected " +
                                                   std::to_string(*expected_cols));
  }
  FeatureMatrix f;
  f.labels.resize(rows);
  for (auto& label : f.labels) label = r.u8();
  f.values.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < f.values.size(); ++i) f.values.data()[i] = r.f64();
  return f;
}

void write_feature_cache(const std::filesystem::path& path, const FeatureMatrix& features) {
  write_file_atomic(path, encode_feature_cache(features));
}

FeatureMatrix read_feature_cache(const std::filesystem::path& path, std::optional<Eigen::Index> expected_cols) {
  return decode_feature_cache(read_file_bytes(path), expected_cols);
}

// ---------------------------------------------------------------------------
// Blob

std::uint64_t BlobSection::element_count() const {
  std::uint64_t n = 1;
  for (const auto d : shape) n *= d;
  return n;
}

void Blob::put(const std::string& name, std::vector<std::uint64_t> shape, std::vector<double> values) {
  BlobSection s;
  s.dtype = BlobSection::Dtype::kF64;
  s.shape = std::move(shape);
  s.reals = std::move(values);
  if (s.element_count() != s.reals.size()) throw Error(ErrorCode::kShapeMismatch, name + ": shape and data disagree");
  sections[name] = std::move(s);
}

void Blob::put(const std::string& name, std::vector<std::uint64_t> shape, std::vector<std::int64_t> values) {
  BlobSection s;
  s.dtype = BlobSection::Dtype::kI64;
  s.shape = std::move(shape);
  s.ints = std::move(values);
  if (s.element_count() != s.ints.size()) throw Error(ErrorCode::kShapeMismatch, name + ": shape and data disagree");
  sections[name] = std::move(s);
}

const BlobSection& Blob::at(const std::string& name) const {
  const auto it = sections.find(name);
  if (it == sections.end()) throw Error(ErrorCode::kCorruptFile, "model blob lacks section '" + name + "'");
  return it->second;
}

const std::vector<double>& Blob::reals(const std::string& name) const {
  const auto& s = at(name);
  if (s.dtype != BlobSection::Dtype::kF64) throw Error(ErrorCode::kCorruptFile, name + ": expected f64 data");
  return s.reals;
}

const std::vector<std::int64_t>& Blob::ints(const std::string& name) const {
  const auto& s = at(name);
  if (s.dtype != BlobSection::Dtype::kI64) throw Error(ErrorCode::kCorruptFile, name + ": expected i64 data");
  return s.ints;
}

std::vector<std::uint8_t> encode_blob(const Blob& blob) {
  ByteWriter payload;
  payload.u32(static_cast<std::uint32_t>(blob.model_type.size()));
  payload.raw(blob.model_type);
  payload.u32(static_cast<std::uint32_t>(blob.sections.size()));
  for (const auto& [name, s] : blob.sections) {
    payload.u32(static_cast<std::uint32_t>(name.size()));
    payload.raw(name);
    payload.u8(static_cast<std::uint8_t>(s.dtype));
    payload.u32(static_cast<std::uint32_t>(s.shape.size()));
    for (const auto d : s.shape) payload.u64(d);
    if (s.dtype == BlobSection::Dtype::kF64) {
      for (const double v : s.reals) payload.f64(v);
    } else {
      for (const std::int64_t v : s.ints) payload.u64(static_cast<std::uint64_t>(v));
    }
  }
  ByteWriter w;
  w.raw(std::string_view(kBlobMagic, 4));
  w.u32(kModelBlobVersion);
  w.u64(payload.bytes().size());
  auto& bytes = w.bytes();
  bytes.insert(bytes.end(), payload.bytes().begin(), payload.bytes().end());
  w.u32(crc32_of(std::span(bytes).subspan(4)));
  return std::move(bytes);
}

Blob decode_blob(std::span<const std::uint8_t> bytes) {
  check_magic(bytes, kBlobMagic, "model blob");
  ByteReader header(bytes.subspan(4));
  const std::uint32_t version = header.u32();
  if (version != kModelBlobVersion) {
    throw Error(ErrorCode::kVersionMismatch, "model blob version " + std::to_string(version) + ", expected " +
                                                 std::to_string(kModelBlobVersion));
  }
  const std::uint64_t length = header.u64();
  if (header.remaining() < length + 4) throw Error(ErrorCode::kTruncatedFile, "model blob is shorter than declared");
  if (header.remaining() > length + 4) throw Error(ErrorCode::kCorruptFile, "trailing bytes after model blob");
  if (crc32_of(bytes.subspan(4, bytes.size() - 8)) != stored_crc(bytes)) {
    throw Error(ErrorCode::kChecksumFailure, "model blob CRC mismatch");
  }

  ByteReader r(bytes.subspan(16, static_cast<std::size_t>(length)));
  Blob blob;
  try {
    blob.model_type = r.str(r.u32());
    const std::uint32_t n_sections = r.u32();
    for (std::uint32_t i = 0; i < n_sections; ++i) {
      const std::string name = r.str(r.u32());
      BlobSection s;
      const std::uint8_t dtype = r.u8();
      if (dtype != 1 && dtype != 2) throw Error(ErrorCode::kCorruptFile, name + ": unknown dtype");
      s.dtype = static_cast<BlobSection::Dtype>(dtype);
      s.shape.resize(r.u32());
      for (auto& d : s.shape) d = r.u64();
      const std::uint64_t n = s.element_count();
      if (n > r.remaining() / 8) throw Error(ErrorCode::kCorruptFile, name + ": declared size exceeds payload");
      if (s.dtype == BlobSection::Dtype::kF64) {
        s.reals.resize(n);
        for (auto& v : s.reals) v = r.f64();
      } else {
        s.ints.resize(n);
        for (auto& v : s.ints) v = static_cast<std::int64_t>(r.u64());
      }
      blob.sections[name] = std::move(s);
    }
  } catch (const Error& e) {
    // The checksum matched, so a short section table means a malformed writer.
    if (e.code() == ErrorCode::kTruncatedFile) throw Error(ErrorCode::kCorruptFile, "malformed model blob");
    throw;
  }
  if (r.remaining() != 0) throw Error(ErrorCode::kCorruptFile, "unused bytes in model blob payload");
  return blob;
}

// ---------------------------------------------------------------------------
// Model families

namespace {

template <typename T>
std::vector<double> to_reals(const T& m) {
  return std::vector<double>(m.data(), m.data() + m.size());
}

std::vector<std::uint64_t> shape2(Eigen::Index r, Eigen::Index c) {
  return {static_cast<std::uint64_t>(r), static_cast<std::uint64_t>(c)};
}

std::vector<std::uint64_t> shape1(std::size_t n) { return {static_cast<std::uint64_t>(n)}; }

RowMatrix reals_matrix(const Blob& blob, const std::string& name) {
  const auto& s = blob.at(name);
  if (s.shape.size() != 2) throw Error(ErrorCode::kCorruptFile, name + ": expected a matrix");
  const auto& v = blob.reals(name);
  RowMatrix m(static_cast<Eigen::Index>(s.shape[0]), static_cast<Eigen::Index>(s.shape[1]));
  std::copy(v.begin(), v.end(), m.data());
  return m;
}

std::int64_t scalar_int(const Blob& blob, const std::string& name) {
  const auto& v = blob.ints(name);
  if (v.size() != 1) throw Error(ErrorCode::kCorruptFile, name + ": expected a scalar");
  return v[0];
}

double scalar_real(const Blob& blob, const std::string& name) {
  const auto& v = blob.reals(name);
  if (v.size() != 1) throw Error(ErrorCode::kCorruptFile, name + ": expected a scalar");
  return v[0];
}

std::vector<int> int_vector(const Blob& blob, const std::string& name) {
  const auto& v = blob.ints(name);
  return {v.begin(), v.end()};
}

// Trees are flattened into shared node arrays with per-tree offsets.
void put_trees(Blob& blob, const std::string& prefix, const std::vector<const DecisionTree*>& trees) {
  std::vector<std::int64_t> offsets = {0}, modes, feature, left, right, depth;
  std::vector<double> threshold, leaves;
  Eigen::Index width = trees.empty() ? 1 : trees.front()->leaf_values.cols();
  for (const auto* t : trees) {
    if (t->leaf_values.cols() != width || t->leaf_values.rows() != static_cast<Eigen::Index>(t->nodes.size())) {
      throw Error(ErrorCode::kShapeMismatch, "inconsistent tree leaf tables");
    }
    modes.push_back(t->mode == TreeMode::kClassify ? 0 : 1);
    for (std::size_t i = 0; i < t->nodes.size(); ++i) {
      const auto& n = t->nodes[i];
      feature.push_back(n.feature);
      threshold.push_back(n.threshold);
      left.push_back(n.left);
      right.push_back(n.right);
      depth.push_back(n.depth);
      for (Eigen::Index c = 0; c < width; ++c) leaves.push_back(t->leaf_values(static_cast<Eigen::Index>(i), c));
    }
    offsets.push_back(static_cast<std::int64_t>(feature.size()));
  }
  const std::size_t total = feature.size();
  blob.put(prefix + "offsets", shape1(offsets.size()), offsets);
  blob.put(prefix + "mode", shape1(modes.size()), modes);
  blob.put(prefix + "feature", shape1(total), std::move(feature));
  blob.put(prefix + "threshold", shape1(total), std::move(threshold));
  blob.put(prefix + "left", shape1(total), std::move(left));
  blob.put(prefix + "right", shape1(total), std::move(right));
  blob.put(prefix + "depth", shape1(total), std::move(depth));
  blob.put(prefix + "leaf_values", shape2(static_cast<Eigen::Index>(total), width), std::move(leaves));
}

std::vector<DecisionTree> get_trees(const Blob& blob, const std::string& prefix, int n_features) {
  const auto& offsets = blob.ints(prefix + "offsets");
  const auto& modes = blob.ints(prefix + "mode");
  const auto& feature = blob.ints(prefix + "feature");
  const auto& threshold = blob.reals(prefix + "threshold");
  const auto& left = blob.ints(prefix + "left");
  const auto& right = blob.ints(prefix + "right");
  const auto& depth = blob.ints(prefix + "depth");
  const RowMatrix leaves = reals_matrix(blob, prefix + "leaf_values");
  const std::size_t total = feature.size();
  if (offsets.empty() || modes.size() + 1 != offsets.size() || threshold.size() != total || left.size() != total ||
      right.size() != total || depth.size() != total || static_cast<std::size_t>(leaves.rows()) != total ||
      offsets.front() != 0 || static_cast<std::size_t>(offsets.back()) != total) {
    throw Error(ErrorCode::kCorruptFile, prefix + ": inconsistent tree tables");
  }
  std::vector<DecisionTree> trees(modes.size());
  for (std::size_t t = 0; t < trees.size(); ++t) {
    const auto begin = offsets[t], end = offsets[t + 1];
    if (end <= begin) throw Error(ErrorCode::kCorruptFile, prefix + ": empty tree");
    const auto count = end - begin;
    auto& tree = trees[t];
    tree.mode = modes[t] == 0 ? TreeMode::kClassify : TreeMode::kRegress;
    tree.nodes.resize(static_cast<std::size_t>(count));
    tree.leaf_values = leaves.middleRows(begin, count);
    for (std::int64_t i = 0; i < count; ++i) {
      auto& n = tree.nodes[static_cast<std::size_t>(i)];
      const auto g = static_cast<std::size_t>(begin + i);
      n.feature = static_cast<int>(feature[g]);
      n.threshold = threshold[g];
      n.left = static_cast<int>(left[g]);
      n.right = static_cast<int>(right[g]);
      n.depth = static_cast<int>(depth[g]);
      if (!n.is_leaf() && (n.feature >= n_features || n.left <= i || n.right <= i || n.left >= count ||
                           n.right >= count)) {
        throw Error(ErrorCode::kCorruptFile, prefix + ": invalid node links");
      }
    }
  }
  return trees;
}

void put_knn(Blob& blob, json& config, const KnnModel& m) {
  config["k"] = m.k;
  config["weighting"] = weighting_name(m.weighting);
  blob.put("train.values", shape2(m.train.rows(), m.train.cols()), to_reals(m.train.values));
  blob.put("train.labels", shape1(m.train.labels.size()),
           std::vector<std::int64_t>(m.train.labels.begin(), m.train.labels.end()));
  blob.put("k", {1}, std::vector<std::int64_t>{m.k});
  blob.put("weighting", {1}, std::vector<std::int64_t>{m.weighting == KnnWeighting::kMajority ? 0 : 1});
}

KnnModel get_knn(const Blob& blob) {
  KnnModel m;
  m.train.values = reals_matrix(blob, "train.values");
  m.train.labels = int_vector(blob, "train.labels");
  m.k = static_cast<int>(scalar_int(blob, "k"));
  m.weighting = scalar_int(blob, "weighting") == 0 ? KnnWeighting::kMajority : KnnWeighting::kInverseDistance;
  m.validate();
  return m;
}

void put_forest(Blob& blob, json& config, const Forest& f) {
  config["trees"] = f.cfg.n_trees;
  config["max_features"] = f.cfg.max_features;
  config["min_leaf"] = f.cfg.min_leaf;
  config["max_depth"] = f.cfg.max_depth;
  config["bootstrap"] = f.cfg.bootstrap;
  blob.put("config", {5},
           std::vector<std::int64_t>{f.cfg.n_trees, f.cfg.max_features, f.cfg.min_leaf, f.cfg.max_depth,
                                     f.cfg.bootstrap ? 1 : 0});
  blob.put("n_features", {1}, std::vector<std::int64_t>{f.n_features});
  blob.put("max_features", {1}, std::vector<std::int64_t>{f.max_features});
  std::vector<const DecisionTree*> trees;
  for (const auto& t : f.trees) trees.push_back(&t);
  put_trees(blob, "tree.", trees);
  const std::size_t rows = f.in_bag.empty() ? 0 : f.in_bag.front().size();
  std::vector<std::int64_t> bag;
  for (const auto& b : f.in_bag) {
    if (b.size() != rows) throw Error(ErrorCode::kShapeMismatch, "ragged in-bag table");
    bag.insert(bag.end(), b.begin(), b.end());
  }
  blob.put("in_bag", shape2(static_cast<Eigen::Index>(f.in_bag.size()), static_cast<Eigen::Index>(rows)),
           std::move(bag));
}

Forest get_forest(const Blob& blob) {
  Forest f;
  const auto& cfg = blob.ints("config");
  if (cfg.size() != 5) throw Error(ErrorCode::kCorruptFile, "forest config");
  f.cfg.n_trees = static_cast<int>(cfg[0]);
  f.cfg.max_features = static_cast<int>(cfg[1]);
  f.cfg.min_leaf = static_cast<int>(cfg[2]);
  f.cfg.max_depth = static_cast<int>(cfg[3]);
  f.cfg.bootstrap = cfg[4] != 0;
  f.n_features = static_cast<int>(scalar_int(blob, "n_features"));
  f.max_features = static_cast<int>(scalar_int(blob, "max_features"));
  f.trees = get_trees(blob, "tree.", f.n_features);
  const auto& shape = blob.at("in_bag").shape;
  const auto& bag = blob.ints("in_bag");
  if (shape.size() != 2) throw Error(ErrorCode::kCorruptFile, "in_bag shape");
  f.in_bag.resize(shape[0]);
  for (std::size_t t = 0; t < shape[0]; ++t) {
    f.in_bag[t].assign(bag.begin() + static_cast<std::ptrdiff_t>(t * shape[1]),
                       bag.begin() + static_cast<std::ptrdiff_t>((t + 1) * shape[1]));
  }
  return f;
}

void put_boosting(Blob& blob, json& config, const BoostedEnsemble& m) {
  config["rounds"] = m.cfg.n_rounds;
  config["max_depth"] = m.cfg.max_depth;
  config["lr"] = m.cfg.learning_rate;
  config["min_leaf"] = m.cfg.min_leaf;
  blob.put("config", {3}, std::vector<std::int64_t>{m.cfg.n_rounds, m.cfg.max_depth, m.cfg.min_leaf});
  blob.put("learning_rate", {1}, std::vector<double>{m.cfg.learning_rate});
  blob.put("n_features", {1}, std::vector<std::int64_t>{m.n_features});
  blob.put("base_scores", shape1(static_cast<std::size_t>(m.base_scores.size())), to_reals(m.base_scores));
  const std::size_t per_round = m.rounds.empty() ? 0 : m.rounds.front().size();
  std::vector<const DecisionTree*> trees;
  for (const auto& round : m.rounds) {
    if (round.size() != per_round) throw Error(ErrorCode::kShapeMismatch, "ragged boosting rounds");
    for (const auto& t : round) trees.push_back(&t);
  }
  blob.put("round_shape", {2},
           std::vector<std::int64_t>{static_cast<std::int64_t>(m.rounds.size()), static_cast<std::int64_t>(per_round)});
  put_trees(blob, "tree.", trees);
}

BoostedEnsemble get_boosting(const Blob& blob) {
  BoostedEnsemble m;
  const auto& cfg = blob.ints("config");
  if (cfg.size() != 3) throw Error(ErrorCode::kCorruptFile, "boosting config");
  m.cfg.n_rounds = static_cast<int>(cfg[0]);
  m.cfg.max_depth = static_cast<int>(cfg[1]);
  m.cfg.min_leaf = static_cast<int>(cfg[2]);
  m.cfg.learning_rate = scalar_real(blob, "learning_rate");
  m.n_features = static_cast<int>(scalar_int(blob, "n_features"));
  const auto& base = blob.reals("base_scores");
  m.base_scores = Eigen::Map<const Eigen::VectorXd>(base.data(), static_cast<Eigen::Index>(base.size()));
  const auto& shape = blob.ints("round_shape");
  if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0) throw Error(ErrorCode::kCorruptFile, "round shape");
  auto trees = get_trees(blob, "tree.", m.n_features);
  if (trees.size() != static_cast<std::size_t>(shape[0] * shape[1])) throw Error(ErrorCode::kCorruptFile, "tree count");
  m.rounds.resize(static_cast<std::size_t>(shape[0]));
  std::size_t next = 0;
  for (auto& round : m.rounds) {
    for (std::int64_t c = 0; c < shape[1]; ++c) round.push_back(std::move(trees[next++]));
  }
  return m;
}

// Support vectors shared between machines are stored once.
void put_svm(Blob& blob, json& config, const MultiSvm& m) {
  if (m.machines.empty()) throw Error(ErrorCode::kEmptyMatrix, "svm without machines");
  const auto& k = m.machines.front().kernel;
  config["C"] = m.machines.front().C;
  config["kernel"] = kernel_name(k.type);
  config["gamma"] = k.gamma;
  const Eigen::Index cols = m.machines.front().support_vectors.cols();

  std::map<std::int64_t, Eigen::Index> slot;
  std::vector<const double*> rows;
  std::vector<std::int64_t> offsets = {0}, index, converged, sweeps;
  std::vector<double> alphas, labels, scalars;
  for (const auto& machine : m.machines) {
    const bool indexed = machine.support_indices.size() == static_cast<std::size_t>(machine.alphas.size());
    for (Eigen::Index s = 0; s < machine.alphas.size(); ++s) {
      Eigen::Index where;
      if (indexed) {
        const auto [it, inserted] = slot.try_emplace(machine.support_indices[static_cast<std::size_t>(s)],
                                                     static_cast<Eigen::Index>(rows.size()));
        if (inserted) rows.push_back(machine.support_vectors.row(s).data());
        where = it->second;
      } else {
        where = static_cast<Eigen::Index>(rows.size());
        rows.push_back(machine.support_vectors.row(s).data());
      }
      index.push_back(where);
      alphas.push_back(machine.alphas(s));
      labels.push_back(machine.labels(s));
    }
    offsets.push_back(static_cast<std::int64_t>(index.size()));
    converged.push_back(machine.converged ? 1 : 0);
    sweeps.push_back(machine.sweeps);
    scalars.insert(scalars.end(), {machine.bias, machine.C, machine.kernel.gamma, machine.max_kkt_violation,
                                   machine.dual_objective});
  }
  std::vector<double> vectors;
  vectors.reserve(rows.size() * static_cast<std::size_t>(cols));
  for (const double* r : rows) vectors.insert(vectors.end(), r, r + cols);
  std::vector<std::int64_t> source(rows.size(), -1);
  for (const auto& [train_row, where] : slot) source[static_cast<std::size_t>(where)] = train_row;

  const std::size_t n_machines = m.machines.size();
  const std::size_t total = index.size();
  blob.put("kernel", {1}, std::vector<std::int64_t>{k.type == KernelType::kRbf ? 1 : 0});
  blob.put("vectors", shape2(static_cast<Eigen::Index>(rows.size()), cols), std::move(vectors));
  blob.put("vector_source", shape1(source.size()), source);
  blob.put("offsets", shape1(offsets.size()), offsets);
  blob.put("index", shape1(total), std::move(index));
  blob.put("alphas", shape1(total), std::move(alphas));
  blob.put("labels", shape1(total), std::move(labels));
  blob.put("converged", shape1(n_machines), std::move(converged));
  blob.put("sweeps", shape1(n_machines), std::move(sweeps));
  blob.put("scalars", shape2(static_cast<Eigen::Index>(n_machines), 5), std::move(scalars));
}

MultiSvm get_svm(const Blob& blob) {
  const RowMatrix vectors = reals_matrix(blob, "vectors");
  const auto& source = blob.ints("vector_source");
  const auto& offsets = blob.ints("offsets");
  const auto& index = blob.ints("index");
  const auto& alphas = blob.reals("alphas");
  const auto& labels = blob.reals("labels");
  const auto& converged = blob.ints("converged");
  const auto& sweeps = blob.ints("sweeps");
  const RowMatrix scalars = reals_matrix(blob, "scalars");
  const std::size_t n_machines = converged.size();
  if (offsets.size() != n_machines + 1 || sweeps.size() != n_machines ||
      static_cast<std::size_t>(scalars.rows()) != n_machines || scalars.cols() != 5 ||
      alphas.size() != index.size() || labels.size() != index.size() ||
      source.size() != static_cast<std::size_t>(vectors.rows()) || offsets.front() != 0 ||
      static_cast<std::size_t>(offsets.back()) != index.size()) {
    throw Error(ErrorCode::kCorruptFile, "inconsistent svm tables");
  }
  const KernelType type = scalar_int(blob, "kernel") == 1 ? KernelType::kRbf : KernelType::kLinear;
  MultiSvm m;
  m.machines.resize(n_machines);
  for (std::size_t c = 0; c < n_machines; ++c) {
    auto& machine = m.machines[c];
    const auto begin = offsets[c];
    const auto count = offsets[c + 1] - begin;
    if (count < 0) throw Error(ErrorCode::kCorruptFile, "svm offsets");
    machine.support_vectors.resize(count, vectors.cols());
    machine.alphas.resize(count);
    machine.labels.resize(count);
    for (std::int64_t s = 0; s < count; ++s) {
      const auto g = static_cast<std::size_t>(begin + s);
      if (index[g] < 0 || index[g] >= vectors.rows()) throw Error(ErrorCode::kCorruptFile, "svm vector index");
      machine.support_vectors.row(s) = vectors.row(index[g]);
      machine.alphas(s) = alphas[g];
      machine.labels(s) = labels[g];
      if (source[static_cast<std::size_t>(index[g])] >= 0) {
        machine.support_indices.push_back(source[static_cast<std::size_t>(index[g])]);
      }
    }
    if (machine.support_indices.size() != static_cast<std::size_t>(count)) machine.support_indices.clear();
    const auto row = static_cast<Eigen::Index>(c);
    machine.bias = scalars(row, 0);
    machine.C = scalars(row, 1);
    machine.kernel = Kernel{type, scalars(row, 2)};
    machine.max_kkt_violation = scalars(row, 3);
    machine.dual_objective = scalars(row, 4);
    machine.converged = converged[c] != 0;
    machine.sweeps = static_cast<int>(sweeps[c]);
  }
  return m;
}

template <typename Scalar>
void put_network(Blob& blob, json& config, const nn::ResidualNetwork<Scalar>& net) {
  config["network"] = to_json(net.cfg);
  config["precision"] = std::is_same_v<Scalar, float> ? "float" : "double";
  for (const auto* p : net.parameters()) {
    blob.put("param." + p->name, shape2(p->value.rows(), p->value.cols()),
             std::vector<double>(p->value.data(), p->value.data() + p->value.size()));
  }
  for (const auto* n : net.norms()) {
    const std::string base = n->gamma.name.substr(0, n->gamma.name.size() - std::string(".gamma").size());
    const auto len = static_cast<std::size_t>(n->running_mean.size());
    blob.put("running_mean." + base, shape1(len),
             std::vector<double>(n->running_mean.data(), n->running_mean.data() + len));
    blob.put("running_var." + base, shape1(len), std::vector<double>(n->running_var.data(), n->running_var.data() + len));
  }
}

template <typename Scalar>
nn::ResidualNetwork<Scalar> get_network(const Blob& blob, const json& config) {
  if (!config.contains("network")) throw Error(ErrorCode::kCorruptFile, "envelope lacks the network config");
  nn::ResidualNetwork<Scalar> net(net_config_from_json(config.at("network")), 0);
  for (auto* p : net.parameters()) {
    const auto& s = blob.at("param." + p->name);
    const auto& v = blob.reals("param." + p->name);
    if (s.shape.size() != 2 || s.shape[0] != static_cast<std::uint64_t>(p->value.rows()) ||
        s.shape[1] != static_cast<std::uint64_t>(p->value.cols())) {
      throw Error(ErrorCode::kCorruptFile, p->name + ": shape differs from the network config");
    }
    for (std::size_t i = 0; i < v.size(); ++i) p->value.data()[i] = static_cast<Scalar>(v[i]);
  }
  for (auto* n : net.norms()) {
    const std::string base = n->gamma.name.substr(0, n->gamma.name.size() - std::string(".gamma").size());
    const auto& mean = blob.reals("running_mean." + base);
    const auto& var = blob.reals("running_var." + base);
    if (mean.size() != static_cast<std::size_t>(n->running_mean.size()) || var.size() != mean.size()) {
      throw Error(ErrorCode::kCorruptFile, base + ": running statistics size");
    }
    for (std::size_t i = 0; i < mean.size(); ++i) {
      n->running_mean(static_cast<Eigen::Index>(i)) = static_cast<Scalar>(mean[i]);
      n->running_var(static_cast<Eigen::Index>(i)) = static_cast<Scalar>(var[i]);
    }
  }
  return net;
}

std::filesystem::path blob_path_for(const std::filesystem::path& path) {
  return path.parent_path() / (path.filename().string() + ".mdlb");
}

}  // namespace

std::string StoredModel::model_type() const {
  switch (model.index()) {
    case 0:
      return "knn";
    case 1:
      return "rf";
    case 2:
      return "gbm";
    case 3:
      return "svm";
    default:
      return "resnet";
  }
}

bool StoredModel::uses_images() const { return model.index() >= 4; }

void save_model(const std::filesystem::path& path, const StoredModel& m) {
  Blob blob;
  blob.model_type = m.model_type();
  json config = m.config.is_object() ? m.config : json::object();
  std::visit(
      [&](const auto& model) {
        using T = std::decay_t<decltype(model)>;
        if constexpr (std::is_same_v<T, KnnModel>) {
          put_knn(blob, config, model);
        } else if constexpr (std::is_same_v<T, Forest>) {
          put_forest(blob, config, model);
        } else if constexpr (std::is_same_v<T, BoostedEnsemble>) {
          put_boosting(blob, config, model);
        } else if constexpr (std::is_same_v<T, MultiSvm>) {
          put_svm(blob, config, model);
        } else {
          put_network(blob, config, model);
        }
      },
      m.model);
  const std::vector<std::uint8_t> bytes = encode_blob(blob);
  const std::filesystem::path blob_path = blob_path_for(path);

  json envelope;
  envelope["format_version"] = kModelFormatVersion;
  envelope["model_type"] = blob.model_type;
  envelope["created_with"] = {{"seed", m.seed}};
  envelope["config"] = config;
  envelope["input"] = {{"preprocess", to_json(m.pipeline.preprocess)},
                       {"hog", to_json(m.pipeline.hog)},
                       {"stats", to_json(m.pipeline.stats)}};
  envelope["blob"] = {{"file", blob_path.filename().string()}, {"crc32", crc32_of(bytes)}, {"bytes", bytes.size()}};
  write_file_atomic(blob_path, bytes);
  write_file_atomic(path, envelope.dump(2) + "\n");
}

StoredModel load_model(const std::filesystem::path& path) {
  json envelope;
  try {
    envelope = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCorruptFile, path.string() + ": not a model envelope (" + e.what() + ")");
  }
  StoredModel m;
  std::string type;
  std::filesystem::path blob_file;
  try {
    const int version = envelope.at("format_version").get<int>();
    if (version != kModelFormatVersion) {
      throw Error(ErrorCode::kVersionMismatch, path.string() + ": format_version " + std::to_string(version) +
                                                   ", expected " + std::to_string(kModelFormatVersion));
    }
    type = envelope.at("model_type").get<std::string>();
    m.seed = envelope.at("created_with").at("seed").get<std::uint64_t>();
    m.config = envelope.at("config");
    const auto& input = envelope.at("input");
    m.pipeline.preprocess = preprocess_from_json(input.at("preprocess"));
    m.pipeline.hog = hog_from_json(input.at("hog"));
    m.pipeline.stats = stats_from_json(input.at("stats"));
    blob_file = envelope.at("blob").at("file").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCorruptFile, path.string() + ": malformed envelope (" + e.what() + ")");
  }
  if (blob_file.has_parent_path()) throw Error(ErrorCode::kCorruptFile, "blob must be a sibling file");

  const Blob blob = decode_blob(read_file_bytes(path.parent_path() / blob_file));
  if (blob.model_type != type) {
    throw Error(ErrorCode::kCorruptFile, "envelope says " + type + " but the blob holds " + blob.model_type);
  }
  if (type == "knn") {
    m.model = get_knn(blob);
  } else if (type == "rf") {
    m.model = get_forest(blob);
  } else if (type == "gbm") {
    m.model = get_boosting(blob);
  } else if (type == "svm") {
    m.model = get_svm(blob);
  } else if (type == "resnet") {
    if (m.config.value("precision", "double") == "float") {
      m.model = get_network<float>(blob, m.config);
    } else {
      m.model = get_network<double>(blob, m.config);
    }
  } else {
    throw Error(ErrorCode::kCorruptFile, "unknown model type '" + type + "'");
  }
  return m;
}

Eigen::MatrixXd predict_feature_scores(const StoredModel& m, const RowMatrix& x) {
  if (m.uses_images()) throw Error(ErrorCode::kInvalidArgument, "network models score images, not feature rows");
  Eigen::MatrixXd scores(x.rows(), kNumClasses);
  parallel_for(static_cast<std::size_t>(x.rows()), [&](std::size_t i) {
    const auto row = static_cast<Eigen::Index>(i);
    std::visit(
        [&](const auto& model) {
          using T = std::decay_t<decltype(model)>;
          Eigen::VectorXd s;
          if constexpr (std::is_same_v<T, KnnModel>) {
            s = knn_predict_scores(model, x.row(row));
          } else if constexpr (std::is_same_v<T, Forest>) {
            s = rf_predict_scores(model, x.row(row));
          } else if constexpr (std::is_same_v<T, BoostedEnsemble>) {
            s = gbm_predict_scores(model, x.row(row));
          } else if constexpr (std::is_same_v<T, MultiSvm>) {
            s = ovr_predict_scores(model, x.row(row));
          }
          scores.row(row) = s.transpose();
        },
        m.model);
  });
  return scores;
}

Eigen::MatrixXd predict_plane_scores(const StoredModel& m, const std::vector<Plane>& unit_planes) {
  std::vector<Plane> planes = unit_planes;
  for (auto& p : planes) normalize_in_place(p, m.pipeline.stats);
  if (const auto* net = std::get_if<nn::ResidualNetwork<double>>(&m.model)) return nn::predict_proba(*net, planes);
  if (const auto* net = std::get_if<nn::ResidualNetwork<float>>(&m.model)) return nn::predict_proba(*net, planes);
  throw Error(ErrorCode::kInvalidArgument, "feature-based models score feature rows, not images");
}

}  // namespace cytoclass
