#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <shared_mutex>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "anchormem/anchor_store.hpp"
#include "anchormem/backend.hpp"
#include "anchormem/error.hpp"

namespace anchormem {

struct SearchHit {
  std::int64_t entry_id = 0;
  double score = 0.0;
};

/// Hit order used everywhere: higher cosine first, ties by ascending entry id.
inline bool hit_before(const SearchHit& a, const SearchHit& b) {
  return a.score != b.score ? a.score > b.score : a.entry_id < b.entry_id;
}

/// Exact cosine top-k over unit vectors. Vectors are stored column-wise in a
/// dim x capacity matrix so a search is one matrix-vector product followed by
/// a partial sort. Searches take a shared lock, adds an exclusive one.
template <typename Scalar>
class BasicMemoryIndex {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  explicit BasicMemoryIndex(int dim) : dim_(dim) {
    if (dim < 1) throw Error(ErrorCode::kInvalidArgument, "index dimension must be positive");
  }

  BasicMemoryIndex(const BasicMemoryIndex&) = delete;
  BasicMemoryIndex& operator=(const BasicMemoryIndex&) = delete;

  int dim() const noexcept { return dim_; }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return ids_.size();
  }

  bool contains(std::int64_t entry_id) const {
    std::shared_lock lock(mutex_);
    return column_of_.count(entry_id) != 0;
  }

  /// Inserts or replaces the vector for `entry_id`; the stored copy is
  /// renormalized to unit length.
  template <typename Derived>
  void add(std::int64_t entry_id, const Eigen::MatrixBase<Derived>& vector) {
    if (vector.size() != dim_) {
      throw Error(ErrorCode::kInvalidArgument, "vector dimension " + std::to_string(vector.size()) +
                                                   " does not match index dimension " + std::to_string(dim_));
    }
    Vector v = vector.template cast<Scalar>();
    const Scalar norm = v.norm();
    if (!(norm > Scalar(0)) || !std::isfinite(static_cast<double>(norm))) {
      throw Error(ErrorCode::kInvalidArgument, "cannot index a zero or non-finite vector");
    }
    v /= norm;

    std::unique_lock lock(mutex_);
    if (auto it = column_of_.find(entry_id); it != column_of_.end()) {
      data_.col(static_cast<Eigen::Index>(it->second)) = v;
      return;
    }
    const auto n = static_cast<Eigen::Index>(ids_.size());
    if (n == data_.cols()) data_.conservativeResize(dim_, std::max<Eigen::Index>(16, 2 * n));
    data_.col(n) = v;
    column_of_.emplace(entry_id, ids_.size());
    ids_.push_back(entry_id);
  }

  /// min(k, size()) hits, exact under cosine.
  template <typename Derived>
  std::vector<SearchHit> search(const Eigen::MatrixBase<Derived>& query, std::size_t k) const {
    if (k < 1) throw Error(ErrorCode::kInvalidArgument, "k must be >= 1");
    if (query.size() != dim_) {
      throw Error(ErrorCode::kInvalidArgument, "query dimension does not match index dimension");
    }
    const Vector q = query.template cast<Scalar>();

    std::shared_lock lock(mutex_);
    const auto n = static_cast<Eigen::Index>(ids_.size());
    if (n == 0) return {};
    const Vector scores = data_.leftCols(n).transpose() * q;

    std::vector<SearchHit> hits(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      hits[static_cast<std::size_t>(i)] = {ids_[static_cast<std::size_t>(i)], static_cast<double>(scores[i])};
    }
    const std::size_t top = std::min(k, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(top), hits.end(), hit_before);
    hits.resize(top);
    return hits;
  }

  /// Stored vector for `entry_id` (throws kNotFound).
  Vector vector(std::int64_t entry_id) const {
    std::shared_lock lock(mutex_);
    auto it = column_of_.find(entry_id);
    if (it == column_of_.end()) throw Error(ErrorCode::kNotFound, "entry not indexed");
    return data_.col(static_cast<Eigen::Index>(it->second));
  }

  /// Snapshot layout (little-endian): "AMIX", u32 version=1, u32 dim, u64 count,
  /// then per record an i64 entry id and dim float32 components.
  void save_snapshot(const std::filesystem::path& path) const {
    std::shared_lock lock(mutex_);
    std::string buf = "AMIX";
    put_le<std::uint32_t>(buf, 1);
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(dim_));
    put_le<std::uint64_t>(buf, ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      put_le<std::uint64_t>(buf, static_cast<std::uint64_t>(ids_[i]));
      for (int d = 0; d < dim_; ++d) {
        const float f = static_cast<float>(data_(d, static_cast<Eigen::Index>(i)));
        put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(f));
      }
    }
    atomic_write_file(path, buf);
  }

  void load_snapshot(const std::filesystem::path& path) {
    const std::string buf = read_file(path);
    std::size_t pos = 0;
    const auto need = [&](std::size_t bytes) {
      if (pos + bytes > buf.size()) throw Error(ErrorCode::kUnreadableFile, "truncated index snapshot");
    };
    need(4);
    if (buf.compare(0, 4, "AMIX") != 0) throw Error(ErrorCode::kUnreadableFile, "not an index snapshot");
    pos = 4;
    need(16);
    const auto version = get_le<std::uint32_t>(buf, pos);
    const auto dim = get_le<std::uint32_t>(buf, pos);
    const auto count = get_le<std::uint64_t>(buf, pos);
    if (version != 1 || static_cast<int>(dim) != dim_) {
      throw Error(ErrorCode::kUnreadableFile, "index snapshot version or dimension mismatch");
    }
    Vector v(dim_);
    for (std::uint64_t r = 0; r < count; ++r) {
      need(8 + 4 * static_cast<std::size_t>(dim_));
      const auto id = static_cast<std::int64_t>(get_le<std::uint64_t>(buf, pos));
      for (int d = 0; d < dim_; ++d) {
        v[d] = static_cast<Scalar>(std::bit_cast<float>(get_le<std::uint32_t>(buf, pos)));
      }
      add(id, v);
    }
  }

 private:
  template <typename U>
  static void put_le(std::string& buf, U value) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
  }

  template <typename U>
  static U get_le(const std::string& buf, std::size_t& pos) {
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      value |= static_cast<U>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    }
    pos += sizeof(U);
    return value;
  }

  int dim_;
  Matrix data_{Matrix(dim_, 0)};
  std::vector<std::int64_t> ids_;
  std::unordered_map<std::int64_t, std::size_t> column_of_;
  mutable std::shared_mutex mutex_;
};

using MemoryIndex = BasicMemoryIndex<double>;

/// Embeds the entry's content and indexes it. On embedding failure the index
/// is left untouched and kEmbeddingFailure is thrown.
void index_add(MemoryIndex& index, LlmBackend& backend, const MemoryEntry& entry);

/// Rebuilds an index from a memory log.
void index_rebuild(MemoryIndex& index, LlmBackend& backend, const std::vector<MemoryEntry>& log);

}  // namespace anchormem
