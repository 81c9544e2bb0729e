// Copyright 2026 The U2 Desk Authors
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

// Attention visibility masks (full / left / chunk), dynamic chunk-size
// sampling, and the latency implied by a decoding chunk size.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "u2/numerics/tensor.hpp"

namespace u2 {

/// rows x cols booleans; bit(q, k) is true when query q may attend key k.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(std::size_t rows, std::size_t cols, bool fill)
      : rows_(rows), cols_(cols), bits_(rows * cols, fill ? 1 : 0) {}

  static AttentionMask all(std::size_t rows, std::size_t cols) { return {rows, cols, true}; }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  /// Square masks report their frame count.
  std::size_t size() const { return rows_; }

  bool operator()(std::size_t q, std::size_t k) const { return bits_[q * cols_ + k] != 0; }
  void set(std::size_t q, std::size_t k, bool v) { bits_[q * cols_ + k] = v ? 1 : 0; }

  bool row_any(std::size_t q) const {
    auto first = bits_.begin() + static_cast<std::ptrdiff_t>(q * cols_);
    return std::any_of(first, first + static_cast<std::ptrdiff_t>(cols_), [](std::uint8_t b) { return b != 0; });
  }

  /// Elementwise inclusion: every bit set here is also set in `other`.
  bool subset_of(const AttentionMask& other) const {
    if (rows_ != other.rows_ || cols_ != other.cols_) return false;
    for (std::size_t i = 0; i < bits_.size(); ++i) {
      if (bits_[i] && !other.bits_[i]) return false;
    }
    return true;
  }

  bool operator==(const AttentionMask&) const = default;

  std::string to_string() const {
    std::string s;
    for (std::size_t q = 0; q < rows_; ++q) {
      for (std::size_t k = 0; k < cols_; ++k) s += (*this)(q, k) ? '1' : '0';
      s += '\n';
    }
    return s;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Chunk-size sentinel for full (non-streaming) attention.
constexpr long long kFullChunk = 0;

/// Chunk attention: frame q sees every frame in its own chunk and in all
/// earlier chunks. Chunks start at multiples of `chunk_size` from frame 0.
/// chunk_size >= T gives full attention, chunk_size == 1 left attention.
inline AttentionMask make_chunk_mask(long long frames, long long chunk_size) {
  if (frames < 1 || chunk_size < 1) throw Error("invalid mask size");
  const auto t = static_cast<std::size_t>(frames);
  const auto c = static_cast<std::size_t>(chunk_size);
  AttentionMask mask(t, t, false);
  for (std::size_t q = 0; q < t; ++q) {
    const std::size_t visible = std::min(t, (q / c + 1) * c);
    for (std::size_t k = 0; k < visible; ++k) mask.set(q, k, true);
  }
  return mask;
}

enum class ChunkMode { kFull, kStatic, kDynamic };

struct ChunkPolicy {
  ChunkMode mode = ChunkMode::kDynamic;
  int static_chunk = 16;  // used by kStatic
  int cap = 25;           // largest streaming chunk in kDynamic
  double full_fraction = 0.5;

  void validate() const {
    if (mode == ChunkMode::kStatic && static_chunk < 1) throw Error("static chunk must be >= 1");
    if (cap < 1) throw Error("chunk cap must be >= 1");
    if (!(full_fraction >= 0.0 && full_fraction <= 1.0)) throw Error("full_fraction must be in [0,1]");
  }

  static ChunkPolicy full() { return {ChunkMode::kFull, 16, 25, 0.5}; }
  static ChunkPolicy fixed(int c) { return {ChunkMode::kStatic, c, 25, 0.5}; }
  static ChunkPolicy dynamic(int cap = 25, double full_fraction = 0.5) {
    return {ChunkMode::kDynamic, 16, cap, full_fraction};
  }
};

/// Per-batch chunk size. `u` selects full vs streaming (full when
/// u > 1 - full_fraction, i.e. u > 0.5 by default); `v` picks the streaming
/// size uniformly on [1, min(cap, l_max - 1)]. Both are in [0, 1).
inline int sample_chunk_size(int l_max, const ChunkPolicy& policy, double u, double v) {
  switch (policy.mode) {
    case ChunkMode::kFull:
      return l_max;
    case ChunkMode::kStatic:
      return policy.static_chunk;
    case ChunkMode::kDynamic:
      break;
  }
  if (l_max < 2) throw Error("utterance too short for streaming chunk");
  if (u > 1.0 - policy.full_fraction) return l_max;
  const int span = std::min(policy.cap, l_max - 1);
  const int pick = static_cast<int>(std::floor(v * span)) + 1;
  return std::min(pick, span);
}

struct LatencyBounds {
  double max_ms = 0.0;
  double avg_ms = 0.0;
};

/// Worst-case and mean algorithmic latency of chunked decoding: the last
/// frame of a chunk waits for nothing, the first waits for the whole chunk.
inline LatencyBounds latency_bounds(long long chunk_size, long long subsample, long long frame_shift_ms) {
  if (chunk_size < 1 || subsample < 1 || frame_shift_ms < 1) throw Error("latency inputs must be >= 1");
  const double max_ms = static_cast<double>(chunk_size * subsample * frame_shift_ms);
  return {max_ms, max_ms / 2.0};
}

}  // namespace u2
