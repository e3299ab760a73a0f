// Copyright (C) 2026 the cscfuse authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdlib>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace cscfuse {

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IntegrityError : std::runtime_error {
  explicit IntegrityError(const std::string& msg) : std::runtime_error(msg) {}
};

// Worker count for intra-op parallelism. Defaults to 1 so results are
// bit-deterministic; CSCFUSE_THREADS overrides.
inline int worker_count() {
  static const int n = [] {
    const char* env = std::getenv("CSCFUSE_THREADS");
    if (!env) return 1;
    int v = std::atoi(env);
    if (v < 1) return 1;
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    return hw > 0 ? std::min(v, hw) : v;
  }();
  return n;
}

// Splits [0, total) into contiguous chunks, one worker per chunk. Each index
// is processed by exactly one worker, so per-element summation order does not
// depend on the worker count.
template <class Fn>
void parallel_for(std::int64_t total, Fn&& fn) {
  const int workers = worker_count();
  if (workers <= 1 || total < 256) {
    for (std::int64_t i = 0; i < total; ++i) fn(i);
    return;
  }
  const std::int64_t chunk = (total + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int t = 0; t < workers; ++t) {
    const std::int64_t begin = t * chunk;
    const std::int64_t end = std::min<std::int64_t>(begin + chunk, total);
    if (begin >= end) break;
    pool.emplace_back([begin, end, &fn] {
      for (std::int64_t i = begin; i < end; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

using Rng = std::mt19937;

inline Rng make_rng(std::uint32_t seed) { return Rng(seed); }

// Derives an independent stream from a base seed; used to keep data shuffling,
// init, and augmentation decoupled but reproducible.
inline std::uint32_t derive_seed(std::uint32_t base, std::uint32_t stream) {
  std::uint64_t x = (static_cast<std::uint64_t>(base) << 32) | (stream + 0x9e3779b9u);
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdULL;
  x ^= x >> 33;
  x *= 0xc4ceb9fe1a85ec53ULL;
  x ^= x >> 33;
  return static_cast<std::uint32_t>(x);
}

inline std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace cscfuse
