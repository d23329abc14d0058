// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

// Human-readable experiment configuration: `key = value` lines, `#`
// comments, and `[section]` headers that prefix the keys below them
// ("[train]" + "lr = 1e-3" -> "train.lr").

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace rme {

class ConfigMap {
 public:
  ConfigMap() = default;

  static ConfigMap parse(std::string_view text, const std::string& origin = "<string>");
  static ConfigMap load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool contains(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
  std::vector<std::int64_t> get_ints(const std::string& key, const std::vector<std::int64_t>& fallback) const;

  /// Throws a config error naming the first key not in `known`.
  void require_known(const std::vector<std::string>& known) const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);

std::string hex64(std::uint64_t v);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace rme
