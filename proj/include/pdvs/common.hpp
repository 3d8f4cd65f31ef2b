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

#include <charconv>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>

namespace pdvs {

// Error taxonomy. Every failure the library raises derives from one of these.

/// Malformed or out-of-range caller input (bad sizes, unsorted lists, k too large).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A model parameter outside its mathematical domain.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Internal state contradicts an invariant the caller was supposed to uphold.
class ConsistencyError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// An operation invoked on an object it does not apply to.
class MisuseError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A configuration key failed validation. `key()` names the offending key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error(key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// Which LLM stage issued a retrieval.
enum class RetrievalStage : std::uint8_t { prefill, decode };

inline std::string_view to_string(RetrievalStage s) {
  return s == RetrievalStage::prefill ? "prefill" : "decode";
}

/// Shortest text form of `v` that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw std::runtime_error("format_double: to_chars failed");
  return std::string(buf, end);
}

}  // namespace pdvs
