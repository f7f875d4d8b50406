#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace vanguard {

enum class Label { Normal, Abnormal };

std::string_view to_string(Label l);
/// Exact match on "Normal" / "Abnormal".
std::optional<Label> parse_label(std::string_view s);

/// Malformed external input (model output, files). `offset` is a byte offset
/// into the offending text when one is known.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset = 0)
      : std::runtime_error(what), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Record failed schema validation. `line` is 1-based; 0 when not from a file.
class SchemaError : public std::runtime_error {
 public:
  SchemaError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// A metric has no defined value for the given input (e.g. single-class AUC).
class UndefinedMetric : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Caller violated a stream protocol (e.g. non-monotone frame indices).
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Uniform index in [0, n) from a 64-bit engine. Rejection sampling keeps the
/// result identical across standard library implementations, which
/// std::uniform_int_distribution does not guarantee.
std::size_t uniform_index(std::mt19937_64& rng, std::size_t n);
/// Uniform double in [0, 1) with 53 random bits.
double uniform_unit(std::mt19937_64& rng);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);

}  // namespace vanguard
