#pragma once

// Shared error types and small string/formatting helpers used across the
// library.  Everything downstream reports failures through these exception
// types so callers (CLI, tests) can distinguish bad inputs from numeric
// blow-ups from I/O problems.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace sfd {

namespace detail {

inline void cat_one(std::ostringstream& os, std::string_view s) { os << s; }
inline void cat_one(std::ostringstream& os, const char* s) { os << s; }
inline void cat_one(std::ostringstream& os, const std::string& s) { os << s; }
inline void cat_one(std::ostringstream& os, char c) { os << c; }
inline void cat_one(std::ostringstream& os, bool b) { os << (b ? "true" : "false"); }

template <typename T>
void cat_one(std::ostringstream& os, const T& v) {
  os << v;
}

inline void cat_one(std::ostringstream& os, double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  os << std::string_view(buf, static_cast<std::size_t>(p - buf));
}

}  // namespace detail

// Concatenates arguments into one string; doubles are printed with
// shortest-round-trip formatting so messages (and serialized output built on
// the same helper) are reproducible bit for bit.
template <typename... Args>
std::string cat(const Args&... args) {
  std::ostringstream os;
  (detail::cat_one(os, args), ...);
  return os.str();
}

// Shortest decimal string that parses back to exactly the same double.
inline std::string format_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, static_cast<std::size_t>(p - buf));
}

// Violated preconditions: shape mismatches, invalid arguments, bad configs.
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values produced during computation (NaN/Inf fail-fast policy).
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// File-format and filesystem failures (checkpoints, configs, run output).
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

template <typename... Args>
[[noreturn]] void fail_contract(const Args&... args) {
  throw ContractError(cat(args...));
}

template <typename... Args>
[[noreturn]] void fail_numeric(const Args&... args) {
  throw NumericError(cat(args...));
}

template <typename... Args>
[[noreturn]] void fail_io(const Args&... args) {
  throw IoError(cat(args...));
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) {
    throw ContractError(msg);
  }
}

}  // namespace sfd
