#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace toxgate {

// Base for every error the toolkit raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Network-level failure talking to a remote service. Retriable.
class TransportError : public Error {
 public:
  TransportError(const std::string& what, int attempts)
      : Error(what), attempts_(attempts) {}
  int attempts() const { return attempts_; }

 private:
  int attempts_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class CorruptFileError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

enum class Label : std::uint8_t { benign = 0, toxic = 1 };

std::string_view to_string(Label label);
// Throws Error on anything other than "toxic" / "benign".
Label parse_label(std::string_view text);

std::uint64_t fnv1a64(std::string_view text);

// Deterministic generator whose output sequence does not depend on the
// standard library's distribution implementations.
// std::mt19937_64 engine with our own distributions: the standard library's
// distributions and std::shuffle differ between implementations, and model
// files must be reproducible across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  double normal();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::string trim(std::string_view text);

// Shortest round-trip decimal form.
std::string format_real(double value);
std::string format_real(float value);

}  // namespace toxgate
