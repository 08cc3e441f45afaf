#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>

namespace airslab {

using cplx = std::complex<double>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kSpeedOfLight = 299792458.0;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or argument; `path()` names the offending field
/// (JSON path for parsed configs, empty otherwise).
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& msg, std::string path = {})
      : Error(path.empty() ? msg : path + ": " + msg), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// File-system and serialization failures.
class IoError : public Error {
 public:
  using Error::Error;
};

inline double db_to_lin(double db) { return std::pow(10.0, db / 10.0); }
inline double lin_to_db(double lin) { return 10.0 * std::log10(lin); }
inline double dbm_to_mw(double dbm) { return db_to_lin(dbm); }

/// SplitMix64 finalizer, used to derive independent RNG stream seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a) {
  return mix64(seed ^ mix64(a + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return mix_seed(mix_seed(seed, a), b);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                              std::uint64_t c) {
  return mix_seed(mix_seed(seed, a, b), c);
}

}  // namespace airslab
