#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace cpac {

/// Row-major so that one row is one sample.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

using Index = std::int64_t;

// Error taxonomy. Everything derives from Error so callers at a stage
// boundary can catch one type and still report the concrete kind.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionError : Error {
  using Error::Error;
};
struct ParameterError : Error {
  using Error::Error;
};
struct DomainError : Error {
  using Error::Error;
};
struct StateError : Error {
  using Error::Error;
};
struct NumericalError : Error {
  using Error::Error;
};
struct ParseError : Error {
  using Error::Error;
};
struct DegenerateGraphError : Error {
  using Error::Error;
};
struct NotFoundError : Error {
  using Error::Error;
};
struct ConflictError : Error {
  using Error::Error;
};

using Rng = std::mt19937_64;

/// Deterministic child stream of a run seed, keyed by a stream name
/// ("init", "shuffle", "dropout", ...). FNV-1a keeps the key stable across
/// standard library implementations.
inline Rng make_stream(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return Rng(seq);
}

/// Uniform double in [0, 1) built from the raw 64-bit output. Unlike
/// std::uniform_real_distribution this is identical on every standard library.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Standard normal via Box-Muller on uniform01, for the same portability reason.
inline double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

/// Fisher-Yates with uniform01, reproducible across platforms.
template <typename Container>
void shuffle(Container& c, Rng& rng) {
  for (std::size_t i = c.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(c[i - 1], c[j < i ? j : i - 1]);
  }
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace cpac
