#pragma once

// Sobol low-discrepancy sequence (Gray-code construction) with the
// new-joe-kuo-6.21201 primitive polynomials and initial direction numbers
// for the first 32 dimensions.

#include <array>
#include <bit>
#include <cstdint>
#include <string>
#include <vector>

#include "skh/errors.hpp"
#include "skh/linalg.hpp"

namespace skh {

namespace detail {

struct SobolPolynomial {
  std::uint32_t poly;  ///< primitive polynomial incl. leading and constant terms
  std::vector<std::uint32_t> initial;  ///< m_1 .. m_s
};

inline const std::vector<SobolPolynomial>& sobol_table() {
  static const std::vector<SobolPolynomial> table = {
    {1, {1}},
    {3, {1}},
    {7, {1, 3}},
    {11, {1, 3, 1}},
    {13, {1, 1, 1}},
    {19, {1, 1, 3, 3}},
    {25, {1, 3, 5, 13}},
    {37, {1, 1, 5, 5, 17}},
    {41, {1, 1, 5, 5, 5}},
    {47, {1, 1, 7, 11, 19}},
    {55, {1, 1, 5, 1, 1}},
    {59, {1, 1, 1, 3, 11}},
    {61, {1, 3, 5, 5, 31}},
    {67, {1, 3, 3, 9, 7, 49}},
    {91, {1, 1, 1, 15, 21, 21}},
    {97, {1, 3, 1, 13, 27, 49}},
    {103, {1, 1, 1, 15, 7, 5}},
    {109, {1, 3, 1, 15, 13, 25}},
    {115, {1, 1, 5, 5, 19, 61}},
    {131, {1, 3, 7, 11, 23, 15, 103}},
    {137, {1, 3, 7, 13, 13, 15, 69}},
    {143, {1, 1, 3, 13, 7, 35, 63}},
    {145, {1, 3, 5, 9, 1, 25, 53}},
    {157, {1, 3, 1, 13, 9, 35, 107}},
    {167, {1, 3, 1, 5, 27, 61, 31}},
    {171, {1, 1, 5, 11, 19, 41, 61}},
    {185, {1, 3, 5, 3, 3, 13, 69}},
    {191, {1, 1, 7, 13, 1, 19, 1}},
    {193, {1, 3, 7, 5, 13, 19, 59}},
    {203, {1, 1, 3, 9, 25, 29, 41}},
    {211, {1, 3, 5, 13, 23, 1, 55}},
    {213, {1, 3, 7, 3, 13, 59, 17}},
  };
  return table;
}

}  // namespace detail

/// Gray-code Sobol stream. Point n (0-based) is the XOR of direction numbers
/// selected by the bits of gray(n); the stream starts at `offset` and advances
/// one index per call. Offset 1 skips the all-zeros point.
class SobolStream {
 public:
  static constexpr int kBits = 32;
  static constexpr int kMaxDimension = 32;

  explicit SobolStream(int dimension, std::uint64_t offset = 1) : dim_(dimension) {
    if (dimension < 1 || dimension > kMaxDimension) {
      throw UsageError("Sobol dimension must be in [1, " + std::to_string(kMaxDimension) + "]");
    }
    directions_.resize(static_cast<std::size_t>(dim_) * kBits);
    const auto& table = detail::sobol_table();
    for (int j = 0; j < dim_; ++j) {
      std::uint32_t* v = &directions_[static_cast<std::size_t>(j) * kBits];
      if (j == 0) {
        for (int k = 0; k < kBits; ++k) v[k] = 1u << (kBits - 1 - k);
        continue;
      }
      const std::uint32_t poly = table[j].poly;
      const int s = std::bit_width(poly) - 1;
      std::vector<std::uint32_t> m(kBits);
      for (int k = 0; k < s; ++k) m[k] = table[j].initial[k];
      for (int k = s; k < kBits; ++k) {
        std::uint32_t next = m[k - s] ^ (m[k - s] << s);
        for (int i = 1; i < s; ++i) {
          if ((poly >> (s - i)) & 1u) next ^= m[k - i] << i;
        }
        m[k] = next;
      }
      for (int k = 0; k < kBits; ++k) v[k] = m[k] << (kBits - 1 - k);
    }
    seek(offset);
  }

  int dimension() const { return dim_; }
  std::uint64_t index() const { return index_; }

  /// Positions the stream so the next point is number `index`.
  void seek(std::uint64_t index) {
    if (index >= (std::uint64_t{1} << kBits)) throw UsageError("Sobol index out of range");
    index_ = index;
    state_.assign(dim_, 0u);
    const std::uint64_t gray = index ^ (index >> 1);
    for (int k = 0; k < kBits; ++k) {
      if ((gray >> k) & 1u) {
        for (int j = 0; j < dim_; ++j) state_[j] ^= directions_[static_cast<std::size_t>(j) * kBits + k];
      }
    }
  }

  /// Current point in [0,1)^dim; the index then advances.
  Vector next() {
    if (index_ >= (std::uint64_t{1} << kBits)) throw NumericalError("Sobol index overflow at 2^32");
    Vector x(dim_);
    constexpr double kScale = 1.0 / 4294967296.0;
    for (int j = 0; j < dim_; ++j) x[j] = static_cast<double>(state_[j]) * kScale;
    // gray(n+1) differs from gray(n) in the lowest zero bit of n
    const int c = std::countr_one(index_);
    ++index_;
    if (c < kBits) {
      for (int j = 0; j < dim_; ++j) state_[j] ^= directions_[static_cast<std::size_t>(j) * kBits + c];
    }
    return x;
  }

  /// Independent copy starting at a different index.
  SobolStream clone_at(std::uint64_t offset) const {
    SobolStream s = *this;
    s.seek(offset);
    return s;
  }

 private:
  int dim_;
  std::uint64_t index_ = 0;
  std::vector<std::uint32_t> directions_;
  std::vector<std::uint32_t> state_;
};

}  // namespace skh
