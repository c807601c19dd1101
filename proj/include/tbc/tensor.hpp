#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tbc/error.hpp"

namespace tbc {

#ifdef TBC_REAL_DOUBLE
using real = double;
#else
using real = float;
#endif

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major N-D array. Extents are positive; the element count always
/// equals the product of the extents.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape, real fill = real(0));
  Tensor(Shape shape, std::vector<real> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<real> data() noexcept { return data_; }
  std::span<const real> data() const noexcept { return data_; }
  std::vector<real>& values() noexcept { return data_; }
  const std::vector<real>& values() const noexcept { return data_; }

  real& operator[](std::size_t i) { return data_[i]; }
  real operator[](std::size_t i) const { return data_[i]; }

  // [C,H,W] access
  real& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  real at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }

  /// Reinterpret with a new shape of the same element count.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  void fill(real v);
  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

private:
  Shape shape_;
  std::vector<real> data_;
};

// --- elementwise -----------------------------------------------------------

enum class BinaryOp { add, sub, mul, max };

/// Applies `op` pairwise. Shapes must match exactly (no broadcasting).
Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b);
Tensor elementwise(BinaryOp op, const Tensor& a, real b);
Tensor clamp(const Tensor& a, real lo, real hi);

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::mul, a, b); }
inline Tensor maximum(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::max, a, b); }

/// In-place a += b, shapes must match.
void accumulate(Tensor& a, const Tensor& b);

/// Throws NumericalError naming `what` if any element is NaN or infinite.
void ensure_finite(std::span<const real> values, const char* what);

struct Stats {
  double mean = 0.0;
  double stddev = 0.0;  ///< population (divide by N)
};

/// Single-pass (Welford) mean and population standard deviation with 64-bit
/// accumulators. A constant input yields stddev == 0 exactly.
Stats stats(std::span<const real> values);
inline Stats stats(const Tensor& t) { return stats(t.data()); }

/// Central-difference gradient of `f` at `x`, one coordinate at a time.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps);

// --- deterministic RNG -----------------------------------------------------

/// SplitMix64 (Steele, Lea & Flood). A 64-bit Weyl counter passed through a
/// fixed avalanche finalizer. The stream is a pure function of the seed, so
/// it is identical on every platform. Derived generators are keyed by
/// (seed, stream) so independent work items never share state.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  static Rng derive(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi], inclusive, without modulo bias.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  /// Standard normal via Box-Muller (no cached second value).
  double normal();

  template <class T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i - 1)));
      std::swap(items[i - 1], items[j]);
    }
  }

  std::uint64_t state() const noexcept { return state_; }

private:
  std::uint64_t state_;
};

// --- binary tensor dump ("TBCT") -------------------------------------------
//
// magic "TBCT", u32 version = 1, u32 rank, u32 extents[rank], then the values
// as little-endian IEEE-754 binary32, row-major.

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

namespace detail {
void put_u32(std::ostream& out, std::uint32_t v);
void put_u64(std::ostream& out, std::uint64_t v);
void put_f32(std::ostream& out, float v);
std::uint32_t get_u32(std::istream& in);
std::uint64_t get_u64(std::istream& in);
float get_f32(std::istream& in);
}  // namespace detail

}  // namespace tbc
