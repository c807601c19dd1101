#include "tbc/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace tbc {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return shape.empty() ? 0 : n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, real fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<real> values) : shape_(std::move(shape)), data_(std::move(values)) {
  check_shape(shape_);
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_string(shape_) + " does not match " +
                     std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::reshaped(Shape shape) const& {
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::reshaped(Shape shape) && {
  return Tensor(std::move(shape), std::move(data_));
}

void Tensor::fill(real v) { std::fill(data_.begin(), data_.end(), v); }

void ensure_finite(std::span<const real> values, const char* what) {
  for (real v : values) {
    if (!std::isfinite(v)) throw NumericalError(std::string("non-finite value in ") + what);
  }
}

namespace {

real apply(BinaryOp op, real a, real b) {
  switch (op) {
    case BinaryOp::add: return a + b;
    case BinaryOp::sub: return a - b;
    case BinaryOp::mul: return a * b;
    case BinaryOp::max: return std::max(a, b);
  }
  return a;
}

}  // namespace

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("elementwise shape mismatch: " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = apply(op, a[i], b[i]);
  ensure_finite(out.data(), "elementwise result");
  return out;
}

Tensor elementwise(BinaryOp op, const Tensor& a, real b) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = apply(op, a[i], b);
  ensure_finite(out.data(), "elementwise result");
  return out;
}

Tensor clamp(const Tensor& a, real lo, real hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::clamp(a[i], lo, hi);
  return out;
}

void accumulate(Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("accumulate shape mismatch: " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

Stats stats(std::span<const real> values) {
  if (values.empty()) throw ShapeError("stats of an empty tensor");
  double mean = 0.0;
  double m2 = 0.0;
  std::size_t n = 0;
  for (real v : values) {
    ++n;
    const double delta = static_cast<double>(v) - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (static_cast<double>(v) - mean);
  }
  return {mean, std::sqrt(std::max(0.0, m2 / static_cast<double>(n)))};
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_grad: eps must be positive");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const real orig = probe[i];
    probe[i] = static_cast<real>(orig + eps);
    const double fp = f(probe);
    probe[i] = static_cast<real>(orig - eps);
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericalError("finite_diff_grad: objective returned a non-finite value");
    }
    // Divide by the step actually taken after rounding to `real`.
    const double step = static_cast<double>(static_cast<real>(orig + eps)) -
                        static_cast<double>(static_cast<real>(orig - eps));
    grad[i] = static_cast<real>((fp - fm) / step);
  }
  return grad;
}

// --- Rng --------------------------------------------------------------------

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

Rng Rng::derive(std::uint64_t seed, std::uint64_t stream) {
  return Rng(mix64(seed + kGolden) ^ mix64((stream + 1) * kGolden));
}

std::uint64_t Rng::next_u64() {
  state_ += kGolden;
  return mix64(state_);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (lo > hi) throw std::invalid_argument("uniform_int: lo > hi");
  const auto range = static_cast<std::uint64_t>(hi - lo) + 1;
  if (range == 0) return static_cast<std::int64_t>(next_u64());  // full 64-bit range
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % range;
  std::uint64_t r;
  do {
    r = next_u64();
  } while (r >= limit);
  return lo + static_cast<std::int64_t>(r % range);
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// --- TBCT -------------------------------------------------------------------

namespace detail {

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(b, 8);
}

void put_f32(std::ostream& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw DataError("unexpected end of binary stream");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& in) {
  const std::uint64_t lo = get_u32(in);
  const std::uint64_t hi = get_u32(in);
  return lo | (hi << 32);
}

float get_f32(std::istream& in) { return std::bit_cast<float>(get_u32(in)); }

}  // namespace detail

namespace {
constexpr char kTensorMagic[4] = {'T', 'B', 'C', 'T'};
constexpr std::uint32_t kTensorVersion = 1;
}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kTensorMagic, 4);
  detail::put_u32(out, kTensorVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(e));
  for (real v : t.data()) detail::put_f32(out, static_cast<float>(v));
  if (!out) throw DataError("failed writing tensor");
}

Tensor read_tensor(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kTensorMagic, 4) != 0) {
    throw DataError("not a TBCT tensor stream");
  }
  const auto version = detail::get_u32(in);
  if (version != kTensorVersion) throw DataError("unsupported TBCT version " + std::to_string(version));
  const auto rank = detail::get_u32(in);
  if (rank == 0 || rank > 8) throw DataError("implausible TBCT rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) e = detail::get_u32(in);
  std::vector<real> values(shape_size(shape));
  for (auto& v : values) v = static_cast<real>(detail::get_f32(in));
  return Tensor(std::move(shape), std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_tensor(in);
}

}  // namespace tbc
