#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace asft {

enum class DType : std::uint8_t { Float32 = 0, Float64 = 1 };

const char* dtype_name(DType dtype);

// Dense row-major array of rank 1 or 2.
//
// Values are always held as double. A Float32 tensor stores values that are
// exactly representable as float (every write path rounds through float), so
// persisting it as 32-bit scalars is lossless.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims, DType dtype = DType::Float64);
  Tensor(std::vector<std::size_t> dims, std::vector<double> data,
         DType dtype = DType::Float64);

  static Tensor zeros(std::size_t rows, std::size_t cols);
  static Tensor zeros_like(const Tensor& other);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  DType dtype() const noexcept { return dtype_; }

  // Rows and columns; a rank-1 tensor is treated as a column.
  std::size_t rows() const noexcept { return dims_.empty() ? 0 : dims_[0]; }
  std::size_t cols() const noexcept { return dims_.size() == 2 ? dims_[1] : 1; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  // Copy converted to `dtype`; narrowing to Float32 rounds every value.
  Tensor astype(DType dtype) const;

  bool same_shape(const Tensor& other) const noexcept { return dims_ == other.dims_; }
  bool all_finite() const noexcept;
  std::string shape_string() const;

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double s);
  // this += s * other
  Tensor& add_scaled(const Tensor& other, double s);

  // Bitwise equality of dims, dtype and every scalar's bit pattern.
  bool bit_equal(const Tensor& other) const noexcept;

 private:
  void round_to_dtype();

  std::vector<std::size_t> dims_;
  std::vector<double> data_;
  DType dtype_ = DType::Float64;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);
Tensor operator*(double s, Tensor a);

double frobenius_dot(const Tensor& x, const Tensor& y);
double frobenius_norm(const Tensor& x);
double max_abs(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// y = a * x for a matrix and a rank-1 vector.
Tensor matvec(const Tensor& a, const Tensor& x);
// a * b^T, used for rank-one gradient accumulation.
Tensor outer(const Tensor& a, const Tensor& b);

struct ThinSvd {
  Tensor u;                  // m x k, orthonormal columns
  std::vector<double> s;     // k values, non-increasing
  Tensor vt;                 // k x n
};

// Rank-k truncated SVD by one-sided Jacobi rotations. Each U column has its
// largest-magnitude entry made non-negative (the matching Vt row flips with it).
ThinSvd thin_svd(const Tensor& x, std::size_t k);

// xoshiro256** seeded through splitmix64. The stream is identical on every
// platform, and so are the derived draws below (no std:: distributions).
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64() noexcept;
  // Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n) by rejection, unbiased.
  std::uint64_t below(std::uint64_t n) noexcept;
  // Standard normal via Box-Muller; the spare value is cached.
  double normal() noexcept;
  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  // Deterministic child stream for an independent sub-task.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) noexcept;

 private:
  std::uint64_t state_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

Tensor random_normal(std::vector<std::size_t> dims, Rng& rng, double stddev = 1.0);
Tensor random_uniform(std::vector<std::size_t> dims, Rng& rng, double lo, double hi);

}  // namespace asft
