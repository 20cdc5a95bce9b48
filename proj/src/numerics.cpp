#include "asft/numerics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "asft/errors.hpp"

namespace asft {

const char* dtype_name(DType dtype) {
  return dtype == DType::Float32 ? "float32" : "float64";
}

namespace {

std::size_t checked_count(const std::vector<std::size_t>& dims) {
  if (dims.empty() || dims.size() > 2) {
    throw ShapeError("tensor rank must be 1 or 2, got " + std::to_string(dims.size()));
  }
  std::size_t n = 1;
  for (std::size_t d : dims) {
    if (d == 0) throw ShapeError("tensor extents must be positive");
    n *= d;
  }
  return n;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() +
                     " vs " + b.shape_string());
  }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> dims, DType dtype)
    : dims_(std::move(dims)), dtype_(dtype) {
  data_.assign(checked_count(dims_), 0.0);
}

Tensor::Tensor(std::vector<std::size_t> dims, std::vector<double> data, DType dtype)
    : dims_(std::move(dims)), data_(std::move(data)), dtype_(dtype) {
  std::size_t n = checked_count(dims_);
  if (data_.size() != n) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match extents " + shape_string());
  }
  round_to_dtype();
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }

Tensor Tensor::zeros_like(const Tensor& other) { return Tensor(other.dims_, other.dtype_); }

Tensor Tensor::vector(std::vector<double> values) {
  std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  std::size_t r = rows.size();
  std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

Tensor Tensor::astype(DType dtype) const {
  Tensor out = *this;
  out.dtype_ = dtype;
  out.round_to_dtype();
  return out;
}

void Tensor::round_to_dtype() {
  if (dtype_ != DType::Float32) return;
  for (double& v : data_) v = static_cast<double>(static_cast<float>(v));
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "x" : "") << dims_[i];
  os << ']';
  return os.str();
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "add");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  round_to_dtype();
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  require_same_shape(*this, other, "subtract");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  round_to_dtype();
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  round_to_dtype();
  return *this;
}

Tensor& Tensor::add_scaled(const Tensor& other, double s) {
  require_same_shape(*this, other, "add_scaled");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * other.data_[i];
  round_to_dtype();
  return *this;
}

bool Tensor::bit_equal(const Tensor& other) const noexcept {
  if (dims_ != other.dims_ || dtype_ != other.dtype_) return false;
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(data_[i]) != std::bit_cast<std::uint64_t>(other.data_[i])) {
      return false;
    }
  }
  return true;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double s) { return a *= s; }
Tensor operator*(double s, Tensor a) { return a *= s; }

double frobenius_dot(const Tensor& x, const Tensor& y) {
  require_same_shape(x, y, "frobenius_dot");
  auto xs = x.data();
  auto ys = y.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) acc += xs[i] * ys[i];
  return acc;
}

double frobenius_norm(const Tensor& x) { return std::sqrt(frobenius_dot(x, x)); }

double max_abs(const Tensor& x) {
  double m = 0.0;
  for (double v : x.data()) m = std::max(m, std::abs(v));
  return m;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul: incompatible shapes " + a.shape_string() + " and " +
                     b.shape_string());
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a(i, p);
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out(i, j) += aip * b(p, j);
    }
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected a matrix, got " + a.shape_string());
  Tensor out({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Tensor matvec(const Tensor& a, const Tensor& x) {
  if (a.rank() != 2 || x.rank() != 1 || a.cols() != x.size()) {
    throw ShapeError("matvec: incompatible shapes " + a.shape_string() + " and " +
                     x.shape_string());
  }
  Tensor out({a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) acc += a(i, j) * x[j];
    out[i] = acc;
  }
  return out;
}

Tensor outer(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || b.rank() != 1) throw ShapeError("outer: expected vectors");
  Tensor out({a.size(), b.size()});
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) out(i, j) = a[i] * b[j];
  return out;
}

namespace {

// One-sided (Hestenes) Jacobi on a tall matrix (m >= n). Orthogonalizes the
// columns of `work` in place, accumulating the rotations into `v` (n x n).
void hestenes_jacobi(Tensor& work, Tensor& v) {
  const std::size_t m = work.rows(), n = work.cols();
  const std::size_t max_sweeps = 100 * std::min(m, n);
  constexpr double kTol = 1e-10;

  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          alpha += work(i, p) * work(i, p);
          beta += work(i, q) * work(i, q);
          gamma += work(i, p) * work(i, q);
        }
        if (gamma == 0.0) continue;
        const double scale = std::sqrt(alpha * beta);
        if (scale == 0.0) continue;
        const double rel = std::abs(gamma) / scale;
        off = std::max(off, rel);
        if (rel <= kTol) continue;

        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double wp = work(i, p), wq = work(i, q);
          work(i, p) = c * wp - s * wq;
          work(i, q) = s * wp + c * wq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (off <= kTol) return;
  }
  throw NumericError("thin_svd: Jacobi iteration did not converge within " +
                     std::to_string(max_sweeps) + " sweeps");
}

// Full SVD of a tall matrix: columns of u orthonormal (completed where the
// singular value is zero), s non-increasing, v orthogonal (n x n).
void tall_svd(const Tensor& x, Tensor& u, std::vector<double>& s, Tensor& v) {
  const std::size_t m = x.rows(), n = x.cols();
  Tensor work = x;
  v = Tensor::identity(n);
  hestenes_jacobi(work, v);

  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) acc += work(i, j) * work(i, j);
    norms[j] = std::sqrt(acc);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });

  const double smax = n ? norms[order[0]] : 0.0;
  const double cutoff = std::max(smax, 1.0) * 1e-13;

  u = Tensor({m, n});
  Tensor v_sorted({n, n});
  s.assign(n, 0.0);
  std::vector<bool> filled(n, false);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    for (std::size_t i = 0; i < n; ++i) v_sorted(i, j) = v(i, src);
    if (norms[src] > cutoff) {
      s[j] = norms[src];
      for (std::size_t i = 0; i < m; ++i) u(i, j) = work(i, src) / norms[src];
      filled[j] = true;
    }
  }
  v = std::move(v_sorted);

  // Complete U for zero singular values with Gram-Schmidt over the standard basis.
  std::size_t candidate = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (filled[j]) continue;
    while (candidate < m) {
      std::vector<double> e(m, 0.0);
      e[candidate++] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t c = 0; c < n; ++c) {
          if (!filled[c]) continue;
          double d = 0.0;
          for (std::size_t i = 0; i < m; ++i) d += u(i, c) * e[i];
          for (std::size_t i = 0; i < m; ++i) e[i] -= d * u(i, c);
        }
      }
      double nrm = 0.0;
      for (double val : e) nrm += val * val;
      nrm = std::sqrt(nrm);
      if (nrm > 1e-6) {
        for (std::size_t i = 0; i < m; ++i) u(i, j) = e[i] / nrm;
        filled[j] = true;
        break;
      }
    }
  }
}

}  // namespace

ThinSvd thin_svd(const Tensor& x, std::size_t k) {
  if (x.rank() != 2) throw ShapeError("thin_svd: expected a matrix, got " + x.shape_string());
  const std::size_t m = x.rows(), n = x.cols();
  if (k < 1 || k > std::min(m, n)) {
    throw ParameterError("thin_svd: k=" + std::to_string(k) + " outside [1, " +
                         std::to_string(std::min(m, n)) + "]");
  }
  if (!x.all_finite()) throw NumericError("thin_svd: input contains non-finite values");

  Tensor u_full, v_full;
  std::vector<double> s_full;
  const bool wide = m < n;
  if (wide) {
    // x^T = U' S V'^T  =>  x = V' S U'^T
    tall_svd(transpose(x), u_full, s_full, v_full);
    std::swap(u_full, v_full);
  } else {
    tall_svd(x, u_full, s_full, v_full);
  }
  // u_full: m x r, v_full: n x r with r = min(m, n).

  ThinSvd out{Tensor({m, k}), std::vector<double>(s_full.begin(), s_full.begin() + k),
              Tensor({k, n})};
  for (std::size_t j = 0; j < k; ++j) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < m; ++i)
      if (std::abs(u_full(i, j)) > std::abs(u_full(arg, j))) arg = i;
    const double sign = u_full(arg, j) < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < m; ++i) out.u(i, j) = sign * u_full(i, j);
    for (std::size_t i = 0; i < n; ++i) out.vt(j, i) = sign * v_full(i, j);
  }
  return out;
}

namespace {
std::uint64_t splitmix64(std::uint64_t& x) noexcept {
  std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}
}  // namespace

Rng::Rng(std::uint64_t seed) {
  std::uint64_t sm = seed;
  for (auto& s : state_) s = splitmix64(sm);
}

std::uint64_t Rng::next_u64() noexcept {
  const std::uint64_t result = std::rotl(state_[1] * 5, 7) * 9;
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = std::rotl(state_[3], 45);
  return result;
}

double Rng::uniform() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t n) noexcept {
  if (n <= 1) return 0;
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t r;
  do {
    r = next_u64();
  } while (r >= limit);
  return r % n;
}

double Rng::normal() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(theta);
  has_spare_ = true;
  return radius * std::cos(theta);
}

std::uint64_t Rng::derive(std::uint64_t seed, std::uint64_t stream) noexcept {
  std::uint64_t x = seed ^ (0xD1B54A32D192ED03ULL * (stream + 1));
  splitmix64(x);
  return splitmix64(x);
}

Tensor random_normal(std::vector<std::size_t> dims, Rng& rng, double stddev) {
  Tensor t(std::move(dims));
  for (double& v : t.data()) v = stddev * rng.normal();
  return t;
}

Tensor random_uniform(std::vector<std::size_t> dims, Rng& rng, double lo, double hi) {
  Tensor t(std::move(dims));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace asft
