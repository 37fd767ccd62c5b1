#include "adkd/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "adkd/errors.hpp"

namespace adkd::kernels {
namespace {

// Below this many multiply-adds the fork/join cost dominates.
constexpr long kParallelWork = 1L << 15;

constexpr double kSqrt2OverPi = 0.7978845608028654;
constexpr double kGeluCubic = 0.044715;

void require(bool ok, const char* op, const Tensor& a, const Tensor& b) {
  if (!ok) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape().str() + " and " +
                     b.shape().str());
  }
}

bool masked_out(std::span<const unsigned char> mask, std::size_t c) {
  return !mask.empty() && mask[c] == 0;
}

template <class F>
Tensor map(const Tensor& x, F f) {
  Tensor out(x.rows(), x.cols());
  const long n = static_cast<long>(x.size());
  const double* in = x.data();
  double* o = out.data();
#pragma omp parallel for if (n > kParallelWork / 8)
  for (long i = 0; i < n; ++i) o[i] = f(in[i]);
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.rows(), "matmul", a, b);
  const long m = static_cast<long>(a.rows());
  const std::size_t inner = a.cols();
  const std::size_t n = b.cols();
  Tensor out(a.rows(), n);
  const long work = m * static_cast<long>(inner * n);
#pragma omp parallel for if (work > kParallelWork)
  for (long i = 0; i < m; ++i) {
    double* o = out.data() + i * n;
    const double* ar = a.data() + i * inner;
    for (std::size_t k = 0; k < inner; ++k) {
      const double aik = ar[k];
      const double* br = b.data() + k * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += aik * br[j];
    }
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.cols(), "matmul_nt", a, b);
  const long m = static_cast<long>(a.rows());
  const std::size_t inner = a.cols();
  const std::size_t n = b.rows();
  Tensor out(a.rows(), n);
  const long work = m * static_cast<long>(inner * n);
#pragma omp parallel for if (work > kParallelWork)
  for (long i = 0; i < m; ++i) {
    const double* ar = a.data() + i * inner;
    for (std::size_t j = 0; j < n; ++j) {
      const double* br = b.data() + j * inner;
      double s = 0.0;
      for (std::size_t k = 0; k < inner; ++k) s += ar[k] * br[k];
      out(i, j) = s;
    }
  }
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows(), "matmul_tn", a, b);
  const long m = static_cast<long>(a.cols());
  const std::size_t inner = a.rows();
  const std::size_t n = b.cols();
  Tensor out(a.cols(), n);
  const long work = m * static_cast<long>(inner * n);
#pragma omp parallel for if (work > kParallelWork)
  for (long i = 0; i < m; ++i) {
    double* o = out.data() + i * n;
    for (std::size_t k = 0; k < inner; ++k) {
      const double aki = a(k, i);
      const double* br = b.data() + k * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += aki * br[j];
    }
  }
  return out;
}

Tensor softmax_rows(const Tensor& x, std::span<const unsigned char> key_mask) {
  if (!key_mask.empty() && key_mask.size() != x.cols()) {
    throw ShapeError("softmax_rows: mask length " + std::to_string(key_mask.size()) +
                     " for " + x.shape().str());
  }
  Tensor out(x.rows(), x.cols());
  const long rows = static_cast<long>(x.rows());
  const std::size_t cols = x.cols();
#pragma omp parallel for if (rows * static_cast<long>(cols) > kParallelWork / 8)
  for (long r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) {
      if (!masked_out(key_mask, c)) mx = std::max(mx, x(r, c));
    }
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double e = masked_out(key_mask, c) ? 0.0 : std::exp(x(r, c) - mx);
      out(r, c) = e;
      total += e;
    }
    for (std::size_t c = 0; c < cols; ++c) out(r, c) /= total;
  }
  return out;
}

Tensor log_softmax_rows(const Tensor& x) {
  Tensor out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < x.cols(); ++c) mx = std::max(mx, x(r, c));
    double total = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) total += std::exp(x(r, c) - mx);
    const double lse = mx + std::log(total);
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(r, c) - lse;
  }
  return out;
}

double gelu(double x) {
  const double u = kSqrt2OverPi * (x + kGeluCubic * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad(double x) {
  const double u = kSqrt2OverPi * (x + kGeluCubic * x * x * x);
  const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluCubic * x * x);
  const double t = std::tanh(u);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

double gelu_grad2(double x) {
  const double u = kSqrt2OverPi * (x + kGeluCubic * x * x * x);
  const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluCubic * x * x);
  const double ddu = kSqrt2OverPi * 6.0 * kGeluCubic * x;
  const double t = std::tanh(u);
  const double sech2 = 1.0 - t * t;
  return sech2 * (du + 0.5 * x * (ddu - 2.0 * t * du * du));
}

Tensor gelu(const Tensor& x) { return map(x, [](double v) { return gelu(v); }); }
Tensor gelu_grad(const Tensor& x) { return map(x, [](double v) { return gelu_grad(v); }); }
Tensor gelu_grad2(const Tensor& x) { return map(x, [](double v) { return gelu_grad2(v); }); }

namespace reference {

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.rows(), "matmul", a, b);
  Tensor out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.cols(), "matmul_nt", a, b);
  Tensor out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
      out(i, j) = s;
    }
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows(), "matmul_tn", a, b);
  Tensor out(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.cols(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.rows(); ++k) s += a(k, i) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

Tensor softmax_rows(const Tensor& x, std::span<const unsigned char> key_mask) {
  Tensor out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      if (!masked_out(key_mask, c)) total += std::exp(x(r, c));
    }
    for (std::size_t c = 0; c < x.cols(); ++c) {
      out(r, c) = masked_out(key_mask, c) ? 0.0 : std::exp(x(r, c)) / total;
    }
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kSqrt2OverPi * (v + kGeluCubic * v * v * v)));
  }
  return out;
}

}  // namespace reference
}  // namespace adkd::kernels
