#include <doctest.h>

#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "adkd/errors.hpp"
#include "adkd/kernels.hpp"

using adkd::Tensor;
namespace k = adkd::kernels;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor t(r, c);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

void check_close(const Tensor& a, const Tensor& b, double tol) {
  REQUIRE(a.shape() == b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= tol);
}

}  // namespace

TEST_CASE("parallel matmul variants agree with the serial reference") {
  std::mt19937_64 rng(7);
  for (auto [m, inner, n] : std::vector<std::array<std::size_t, 3>>{
           {1, 1, 1}, {3, 5, 2}, {17, 64, 33}, {128, 96, 80}}) {
    const Tensor a = random_tensor(m, inner, rng);
    const Tensor b = random_tensor(inner, n, rng);
    check_close(k::matmul(a, b), k::reference::matmul(a, b), 1e-12);

    const Tensor bt = random_tensor(n, inner, rng);
    check_close(k::matmul_nt(a, bt), k::reference::matmul_nt(a, bt), 1e-12);

    const Tensor at = random_tensor(inner, m, rng);
    check_close(k::matmul_tn(at, b), k::reference::matmul_tn(at, b), 1e-12);
  }
}

TEST_CASE("matmul rejects incompatible shapes") {
  CHECK_THROWS_AS(k::matmul(Tensor(2, 3), Tensor(2, 3)), adkd::ShapeError);
  CHECK_THROWS_AS(k::matmul_nt(Tensor(2, 3), Tensor(2, 4)), adkd::ShapeError);
  CHECK_THROWS_AS(k::matmul_tn(Tensor(2, 3), Tensor(3, 3)), adkd::ShapeError);
}

TEST_CASE("softmax rows with and without key mask") {
  std::mt19937_64 rng(11);
  const Tensor x = random_tensor(200, 300, rng);
  check_close(k::softmax_rows(x, {}), k::reference::softmax_rows(x, {}), 1e-14);

  std::vector<unsigned char> mask(300, 1);
  for (std::size_t c = 250; c < 300; ++c) mask[c] = 0;
  const Tensor p = k::softmax_rows(x, mask);
  check_close(p, k::reference::softmax_rows(x, mask), 1e-14);
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < p.cols(); ++c) total += p(r, c);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(p(r, 260) == 0.0);
  }

  const Tensor uniform = k::softmax_rows(Tensor(1, 2, 0.0), {});
  CHECK(uniform[0] == 0.5);
  CHECK(uniform[1] == 0.5);
}

TEST_CASE("gelu kernels match reference and their derivatives match central differences") {
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor(40, 50, rng);
  check_close(k::gelu(x), k::reference::gelu(x), 1e-15);

  const double h = 1e-5;
  for (double v : {-3.0, -1.2, -0.3, 0.0, 0.4, 1.7, 3.5}) {
    const double fd1 = (k::gelu(v + h) - k::gelu(v - h)) / (2 * h);
    const double fd2 = (k::gelu_grad(v + h) - k::gelu_grad(v - h)) / (2 * h);
    CHECK(k::gelu_grad(v) == doctest::Approx(fd1).epsilon(1e-8));
    CHECK(k::gelu_grad2(v) == doctest::Approx(fd2).epsilon(1e-7));
  }
  CHECK(k::gelu(0.0) == 0.0);
  CHECK(k::gelu_grad(0.0) == 0.5);
}
