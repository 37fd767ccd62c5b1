#include <omp.h>

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "adkd/kernels.hpp"

using adkd::Tensor;
namespace k = adkd::kernels;

namespace {

Tensor random(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t(rows, cols);
  for (double& v : t.values()) v = n(rng);
  return t;
}

// Best of `reps` wall-clock times, in milliseconds.
double best_ms(int reps, const std::function<Tensor()>& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor out = fn();
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (out.size() == 0) std::puts("");
    best = std::min(best, ms);
  }
  return best;
}

void row(const std::string& name, const std::function<Tensor()>& serial,
         const std::function<Tensor()>& parallel, int reps) {
  const double diff = adkd::max_abs_diff(serial(), parallel());
  const double s = best_ms(reps, serial);
  const double p = best_ms(reps, parallel);
  std::printf("%-28s %10.3f %10.3f %8.2fx %10.1e\n", name.c_str(), s, p, s / p, diff);
}

}  // namespace

int main(int argc, char** argv) {
  const int reps = argc > 1 ? std::stoi(argv[1]) : 5;
  std::mt19937_64 rng(1);
  std::printf("threads: %d\n", omp_get_max_threads());
  std::printf("%-28s %10s %10s %9s %10s\n", "kernel", "serial ms", "omp ms", "speedup",
              "max diff");
  for (std::size_t n : {64, 256, 512}) {
    const Tensor a = random(n, n, rng);
    const Tensor b = random(n, n, rng);
    const std::string dims = std::to_string(n) + "x" + std::to_string(n);
    row("matmul " + dims, [&] { return k::reference::matmul(a, b); },
        [&] { return k::matmul(a, b); }, reps);
    row("matmul_nt " + dims, [&] { return k::reference::matmul_nt(a, b); },
        [&] { return k::matmul_nt(a, b); }, reps);
    row("matmul_tn " + dims, [&] { return k::reference::matmul_tn(a, b); },
        [&] { return k::matmul_tn(a, b); }, reps);
    row("softmax_rows " + dims, [&] { return k::reference::softmax_rows(a, {}); },
        [&] { return k::softmax_rows(a, {}); }, reps);
    row("gelu " + dims, [&] { return k::reference::gelu(a); }, [&] { return k::gelu(a); }, reps);
  }
}
