// Benchmark: OpenMP-parallel kernels (matmul, conv3d forward) against the
// serial reference implementations in adavit::ref, with an agreement check.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "adavit/ref_kernels.hpp"
#include "adavit/rng.hpp"
#include "adavit/tensor.hpp"

using namespace adavit;

namespace {

double seconds(const std::function<void()>& f, int reps) {
  f();  // warm-up
  auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) f();
  auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double>(t1 - t0).count() / reps;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void row(const char* name, double t_par, double t_ref, double diff) {
  std::printf("%-28s %12.6f %12.6f %9.2fx %12.3e\n", name, t_par, t_ref, t_ref / t_par, diff);
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("threads: %d\n", omp_get_max_threads());
#else
  std::printf("threads: 1 (built without OpenMP)\n");
#endif
  std::printf("%-28s %12s %12s %10s %12s\n", "kernel", "parallel[s]", "serial[s]", "speedup",
              "max|diff|");
  Rng rng(42);

  for (std::size_t n : {128, 256, 512}) {
    Tensor a = Tensor::randn({n, n}, rng);
    Tensor b = Tensor::randn({n, n}, rng);
    std::vector<double> par, ser;
    const double t_par = seconds([&] { par = matmul(a, b).data(); }, 3);
    const double t_ref = seconds([&] { ser = ref::matmul(a.data(), b.data(), n, n, n); }, 3);
    char name[64];
    std::snprintf(name, sizeof name, "matmul %zux%zu", n, n);
    row(name, t_par, t_ref, max_abs_diff(par, ser));
  }

  struct ConvCase {
    Shape xs, ws;
    std::size_t stride, pad;
  };
  for (const ConvCase& c : {ConvCase{{2, 32, 32, 32}, {96, 2, 8, 8, 8}, 8, 0},
                            ConvCase{{16, 32, 32, 32}, {16, 16, 3, 3, 3}, 1, 1}}) {
    Tensor x = Tensor::randn(c.xs, rng);
    Tensor w = Tensor::randn(c.ws, rng, 0.1);
    Tensor bias = Tensor::randn({c.ws[0]}, rng, 0.1);
    std::vector<double> par, ser;
    const double t_par = seconds([&] { par = conv3d(x, w, bias, c.stride, c.pad).data(); }, 3);
    const double t_ref = seconds(
        [&] {
          ser = ref::conv3d(x.data(), w.data(), bias.data(), c.xs[0], c.xs[1], c.xs[2], c.xs[3],
                            c.ws[0], c.ws[2], c.stride, c.pad);
        },
        3);
    char name[64];
    std::snprintf(name, sizeof name, "conv3d %zuc k%zu s%zu p%zu", c.xs[0], c.ws[2], c.stride,
                  c.pad);
    row(name, t_par, t_ref, max_abs_diff(par, ser));
  }

  {
    Tensor x = Tensor::randn({32, 4, 4, 4}, rng);
    Tensor w = Tensor::randn({32, 16, 2, 2, 2}, rng, 0.1);
    Tensor bias = Tensor::randn({16}, rng, 0.1);
    std::vector<double> par, ser;
    const double t_par = seconds([&] { par = transposed_conv3d(x, w, bias, 2).data(); }, 3);
    const double t_ref = seconds(
        [&] { ser = ref::transposed_conv3d(x.data(), w.data(), bias.data(), 32, 4, 4, 4, 16, 2); },
        3);
    row("transposed_conv3d 32->16 k2", t_par, t_ref, max_abs_diff(par, ser));
  }
  return 0;
}
