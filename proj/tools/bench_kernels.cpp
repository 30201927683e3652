// Compares the serial reference matmul against the OpenMP backend: checks
// bit-identical output, then reports GFLOP/s for a range of sizes.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#include "CLI11.hpp"
#include "lfdm/kernels.hpp"
#include "lfdm/nn.hpp"

using namespace lfdm;

namespace {

double time_matmul(void (*fn)(const float*, const float*, float*, int, int,
                              int, bool),
                   const std::vector<float>& a, const std::vector<float>& b,
                   std::vector<float>& c, int m, int k, int n, int reps) {
  fn(a.data(), b.data(), c.data(), m, k, n, false);  // warm up
  const auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r)
    fn(a.data(), b.data(), c.data(), m, k, n, false);
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
             .count() /
         reps;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Serial vs OpenMP kernel benchmark"};
  int reps = 5;
  app.add_option("--reps", reps, "Repetitions per size");
  CLI11_PARSE(app, argc, argv);

  std::printf("%8s %12s %12s %10s %10s %8s\n", "size", "serial GF/s",
              "omp GF/s", "serial s", "omp s", "match");
  bool all_match = true;
  for (int s : {64, 128, 256, 512}) {
    const int m = s, k = s, n = s;
    Rng rng(42);
    std::vector<float> a(static_cast<size_t>(m) * k),
        b(static_cast<size_t>(k) * n);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    std::vector<float> c_serial(static_cast<size_t>(m) * n),
        c_omp(static_cast<size_t>(m) * n);

    const double ts = time_matmul(kernels::detail::matmul_serial, a, b,
                                  c_serial, m, k, n, reps);
    const double to = time_matmul(kernels::detail::matmul_omp, a, b, c_omp, m,
                                  k, n, reps);
    const bool match = std::memcmp(c_serial.data(), c_omp.data(),
                                   c_serial.size() * sizeof(float)) == 0;
    all_match = all_match && match;
    const double flops = 2.0 * m * k * n;
    std::printf("%8d %12.2f %12.2f %10.4f %10.4f %8s\n", s,
                flops / ts * 1e-9, flops / to * 1e-9, ts, to,
                match ? "yes" : "NO");
  }
  if (!all_match) {
    std::fprintf(stderr, "error: serial and OpenMP results differ\n");
    return 1;
  }
  return 0;
}
