// Serial vs OpenMP kernels: wall time and a bitwise comparison of outputs.
// Usage: eclab_bench [repeats]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <vector>

#include "eclab/gradcore/kernels.hpp"
#include "eclab/rng.hpp"

namespace k = eclab::kernels;

namespace {

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  eclab::Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

double time_ms(int repeats, const std::function<void()>& fn) {
  fn();  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < repeats; ++r) fn();
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() / repeats;
}

bool same_bits(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

void report(const char* name, double serial_ms, double parallel_ms, bool identical) {
  std::printf("%-28s serial %9.3f ms  parallel %9.3f ms  speedup %5.2fx  %s\n", name, serial_ms, parallel_ms,
              serial_ms / parallel_ms, identical ? "bitwise-identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  const int repeats = argc > 1 ? std::max(1, std::atoi(argv[1])) : 5;
  std::printf("threads: %d, repeats: %d\n", k::max_threads(), repeats);
  bool all_same = true;

  for (std::size_t n : {64, 256, 512}) {
    const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
    std::vector<float> cs(n * n), cp(n * n);
    const double ts = time_ms(repeats, [&] { k::serial::matmul_nn<float>(a, b, cs, n, n, n, false); });
    const double tp = time_ms(repeats, [&] { k::parallel::matmul_nn<float>(a, b, cp, n, n, n, false); });
    char name[64];
    std::snprintf(name, sizeof(name), "matmul_nn %zux%zu", n, n);
    report(name, ts, tp, same_bits(cs, cp));
    all_same = all_same && same_bits(cs, cp);

    const double ts2 = time_ms(repeats, [&] { k::serial::matmul_nt<float>(a, b, cs, n, n, n, false); });
    const double tp2 = time_ms(repeats, [&] { k::parallel::matmul_nt<float>(a, b, cp, n, n, n, false); });
    std::snprintf(name, sizeof(name), "matmul_nt %zux%zu", n, n);
    report(name, ts2, tp2, same_bits(cs, cp));
    all_same = all_same && same_bits(cs, cp);

    const double ts3 = time_ms(repeats, [&] { k::serial::matmul_tn<float>(a, b, cs, n, n, n, false); });
    const double tp3 = time_ms(repeats, [&] { k::parallel::matmul_tn<float>(a, b, cp, n, n, n, false); });
    std::snprintf(name, sizeof(name), "matmul_tn %zux%zu", n, n);
    report(name, ts3, tp3, same_bits(cs, cp));
    all_same = all_same && same_bits(cs, cp);
  }

  const std::size_t rows = 4096, cols = 256;
  const auto x = random_vec(rows * cols, 3), dy = random_vec(rows * cols, 4);
  const auto gain = random_vec(cols, 5), bias = random_vec(cols, 6);
  std::vector<float> ys(rows * cols), yp(rows * cols);

  report("gelu_forward 4096x256",
         time_ms(repeats, [&] { k::serial::gelu_forward<float>(x, ys); }),
         time_ms(repeats, [&] { k::parallel::gelu_forward<float>(x, yp); }), same_bits(ys, yp));
  all_same = all_same && same_bits(ys, yp);

  std::fill(ys.begin(), ys.end(), 0.0f);
  std::fill(yp.begin(), yp.end(), 0.0f);
  k::serial::gelu_backward<float>(x, dy, ys);
  k::parallel::gelu_backward<float>(x, dy, yp);
  const bool gb = same_bits(ys, yp);
  report("gelu_backward 4096x256",
         time_ms(repeats, [&] { k::serial::gelu_backward<float>(x, dy, ys); }),
         time_ms(repeats, [&] { k::parallel::gelu_backward<float>(x, dy, yp); }), gb);
  all_same = all_same && gb;

  std::vector<float> xh_s(rows * cols), xh_p(rows * cols), rs_s(rows), rs_p(rows);
  report("layer_norm 4096x256",
         time_ms(repeats, [&] {
           k::serial::layer_norm_forward<float>(x, gain, bias, ys, xh_s, rs_s, rows, cols, 1e-5f);
         }),
         time_ms(repeats, [&] {
           k::parallel::layer_norm_forward<float>(x, gain, bias, yp, xh_p, rs_p, rows, cols, 1e-5f);
         }),
         same_bits(ys, yp) && same_bits(rs_s, rs_p));
  all_same = all_same && same_bits(ys, yp) && same_bits(rs_s, rs_p);

  report("softmax_rows 4096x256",
         time_ms(repeats, [&] { k::serial::softmax_rows<float>(x, ys, rows, cols); }),
         time_ms(repeats, [&] { k::parallel::softmax_rows<float>(x, yp, rows, cols); }), same_bits(ys, yp));
  all_same = all_same && same_bits(ys, yp);

  return all_same ? 0 : 1;
}
