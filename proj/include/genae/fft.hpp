#pragma once

// Complex FFT of arbitrary length backed by FFTW. Plans are cached per thread.

#include <fftw3.h>

#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

namespace genae::fft {

using cplx = std::complex<double>;

namespace detail {

// FFTW's planner is not thread-safe; execution of an existing plan is.
inline std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct Plan {
  fftw_plan fwd = nullptr, inv = nullptr;
  explicit Plan(std::size_t n) {
    std::vector<cplx> scratch(n);
    auto* p = reinterpret_cast<fftw_complex*>(scratch.data());
    const int len = static_cast<int>(n);
    std::lock_guard lock(planner_mutex());
    fwd = fftw_plan_dft_1d(len, p, p, FFTW_FORWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
    inv = fftw_plan_dft_1d(len, p, p, FFTW_BACKWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
  }
  ~Plan() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
  }
  Plan(const Plan&) = delete;
  Plan& operator=(const Plan&) = delete;
};

}  // namespace detail

// In-place unnormalized DFT: X_k = sum_n x_n e^{-2 pi i k n / N} (inverse: e^{+...}, no 1/N).
inline void transform(std::vector<cplx>& a, bool inverse = false) {
  const std::size_t n = a.size();
  if (n <= 1) return;
  thread_local std::map<std::size_t, std::unique_ptr<detail::Plan>> cache;
  auto& p = cache[n];
  if (!p) p = std::make_unique<detail::Plan>(n);
  auto* d = reinterpret_cast<fftw_complex*>(a.data());
  fftw_execute_dft(inverse ? p->inv : p->fwd, d, d);
}

}  // namespace genae::fft
