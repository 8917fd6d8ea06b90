#include "darksynth/fft.hpp"

#include <fftw3.h>

#include <cstring>
#include <map>
#include <memory>
#include <mutex>

#include "darksynth/error.hpp"

namespace darksynth::detail {

namespace {
// FFTW planning is not thread-safe; execution on distinct plans is.
std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}
}  // namespace

RealFft::RealFft(int n) : n_(n) {
    if (n < 2 || n % 2 != 0) {
        throw invalid_input("fft size must be even and >= 2, got " + std::to_string(n));
    }
    std::lock_guard lock(planner_mutex());
    real_ = fftw_alloc_real(static_cast<std::size_t>(n));
    auto* spec = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
    spectrum_ = spec;
    forward_plan_ = fftw_plan_dft_r2c_1d(n, real_, spec, FFTW_ESTIMATE);
    inverse_plan_ = fftw_plan_dft_c2r_1d(n, spec, real_, FFTW_ESTIMATE);
}

RealFft::~RealFft() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(static_cast<fftw_plan>(forward_plan_));
    fftw_destroy_plan(static_cast<fftw_plan>(inverse_plan_));
    fftw_free(real_);
    fftw_free(spectrum_);
}

void RealFft::forward(std::span<const double> in, std::span<std::complex<double>> out) {
    std::memcpy(real_, in.data(), sizeof(double) * static_cast<std::size_t>(n_));
    fftw_execute(static_cast<fftw_plan>(forward_plan_));
    std::memcpy(out.data(), spectrum_, sizeof(fftw_complex) * static_cast<std::size_t>(n_ / 2 + 1));
}

void RealFft::inverse(std::span<const std::complex<double>> in, std::span<double> out) {
    std::memcpy(spectrum_, in.data(), sizeof(fftw_complex) * static_cast<std::size_t>(n_ / 2 + 1));
    // c2r destroys its input; the copy above keeps the caller's buffer intact.
    fftw_execute(static_cast<fftw_plan>(inverse_plan_));
    const double scale = 1.0 / static_cast<double>(n_);
    for (int i = 0; i < n_; ++i) {
        out[static_cast<std::size_t>(i)] = real_[i] * scale;
    }
}

RealFft& RealFft::local(int n) {
    thread_local std::map<int, std::unique_ptr<RealFft>> cache;
    auto& slot = cache[n];
    if (!slot) {
        slot = std::make_unique<RealFft>(n);
    }
    return *slot;
}

}  // namespace darksynth::detail
