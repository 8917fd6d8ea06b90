#pragma once

#include <complex>
#include <span>

namespace darksynth::detail {

/// Real-input FFT of a fixed size. Instances are not shared between threads;
/// use RealFft::local() for a per-thread cached instance.
class RealFft {
public:
    explicit RealFft(int n);
    ~RealFft();
    RealFft(const RealFft&) = delete;
    RealFft& operator=(const RealFft&) = delete;

    int size() const { return n_; }

    /// in: n reals, out: n/2 + 1 bins. Unnormalized.
    void forward(std::span<const double> in, std::span<std::complex<double>> out);
    /// in: n/2 + 1 bins, out: n reals. Scaled by 1/n so inverse(forward(x)) == x.
    void inverse(std::span<const std::complex<double>> in, std::span<double> out);

    static RealFft& local(int n);

private:
    int n_;
    double* real_ = nullptr;
    void* spectrum_ = nullptr;
    void* forward_plan_ = nullptr;
    void* inverse_plan_ = nullptr;
};

}  // namespace darksynth::detail
