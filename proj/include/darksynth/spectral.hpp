#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "json.hpp"

namespace darksynth {

/// Mono audio. The nominal length is sample_rate * duration of the
/// configuration that produced it.
struct Waveform {
    std::vector<double> samples;
    int sample_rate = 16000;

    double duration() const {
        return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
    }
    double peak() const;

    static Waveform silence(int sample_rate, double duration);
};

/// Affine map of natural-log magnitude onto [-1, 1].
struct Normalization {
    double log_min;
    double log_max;

    double normalize(double log_mag) const;
    double denormalize(double value) const;
};

struct SpectralConfig {
    int sample_rate = 16000;
    double duration = 1.0;
    int fft_size = 2048;
    int hop = 512;
    double floor_db = -80.0;
    Normalization norm = default_normalization(-80.0);

    std::size_t num_samples() const;
    /// Linear-frequency bins with the Nyquist bin discarded.
    std::size_t bins() const { return static_cast<std::size_t>(fft_size / 2); }
    /// Frames after fft_size/2 zero padding on both sides.
    std::size_t frames() const { return frame_count(num_samples()); }
    std::size_t frame_count(std::size_t length) const;
    /// Linear magnitude below which a bin counts as silent.
    double floor_magnitude() const;

    void validate() const;

    /// Range from the magnitude floor to +6 dBFS, the ceiling for any signal
    /// bounded by [-1, 1].
    static Normalization default_normalization(double floor_db);
};

bool operator==(const Normalization& a, const Normalization& b);
bool operator==(const SpectralConfig& a, const SpectralConfig& b);

void to_json(nlohmann::json& j, const SpectralConfig& cfg);
void from_json(const nlohmann::json& j, SpectralConfig& cfg);

/// Two-channel time-frequency tensor, row-major [frames x bins] per channel.
struct MagIFTensor {
    std::size_t frames = 0;
    std::size_t bins = 0;
    std::vector<float> mag;
    std::vector<float> ifreq;
    int fft_size = 0;
    int hop = 0;
    int sample_rate = 0;

    float& mag_at(std::size_t t, std::size_t k) { return mag[t * bins + k]; }
    float mag_at(std::size_t t, std::size_t k) const { return mag[t * bins + k]; }
    float& if_at(std::size_t t, std::size_t k) { return ifreq[t * bins + k]; }
    float if_at(std::size_t t, std::size_t k) const { return ifreq[t * bins + k]; }

    static MagIFTensor filled(const SpectralConfig& cfg, float mag_value, float if_value);
};

/// Wraps an angle into (-pi, pi]. Values already in range are returned as is.
double principal_angle(double x);

/// Unwraps per-bin phase tracks along the frame axis. Input is row-major
/// [frames x bins]; consecutive frame differences of the result lie in (-pi, pi].
std::vector<double> unwrap_phase(std::span<const double> phases, std::size_t frames,
                                 std::size_t bins);

/// Smallest and largest natural-log magnitude (floored) over the STFT of w.
struct LogMagRange {
    double min;
    double max;
};
LogMagRange log_magnitude_range(const Waveform& w, const SpectralConfig& cfg);

MagIFTensor analyze(const Waveform& w, const SpectralConfig& cfg);
Waveform synthesize(const MagIFTensor& t, const SpectralConfig& cfg);

/// 10 log10 of signal energy over error energy.
double snr_db(std::span<const double> reference, std::span<const double> estimate);

}  // namespace darksynth
