#include "darksynth/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "darksynth/error.hpp"
#include "darksynth/fft.hpp"

namespace darksynth {

namespace {

constexpr double kPi = std::numbers::pi;

std::vector<double> periodic_hann(int n) {
    std::vector<double> w(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        w[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / n);
    }
    return w;
}

// Scale so that a full-scale sinusoid centred on a bin reads 1.0 (0 dBFS).
double magnitude_scale(const std::vector<double>& window) {
    double sum = 0.0;
    for (double v : window) sum += v;
    return sum / 2.0;
}

void check_waveform(const Waveform& w, const SpectralConfig& cfg) {
    if (w.sample_rate != cfg.sample_rate) {
        throw invalid_input("waveform sample rate " + std::to_string(w.sample_rate) +
                            " does not match configured " + std::to_string(cfg.sample_rate));
    }
    if (w.samples.size() < static_cast<std::size_t>(cfg.fft_size)) {
        throw invalid_input("waveform has " + std::to_string(w.samples.size()) +
                            " samples, shorter than one FFT window of " +
                            std::to_string(cfg.fft_size));
    }
    for (std::size_t i = 0; i < w.samples.size(); ++i) {
        if (!std::isfinite(w.samples[i])) {
            throw invalid_input("non-finite sample at index " + std::to_string(i));
        }
    }
}

// Complex STFT of the zero-padded signal: frames x (fft_size/2 + 1).
std::vector<std::complex<double>> stft(const Waveform& w, const SpectralConfig& cfg,
                                       std::size_t& frames_out) {
    const int n = cfg.fft_size;
    const std::size_t pad = static_cast<std::size_t>(n / 2);
    std::vector<double> padded(w.samples.size() + 2 * pad, 0.0);
    std::copy(w.samples.begin(), w.samples.end(), padded.begin() + static_cast<std::ptrdiff_t>(pad));

    const std::size_t frames = cfg.frame_count(w.samples.size());
    const std::size_t half = static_cast<std::size_t>(n / 2 + 1);
    const auto window = periodic_hann(n);
    auto& fft = detail::RealFft::local(n);

    std::vector<std::complex<double>> out(frames * half);
    std::vector<double> frame(static_cast<std::size_t>(n));
    for (std::size_t t = 0; t < frames; ++t) {
        const std::size_t start = t * static_cast<std::size_t>(cfg.hop);
        for (std::size_t i = 0; i < frame.size(); ++i) {
            frame[i] = padded[start + i] * window[i];
        }
        fft.forward(frame, std::span(out).subspan(t * half, half));
    }
    frames_out = frames;
    return out;
}

}  // namespace

double Waveform::peak() const {
    double p = 0.0;
    for (double v : samples) p = std::max(p, std::abs(v));
    return p;
}

Waveform Waveform::silence(int sample_rate, double duration) {
    Waveform w;
    w.sample_rate = sample_rate;
    w.samples.assign(static_cast<std::size_t>(std::lround(sample_rate * duration)), 0.0);
    return w;
}

double Normalization::normalize(double log_mag) const {
    const double v = 2.0 * (log_mag - log_min) / (log_max - log_min) - 1.0;
    return std::clamp(v, -1.0, 1.0);
}

double Normalization::denormalize(double value) const {
    return log_min + (value + 1.0) * 0.5 * (log_max - log_min);
}

std::size_t SpectralConfig::num_samples() const {
    return static_cast<std::size_t>(std::lround(sample_rate * duration));
}

std::size_t SpectralConfig::frame_count(std::size_t length) const {
    const std::size_t padded = length + static_cast<std::size_t>(fft_size);
    return 1 + (padded - static_cast<std::size_t>(fft_size)) / static_cast<std::size_t>(hop);
}

double SpectralConfig::floor_magnitude() const { return std::pow(10.0, floor_db / 20.0); }

Normalization SpectralConfig::default_normalization(double floor_db) {
    return {std::log(std::pow(10.0, floor_db / 20.0)), std::log(2.0)};
}

void SpectralConfig::validate() const {
    if (sample_rate <= 0) throw invalid_input("sample_rate must be positive");
    if (duration <= 0.0) throw invalid_input("duration must be positive");
    if (fft_size < 4 || (fft_size & (fft_size - 1)) != 0) {
        throw invalid_input("fft_size must be a power of two >= 4");
    }
    if (hop <= 0 || hop > fft_size) throw invalid_input("hop must be in (0, fft_size]");
    if (num_samples() < static_cast<std::size_t>(fft_size)) {
        throw invalid_input("clip shorter than one FFT window");
    }
    if (!(norm.log_max > norm.log_min)) throw invalid_input("normalization range is empty");
}

bool operator==(const Normalization& a, const Normalization& b) {
    return a.log_min == b.log_min && a.log_max == b.log_max;
}

bool operator==(const SpectralConfig& a, const SpectralConfig& b) {
    return a.sample_rate == b.sample_rate && a.duration == b.duration &&
           a.fft_size == b.fft_size && a.hop == b.hop && a.floor_db == b.floor_db &&
           a.norm == b.norm;
}

void to_json(nlohmann::json& j, const SpectralConfig& cfg) {
    j = nlohmann::json{{"sample_rate", cfg.sample_rate},
                       {"duration", cfg.duration},
                       {"fft_size", cfg.fft_size},
                       {"hop", cfg.hop},
                       {"floor_db", cfg.floor_db},
                       {"normalization",
                        {{"log_mag_min", cfg.norm.log_min}, {"log_mag_max", cfg.norm.log_max}}}};
}

void from_json(const nlohmann::json& j, SpectralConfig& cfg) {
    j.at("sample_rate").get_to(cfg.sample_rate);
    j.at("duration").get_to(cfg.duration);
    j.at("fft_size").get_to(cfg.fft_size);
    j.at("hop").get_to(cfg.hop);
    j.at("floor_db").get_to(cfg.floor_db);
    const auto& n = j.at("normalization");
    n.at("log_mag_min").get_to(cfg.norm.log_min);
    n.at("log_mag_max").get_to(cfg.norm.log_max);
}

MagIFTensor MagIFTensor::filled(const SpectralConfig& cfg, float mag_value, float if_value) {
    MagIFTensor t;
    t.frames = cfg.frames();
    t.bins = cfg.bins();
    t.mag.assign(t.frames * t.bins, mag_value);
    t.ifreq.assign(t.frames * t.bins, if_value);
    t.fft_size = cfg.fft_size;
    t.hop = cfg.hop;
    t.sample_rate = cfg.sample_rate;
    return t;
}

double principal_angle(double x) {
    if (x > -kPi && x <= kPi) return x;
    double y = std::remainder(x, 2.0 * kPi);
    if (y <= -kPi) y += 2.0 * kPi;
    if (y > kPi) y -= 2.0 * kPi;
    return y;
}

std::vector<double> unwrap_phase(std::span<const double> phases, std::size_t frames,
                                 std::size_t bins) {
    if (phases.size() != frames * bins) {
        throw invalid_input("phase matrix size does not match frames x bins");
    }
    std::vector<double> out(phases.begin(), phases.end());
    for (std::size_t t = 1; t < frames; ++t) {
        for (std::size_t k = 0; k < bins; ++k) {
            const double prev_raw = phases[(t - 1) * bins + k];
            const double step = principal_angle(phases[t * bins + k] - prev_raw);
            out[t * bins + k] = out[(t - 1) * bins + k] + step;
        }
    }
    return out;
}

LogMagRange log_magnitude_range(const Waveform& w, const SpectralConfig& cfg) {
    check_waveform(w, cfg);
    std::size_t frames = 0;
    const auto spec = stft(w, cfg, frames);
    const std::size_t half = cfg.bins() + 1;
    const double scale = magnitude_scale(periodic_hann(cfg.fft_size));
    const double floor = cfg.floor_magnitude();
    LogMagRange r{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t k = 0; k < cfg.bins(); ++k) {
            const double m = std::log(std::max(std::abs(spec[t * half + k]) / scale, floor));
            r.min = std::min(r.min, m);
            r.max = std::max(r.max, m);
        }
    }
    return r;
}

MagIFTensor analyze(const Waveform& w, const SpectralConfig& cfg) {
    cfg.validate();
    check_waveform(w, cfg);
    std::size_t frames = 0;
    const auto spec = stft(w, cfg, frames);
    const std::size_t bins = cfg.bins();
    const std::size_t half = bins + 1;
    const double scale = magnitude_scale(periodic_hann(cfg.fft_size));
    const double floor = cfg.floor_magnitude();

    MagIFTensor out;
    out.frames = frames;
    out.bins = bins;
    out.fft_size = cfg.fft_size;
    out.hop = cfg.hop;
    out.sample_rate = cfg.sample_rate;
    out.mag.resize(frames * bins);
    out.ifreq.resize(frames * bins);

    std::vector<double> phase(frames * bins);
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t k = 0; k < bins; ++k) {
            const auto c = spec[t * half + k];
            const double m = std::max(std::abs(c) / scale, floor);
            out.mag[t * bins + k] = static_cast<float>(cfg.norm.normalize(std::log(m)));
            phase[t * bins + k] = std::arg(c);
        }
    }
    const auto unwrapped = unwrap_phase(phase, frames, bins);
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t k = 0; k < bins; ++k) {
            const double prev = t == 0 ? 0.0 : unwrapped[(t - 1) * bins + k];
            const double d = (unwrapped[t * bins + k] - prev) / kPi;
            out.ifreq[t * bins + k] = static_cast<float>(std::clamp(d, -1.0, 1.0));
        }
    }
    return out;
}

Waveform synthesize(const MagIFTensor& t, const SpectralConfig& cfg) {
    cfg.validate();
    if (t.frames != cfg.frames() || t.bins != cfg.bins() || t.fft_size != cfg.fft_size ||
        t.hop != cfg.hop || t.sample_rate != cfg.sample_rate) {
        throw invalid_input("tensor shape/meta does not match spectral config");
    }
    if (t.mag.size() != t.frames * t.bins || t.ifreq.size() != t.frames * t.bins) {
        throw invalid_input("tensor channel sizes do not match frames x bins");
    }
    const int n = cfg.fft_size;
    const std::size_t bins = t.bins;
    const std::size_t half = bins + 1;
    const auto window = periodic_hann(n);
    const double scale = magnitude_scale(window);
    const double floor_log = std::log(cfg.floor_magnitude());
    auto& fft = detail::RealFft::local(n);

    const std::size_t pad = static_cast<std::size_t>(n / 2);
    const std::size_t padded_len = (t.frames - 1) * static_cast<std::size_t>(cfg.hop) +
                                   static_cast<std::size_t>(n);
    std::vector<double> acc(padded_len, 0.0);
    std::vector<double> wsum(padded_len, 0.0);
    std::vector<double> phase(bins, 0.0);
    std::vector<std::complex<double>> spectrum(half);
    std::vector<double> frame(static_cast<std::size_t>(n));

    for (std::size_t f = 0; f < t.frames; ++f) {
        for (std::size_t k = 0; k < bins; ++k) {
            const double mv = std::clamp(static_cast<double>(t.mag_at(f, k)), -1.0, 1.0);
            const double iv = std::clamp(static_cast<double>(t.if_at(f, k)), -1.0, 1.0);
            if (!std::isfinite(mv) || !std::isfinite(iv)) {
                throw invalid_input("non-finite tensor entry");
            }
            phase[k] += iv * kPi;
            const double log_mag = cfg.norm.denormalize(mv);
            const double m = log_mag <= floor_log + 1e-9 ? 0.0 : std::exp(log_mag) * scale;
            spectrum[k] = std::polar(m, phase[k]);
        }
        spectrum[bins] = 0.0;
        fft.inverse(spectrum, frame);
        const std::size_t start = f * static_cast<std::size_t>(cfg.hop);
        for (std::size_t i = 0; i < frame.size(); ++i) {
            acc[start + i] += frame[i] * window[i];
            wsum[start + i] += window[i] * window[i];
        }
    }

    Waveform w;
    w.sample_rate = cfg.sample_rate;
    const std::size_t len = cfg.num_samples();
    w.samples.resize(len);
    for (std::size_t i = 0; i < len; ++i) {
        const std::size_t j = i + pad;
        const double v = wsum[j] > 1e-8 ? acc[j] / wsum[j] : 0.0;
        w.samples[i] = std::clamp(v, -1.0, 1.0);
    }
    return w;
}

double snr_db(std::span<const double> reference, std::span<const double> estimate) {
    if (reference.size() != estimate.size()) {
        throw invalid_input("snr_db: length mismatch");
    }
    double sig = 0.0;
    double err = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        sig += reference[i] * reference[i];
        const double d = reference[i] - estimate[i];
        err += d * d;
    }
    if (err == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(sig / err);
}

}  // namespace darksynth
