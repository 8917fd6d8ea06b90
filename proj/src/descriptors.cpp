#include "darksynth/descriptors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "darksynth/error.hpp"

namespace darksynth {

namespace {

constexpr int kBands = 64;
constexpr int kEnvelopePoints = 32;
constexpr double kSalienceLow = 40.0;   // MIDI
constexpr double kSalienceHigh = 74.0;
constexpr double kSalienceStep = 0.5;
constexpr int kSalienceHarmonics = 8;
constexpr int kProfileHarmonics = 10;
constexpr int kSalienceCount = static_cast<int>((kSalienceHigh - kSalienceLow) / kSalienceStep) + 1;
constexpr std::size_t kSize = kBands + kEnvelopePoints + 1 + kSalienceCount + kProfileHarmonics + 1 + 3 + 2 + 3 + 2;

double hz(double midi) { return 440.0 * std::pow(2.0, (midi - 69.0) / 12.0); }

double interp(const std::vector<double>& v, double pos) {
    if (pos <= 0.0) return v.front();
    const double maxpos = static_cast<double>(v.size() - 1);
    if (pos >= maxpos) return v.back();
    const auto i = static_cast<std::size_t>(pos);
    const double f = pos - static_cast<double>(i);
    return v[i] * (1.0 - f) + v[i + 1] * f;
}

// Peak magnitude within +-1 bin of a fractional bin position.
double peak_near(const std::vector<double>& v, double pos) {
    const auto c = static_cast<long>(std::lround(pos));
    double best = 0.0;
    for (long k = c - 1; k <= c + 1; ++k) {
        if (k >= 0 && k < static_cast<long>(v.size())) best = std::max(best, v[static_cast<std::size_t>(k)]);
    }
    return best;
}

}  // namespace

std::size_t descriptor_size() { return kSize; }

std::vector<double> audio_descriptors(const MagIFTensor& t, const SpectralConfig& cfg) {
    if (t.frames == 0 || t.bins == 0 || t.mag.size() != t.frames * t.bins) {
        throw invalid_input("descriptor input tensor is empty or malformed");
    }
    const std::size_t frames = t.frames;
    const std::size_t bins = t.bins;
    const double bin_hz = static_cast<double>(cfg.sample_rate) / cfg.fft_size;
    const double floor_mag = cfg.floor_magnitude();

    std::vector<double> lin(frames * bins);
    for (std::size_t i = 0; i < lin.size(); ++i) {
        lin[i] = std::max(std::exp(cfg.norm.denormalize(t.mag[i])), floor_mag);
    }
    std::vector<double> avg(bins, 0.0);
    std::vector<double> avg_norm(bins, 0.0);
    for (std::size_t f = 0; f < frames; ++f) {
        for (std::size_t k = 0; k < bins; ++k) {
            avg[k] += lin[f * bins + k] / static_cast<double>(frames);
            avg_norm[k] += t.mag[f * bins + k] / static_cast<double>(frames);
        }
    }

    std::vector<double> out;
    out.reserve(kSize);

    // Log-spaced band means of the normalized log-magnitude.
    const double lo_hz = 60.0;
    const double hi_hz = std::min(7900.0, bin_hz * static_cast<double>(bins - 1));
    for (int b = 0; b < kBands; ++b) {
        const double f_lo = lo_hz * std::pow(hi_hz / lo_hz, static_cast<double>(b) / kBands);
        const double f_hi = lo_hz * std::pow(hi_hz / lo_hz, static_cast<double>(b + 1) / kBands);
        const auto k_lo = static_cast<std::size_t>(std::floor(f_lo / bin_hz));
        const auto k_hi = std::max(k_lo, std::min(bins - 1, static_cast<std::size_t>(std::floor(f_hi / bin_hz))));
        double s = 0.0;
        for (std::size_t k = k_lo; k <= k_hi; ++k) s += avg_norm[k];
        out.push_back(s / static_cast<double>(k_hi - k_lo + 1));
    }

    // Loudness envelope relative to its peak, resampled to a fixed length.
    std::vector<double> env_db(frames);
    for (std::size_t f = 0; f < frames; ++f) {
        double e = 0.0;
        for (std::size_t k = 0; k < bins; ++k) e += lin[f * bins + k] * lin[f * bins + k];
        env_db[f] = 10.0 * std::log10(e + 1e-12);
    }
    const double env_max = *std::max_element(env_db.begin(), env_db.end());
    for (int i = 0; i < kEnvelopePoints; ++i) {
        const double pos = frames > 1 ? static_cast<double>(i) * static_cast<double>(frames - 1) / (kEnvelopePoints - 1) : 0.0;
        out.push_back(std::max(interp(env_db, pos) - env_max, -80.0) / 20.0);
    }
    out.push_back(env_max / 20.0);

    // Harmonic-sum pitch salience over a half-semitone grid.
    std::vector<double> salience;
    double sal_max = 1e-30;
    double best_midi = kSalienceLow;
    for (int i = 0; i < kSalienceCount; ++i) {
        const double midi = kSalienceLow + kSalienceStep * i;
        const double f0 = hz(midi);
        double s = 0.0;
        for (int h = 1; h <= kSalienceHarmonics; ++h) {
            const double pos = h * f0 / bin_hz;
            if (pos >= static_cast<double>(bins - 1)) break;
            s += peak_near(avg, pos) / std::sqrt(static_cast<double>(h));
        }
        salience.push_back(s);
        if (s > sal_max) {
            sal_max = s;
            best_midi = midi;
        }
    }
    for (double s : salience) out.push_back(std::log(s / sal_max + 1e-6));

    // Harmonic amplitude profile at the salience estimate.
    const double f0 = hz(best_midi);
    std::vector<double> harm(kProfileHarmonics, floor_mag);
    double harm_max = floor_mag;
    for (int h = 1; h <= kProfileHarmonics; ++h) {
        const double pos = h * f0 / bin_hz;
        if (pos < static_cast<double>(bins - 1)) harm[static_cast<std::size_t>(h - 1)] = peak_near(avg, pos);
        harm_max = std::max(harm_max, harm[static_cast<std::size_t>(h - 1)]);
    }
    double odd = 0.0, even = 0.0;
    for (int h = 1; h <= kProfileHarmonics; ++h) {
        const double a = harm[static_cast<std::size_t>(h - 1)];
        out.push_back(std::max(std::log(a / harm_max), -12.0) / 4.0);
        (h % 2 ? odd : even) += a;
    }
    out.push_back(std::log((even + 1e-9) / (odd + 1e-9)));

    // Brightness: spectral centroid relative to f0, early vs late.
    std::vector<double> centroid;
    std::vector<std::size_t> active;
    for (std::size_t f = 0; f < frames; ++f) {
        if (env_db[f] < env_max - 40.0) continue;
        double num = 0.0, den = 0.0;
        for (std::size_t k = 1; k < bins; ++k) {
            num += static_cast<double>(k) * bin_hz * lin[f * bins + k];
            den += lin[f * bins + k];
        }
        centroid.push_back(std::log(num / den / f0));
        active.push_back(f);
    }
    if (centroid.empty()) {
        centroid.push_back(0.0);
        active.push_back(0);
    }
    const std::size_t half = centroid.size() / 2;
    const double c_all = std::accumulate(centroid.begin(), centroid.end(), 0.0) / static_cast<double>(centroid.size());
    const double c_early = half > 0 ? std::accumulate(centroid.begin(), centroid.begin() + static_cast<long>(half), 0.0) / static_cast<double>(half) : c_all;
    const double c_late = half > 0 ? std::accumulate(centroid.begin() + static_cast<long>(half), centroid.end(), 0.0) / static_cast<double>(centroid.size() - half) : c_all;
    out.push_back(c_all);
    out.push_back(c_early - c_late);
    out.push_back(static_cast<double>(active.size()) / static_cast<double>(frames));

    // Noisiness: spectral flatness and inter-harmonic floor.
    double flat_sum = 0.0;
    for (std::size_t f : active) {
        double log_sum = 0.0, sum = 0.0;
        for (std::size_t k = 1; k < bins; ++k) {
            const double p = lin[f * bins + k] * lin[f * bins + k];
            log_sum += std::log(p);
            sum += p;
        }
        const double n = static_cast<double>(bins - 1);
        flat_sum += log_sum / n - std::log(sum / n);
    }
    out.push_back(flat_sum / static_cast<double>(active.size()) / 10.0);
    double between = 0.0, on = 0.0;
    for (int h = 1; h <= kProfileHarmonics; ++h) {
        const double pos = (h + 0.5) * f0 / bin_hz;
        if (pos >= static_cast<double>(bins - 1)) break;
        between += interp(avg, pos);
        on += harm[static_cast<std::size_t>(h - 1)];
    }
    out.push_back(std::log((between + 1e-9) / (on + 1e-9)));

    // Vibrato: IF-refined frequency track of the strongest harmonic.
    std::size_t track_bin = 1;
    {
        double best = -1.0;
        for (int h = 1; h <= 4; ++h) {
            const double pos = h * f0 / bin_hz;
            if (pos >= static_cast<double>(bins - 2)) break;
            const auto k = static_cast<std::size_t>(std::lround(pos));
            if (avg[k] > best) {
                best = avg[k];
                track_bin = k;
            }
        }
    }
    std::vector<double> cents;
    const double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t f : active) {
        if (f == 0) continue;
        std::size_t k = track_bin;
        for (std::size_t j = track_bin > 2 ? track_bin - 2 : 1; j <= std::min(bins - 1, track_bin + 2); ++j) {
            if (lin[f * bins + j] > lin[f * bins + k]) k = j;
        }
        const double advance = t.ifreq[f * bins + k] * std::numbers::pi;
        const double expected = two_pi * static_cast<double>(k) * cfg.hop / cfg.fft_size;
        const double dev = principal_angle(advance - expected);
        const double freq = (static_cast<double>(k) + dev * cfg.fft_size / (two_pi * cfg.hop)) * bin_hz;
        if (freq > 1.0) cents.push_back(1200.0 * std::log2(freq));
    }
    double c_std = 0.0, c_range = 0.0, crossings = 0.0;
    if (cents.size() >= 3) {
        const double mean = std::accumulate(cents.begin(), cents.end(), 0.0) / static_cast<double>(cents.size());
        double var = 0.0;
        for (double c : cents) var += (c - mean) * (c - mean);
        c_std = std::sqrt(var / static_cast<double>(cents.size()));
        const auto [mn, mx] = std::minmax_element(cents.begin(), cents.end());
        c_range = *mx - *mn;
        for (std::size_t i = 1; i < cents.size(); ++i) {
            if ((cents[i] - mean) * (cents[i - 1] - mean) < 0.0) crossings += 1.0;
        }
        crossings /= static_cast<double>(cents.size() - 1);
    }
    out.push_back(std::log1p(c_std));
    out.push_back(std::log1p(c_range));
    out.push_back(crossings);

    // Attack position and decay slope of the envelope.
    std::size_t peak_frame = static_cast<std::size_t>(std::max_element(env_db.begin(), env_db.end()) - env_db.begin());
    std::size_t attack_frame = 0;
    while (attack_frame < peak_frame && env_db[attack_frame] < env_max - 3.0) ++attack_frame;
    out.push_back(static_cast<double>(attack_frame) / static_cast<double>(frames));
    double sx = 0, sy = 0, sxx = 0, sxy = 0, n = 0;
    for (std::size_t f = peak_frame; f < frames; ++f) {
        const double x = static_cast<double>(f - peak_frame) / static_cast<double>(frames);
        const double y = std::max(env_db[f] - env_max, -80.0) / 20.0;
        sx += x; sy += y; sxx += x * x; sxy += x * y; n += 1.0;
    }
    const double denom = n * sxx - sx * sx;
    out.push_back(denom > 1e-12 ? (n * sxy - sx * sy) / denom / 10.0 : 0.0);

    if (out.size() != kSize) throw numerical_error("descriptor layout mismatch");
    for (double& v : out) {
        if (!std::isfinite(v)) v = 0.0;
    }
    return out;
}

}  // namespace darksynth
