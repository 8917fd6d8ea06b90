#include <cmath>
#include <limits>

#include "darksynth/darkgan.hpp"
#include "darksynth/error.hpp"

namespace darksynth {

double distillation_loss(std::span<const double> z, std::span<const double> p, double temperature,
                         std::span<double> grad) {
    if (!(temperature > 0.0)) throw invalid_input("temperature must be > 0");
    if (z.size() != p.size() || z.empty()) throw invalid_input("distillation loss: logits and targets differ in length");
    if (!grad.empty() && grad.size() != z.size()) throw invalid_input("distillation loss: gradient buffer size");
    const double n = static_cast<double>(z.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        if (!(p[i] > 0.0 && p[i] < 1.0)) {
            throw invalid_input("distillation target " + std::to_string(i) + " = " + std::to_string(p[i]) + " is outside (0, 1)");
        }
        const double x = z[i] / temperature;
        // log q = -softplus(-x), log(1 - q) = -softplus(x)
        const double sp_pos = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
        const double sp_neg = sp_pos - x;
        loss += p[i] * sp_neg + (1.0 - p[i]) * sp_pos;
        if (!grad.empty()) grad[i] = (tempered_sigmoid(x, 1.0) - p[i]) / (temperature * n);
    }
    return loss / n;
}

double pitch_loss(std::span<const double> logits, std::span<const double> onehot, std::span<double> grad) {
    if (logits.size() != onehot.size() || logits.empty()) throw invalid_input("pitch loss: logits and target differ in length");
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    double loss = 0.0, mass = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        loss += onehot[i] * (lse - logits[i]);
        mass += onehot[i];
    }
    if (std::abs(mass - 1.0) > 1e-9) throw invalid_input("pitch target is not a one-hot vector");
    if (!grad.empty()) {
        for (std::size_t i = 0; i < logits.size(); ++i) grad[i] = std::exp(logits[i] - lse) - onehot[i];
    }
    return loss;
}

double gradient_penalty(const CriticGradient& critic_grad, const std::vector<std::vector<double>>& real,
                        const std::vector<std::vector<double>>& fake, std::span<const double> eps) {
    if (real.size() != fake.size() || real.size() != eps.size() || real.empty()) {
        throw invalid_input("gradient penalty needs matching non-empty real, fake and epsilon batches");
    }
    double total = 0.0;
    std::vector<double> mix;
    for (std::size_t i = 0; i < real.size(); ++i) {
        if (real[i].size() != fake[i].size()) throw invalid_input("gradient penalty: sample shapes differ");
        mix.resize(real[i].size());
        for (std::size_t j = 0; j < mix.size(); ++j) mix[j] = eps[i] * real[i][j] + (1.0 - eps[i]) * fake[i][j];
        const auto g = critic_grad(mix);
        double sq = 0.0;
        for (double v : g) sq += v * v;
        const double d = std::sqrt(sq) - 1.0;
        total += d * d;
    }
    return total / static_cast<double>(real.size());
}

}  // namespace darksynth
