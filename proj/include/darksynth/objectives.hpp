#pragma once

#include <span>
#include <vector>

#include "darksynth/networks.hpp"

namespace darksynth {

/// Binary cross-entropy between teacher probabilities p and student
/// probabilities sigmoid(z / T), averaged over attributes. When grad is
/// non-empty it receives d(loss)/dz.
double distillation_loss(std::span<const double> student_logits, std::span<const double> teacher_p, double temperature,
                         std::span<double> grad = {});

/// Softmax cross-entropy against a one-hot target.
double pitch_loss(std::span<const double> logits, std::span<const double> onehot, std::span<double> grad = {});

struct LossWeights {
    double temperature = 1.0;
    double gp = 10.0;
    double distill = 1.0;
    double pitch = 1.0;
};

/// One side of a batch: per-sample attribute targets (already tempered) and pitch class.
struct HeadTargets {
    std::vector<std::vector<double>> attributes;
    std::vector<int> pitch;
};

struct LossTerms {
    double total = 0.0;
    double wasserstein = 0.0;  // critic: mean W(real) - mean W(fake); generator: mean W(fake)
    double gradient_penalty = 0.0;
    double distill = 0.0;
    double pitch = 0.0;
};

namespace detail {

// Auxiliary-head losses for a batch; writes their gradients (scaled by the
// weights and 1/n) into columns 1.. of dout.
template <typename S>
std::pair<double, double> head_losses(const nn::MatR<S>& out, const HeadTargets& t, const LossWeights& w, int K, int P,
                                      nn::MatR<S>& dout) {
    const auto n = out.rows();
    double dl = 0.0, pl = 0.0;
    std::vector<double> logits, grad, onehot;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (K > 0 && w.distill > 0.0) {
            logits.assign(static_cast<std::size_t>(K), 0.0);
            grad.assign(static_cast<std::size_t>(K), 0.0);
            for (int k = 0; k < K; ++k) logits[static_cast<std::size_t>(k)] = static_cast<double>(out(i, 1 + k));
            dl += distillation_loss(logits, t.attributes[static_cast<std::size_t>(i)], w.temperature, grad);
            for (int k = 0; k < K; ++k) dout(i, 1 + k) = static_cast<S>(w.distill * grad[static_cast<std::size_t>(k)] / n);
        }
        if (w.pitch > 0.0) {
            logits.assign(static_cast<std::size_t>(P), 0.0);
            grad.assign(static_cast<std::size_t>(P), 0.0);
            onehot.assign(static_cast<std::size_t>(P), 0.0);
            onehot[static_cast<std::size_t>(t.pitch[static_cast<std::size_t>(i)])] = 1.0;
            for (int p = 0; p < P; ++p) logits[static_cast<std::size_t>(p)] = static_cast<double>(out(i, 1 + K + p));
            pl += pitch_loss(logits, onehot, grad);
            for (int p = 0; p < P; ++p) dout(i, 1 + K + p) = static_cast<S>(w.pitch * grad[static_cast<std::size_t>(p)] / n);
        }
    }
    return {dl / static_cast<double>(n), pl / static_cast<double>(n)};
}

}  // namespace detail

/// Critic objective
///   mean W(fake) - mean W(real) + gp * GP + distill * (BCE_real + BCE_fake) + pitch * (CE_real + CE_fake)
/// on fixed real and fake batches. With grads, parameter gradients are added to the critic.
template <typename S>
LossTerms critic_objective(Critic<S>& critic, const nn::Tensor<S>& real, const HeadTargets& real_t,
                           const nn::Tensor<S>& fake, const HeadTargets& fake_t, std::span<const double> eps,
                           const LossWeights& w, bool grads) {
    const auto& a = critic.arch();
    const int n = real.n;
    typename Critic<S>::Cache cache;
    LossTerms terms;

    const auto out_r = critic.forward(real, &cache);
    nn::MatR<S> dout = nn::MatR<S>::Zero(n, a.head_outputs());
    dout.col(0).setConstant(S(-1) / static_cast<S>(n));
    const auto [dl_r, pl_r] = detail::head_losses(out_r, real_t, w, a.num_attributes, a.num_pitches, dout);
    if (grads) critic.backward(cache, dout, nullptr, true);

    const auto out_f = critic.forward(fake, &cache);
    dout.setZero();
    dout.col(0).setConstant(S(1) / static_cast<S>(n));
    const auto [dl_f, pl_f] = detail::head_losses(out_f, fake_t, w, a.num_attributes, a.num_pitches, dout);
    if (grads) critic.backward(cache, dout, nullptr, true);

    terms.gradient_penalty = w.gp > 0.0 ? critic_gradient_penalty(critic, real, fake, eps, w.gp, grads) : 0.0;
    terms.wasserstein = static_cast<double>(out_r.col(0).mean()) - static_cast<double>(out_f.col(0).mean());
    terms.distill = dl_r + dl_f;
    terms.pitch = pl_r + pl_f;
    terms.total = -terms.wasserstein + w.gp * terms.gradient_penalty + w.distill * terms.distill + w.pitch * terms.pitch;
    return terms;
}

/// Generator objective -mean W(G(c)) + distill * BCE + pitch * CE for fixed
/// conditioning rows cond [n x input_channels]. With grads, parameter
/// gradients are added to the generator only. fake receives G(c).
template <typename S>
LossTerms generator_objective(Generator<S>& gen, Critic<S>& critic, const std::vector<S>& cond, const HeadTargets& t,
                              const LossWeights& w, bool grads, nn::Tensor<S>& fake) {
    const auto& a = critic.arch();
    const int n = static_cast<int>(t.pitch.size());
    typename Generator<S>::Cache gcache;
    typename Critic<S>::Cache dcache;
    gen.forward(cond.data(), n, fake, &gcache);
    const auto out = critic.forward(fake, &dcache);
    nn::MatR<S> dout = nn::MatR<S>::Zero(n, a.head_outputs());
    dout.col(0).setConstant(S(-1) / static_cast<S>(n));
    const auto [dl, pl] = detail::head_losses(out, t, w, a.num_attributes, a.num_pitches, dout);
    LossTerms terms;
    terms.wasserstein = static_cast<double>(out.col(0).mean());
    terms.distill = dl;
    terms.pitch = pl;
    terms.total = -terms.wasserstein + w.distill * dl + w.pitch * pl;
    if (grads) {
        nn::Tensor<S> dx;
        critic.backward(dcache, dout, &dx, false);
        gen.backward(gcache, fake, dx);
    }
    return terms;
}

}  // namespace darksynth
