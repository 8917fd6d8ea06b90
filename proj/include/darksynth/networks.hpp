#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "darksynth/layers.hpp"
#include "json.hpp"

namespace darksynth {

inline constexpr int kLatentDim = 32;

/// Shape of the generator/critic pair. Channel counts are feature_maps
/// divided by width_divisor, low to high resolution.
struct GanArchitecture {
    int num_attributes = 0;
    int num_pitches = 27;
    int latent_dim = kLatentDim;
    std::vector<int> feature_maps = {256, 128, 128, 128, 128, 64};
    int width_divisor = 16;
    int seed_frames = 4;
    int seed_bins = 32;
    int frames = 32;
    int bins = 1024;

    int input_channels() const { return num_attributes + latent_dim + num_pitches; }
    int head_outputs() const { return 1 + num_attributes + num_pitches; }
    std::vector<int> channels() const;
    /// Upsampling factor (time, frequency) entering each stage after the first.
    std::vector<std::pair<int, int>> stage_factors() const;
    void validate() const;

    bool operator==(const GanArchitecture&) const = default;
};

void to_json(nlohmann::json& j, const GanArchitecture& a);
void from_json(const nlohmann::json& j, GanArchitecture& a);

/// Conditioning vector -> dense seed map -> conv/box-upsampling stack ->
/// 2-channel tanh output.
template <typename S>
class Generator {
public:
    struct Cache {
        std::vector<S> cond;
        std::vector<nn::Tensor<S>> conv_in;
        std::vector<nn::Tensor<S>> conv_out;
    };

    Generator() = default;
    Generator(const GanArchitecture& arch, std::uint64_t seed) : arch_(arch) {
        arch_.validate();
        std::mt19937_64 rng(seed);
        const auto ch = arch_.channels();
        seed_ = nn::Linear<S>(arch_.input_channels(), ch.front() * arch_.seed_frames * arch_.seed_bins, rng);
        int cin = ch.front();
        for (int c : ch) {
            convs_.emplace_back(cin, c, 3, rng);
            cin = c;
        }
        out_ = nn::Conv2d<S>(cin, 2, 1, rng);
    }

    const GanArchitecture& arch() const { return arch_; }

    /// cond is [n x input_channels] row-major; out becomes [n][2][frames][bins].
    void forward(const S* cond, int n, nn::Tensor<S>& out, Cache* cache = nullptr) const {
        Cache local;
        Cache& c = cache ? *cache : local;
        const auto factors = arch_.stage_factors();
        c.conv_in.assign(convs_.size(), {});
        c.conv_out.assign(convs_.size(), {});
        c.cond.assign(cond, cond + static_cast<std::size_t>(n) * arch_.input_channels());
        nn::Tensor<S>& seed = c.conv_in[0];
        seed.resize(n, arch_.channels().front(), arch_.seed_frames, arch_.seed_bins);
        for (int i = 0; i < n; ++i) {
            // One row at a time keeps each sample independent of the batch size.
            const auto row = seed_.forward(cond + static_cast<std::size_t>(i) * arch_.input_channels(), 1);
            std::copy(row.data(), row.data() + row.size(), seed.sample(i));
        }
        nn::leaky_relu(seed);
        for (std::size_t s = 0; s < convs_.size(); ++s) {
            if (s > 0) {
                nn::upsample(c.conv_out[s - 1], factors[s - 1].first, factors[s - 1].second, c.conv_in[s]);
            }
            convs_[s].forward_leaky(c.conv_in[s], c.conv_out[s]);
        }
        out_.forward(c.conv_out.back(), out);
        for (S& v : out.data) v = std::tanh(v);
    }

    /// Accumulates parameter gradients given d(loss)/d(output) and the output itself.
    void backward(const Cache& c, const nn::Tensor<S>& out, const nn::Tensor<S>& dout) {
        const auto factors = arch_.stage_factors();
        nn::Tensor<S> g = dout;
        for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] *= S(1) - out.data[i] * out.data[i];
        nn::Tensor<S> dx;
        out_.backward(c.conv_out.back(), g, &dx, true);
        for (std::size_t s = convs_.size(); s-- > 0;) {
            nn::leaky_relu_backward(c.conv_out[s], dx);
            if (s == 0) {
                nn::Tensor<S> dseed;
                convs_[s].backward(c.conv_in[s], dx, &dseed, true);
                nn::leaky_relu_backward(c.conv_in[0], dseed);
                const nn::MatR<S> dy = nn::CMapR<S>(dseed.data.data(), dseed.n, static_cast<int>(dseed.sample_size()));
                seed_.backward(c.cond.data(), dseed.n, dy, nullptr, true);
                break;
            }
            nn::Tensor<S> dup;
            convs_[s].backward(c.conv_in[s], dx, &dup, true);
            nn::upsample_adjoint(dup, factors[s - 1].first, factors[s - 1].second, dx);
        }
    }

    std::vector<nn::ParamBlock<S>> params() {
        std::vector<nn::ParamBlock<S>> p = seed_.params();
        for (auto& conv : convs_) {
            for (auto& b : conv.params()) p.push_back(b);
        }
        for (auto& b : out_.params()) p.push_back(b);
        return p;
    }

    void zero_grad() {
        for (auto& b : params()) std::fill(b.grad.begin(), b.grad.end(), S(0));
    }

    /// Parameter tensors in a fixed order, for serialization.
    std::vector<std::span<const S>> parameter_values() const {
        std::vector<std::span<const S>> p{seed_.weight, seed_.bias};
        for (const auto& conv : convs_) {
            p.emplace_back(conv.weight);
            p.emplace_back(conv.bias);
        }
        p.emplace_back(out_.weight);
        p.emplace_back(out_.bias);
        return p;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& b : parameter_values()) n += b.size();
        return n;
    }

private:
    GanArchitecture arch_;
    nn::Linear<S> seed_;
    std::vector<nn::Conv2d<S>> convs_;
    nn::Conv2d<S> out_;
};

/// Mirror of the generator: 1x1 input conv, conv + average-pool stages down to
/// the seed map, then one linear layer whose outputs are [score, attribute logits, pitch logits].
template <typename S>
class Critic {
public:
    /// Activations kept for backward. The critic input is referenced, not
    /// copied, so it must outlive the cache.
    struct Cache {
        const nn::Tensor<S>* input = nullptr;
        std::vector<nn::Tensor<S>> pooled;  // input of conv l + 1 when pooling follows conv l
        std::vector<nn::Tensor<S>> conv_out;
        // Gradient of the score w.r.t. each conv pre-activation; filled by backward on request.
        std::vector<nn::Tensor<S>> conv_grad;
    };

    Critic() = default;
    Critic(const GanArchitecture& arch, std::uint64_t seed) : arch_(arch) {
        arch_.validate();
        std::mt19937_64 rng(seed);
        const auto ch = arch_.channels();
        const auto factors = arch_.stage_factors();
        const int stages = static_cast<int>(ch.size());
        convs_.emplace_back(2, ch.back(), 1, rng);
        pool_.emplace_back(1, 1);
        for (int s = stages - 1; s >= 1; --s) {
            convs_.emplace_back(ch[static_cast<std::size_t>(s)], ch[static_cast<std::size_t>(s - 1)], 3, rng);
            pool_.push_back(factors[static_cast<std::size_t>(s - 1)]);
        }
        convs_.emplace_back(ch.front(), ch.front(), 3, rng);
        pool_.emplace_back(1, 1);
        features_ = ch.front() * arch_.seed_frames * arch_.seed_bins;
        head_ = nn::Linear<S>(features_, arch_.head_outputs(), rng);
    }

    const GanArchitecture& arch() const { return arch_; }

    /// x is [n][2][frames][bins]; returns [n x head_outputs].
    nn::MatR<S> forward(const nn::Tensor<S>& x, Cache* cache = nullptr) const {
        if (x.c != 2 || x.h != arch_.frames || x.w != arch_.bins) {
            throw invalid_input("critic input shape mismatch");
        }
        Cache local;
        Cache& c = cache ? *cache : local;
        c.input = &x;
        c.pooled.assign(convs_.size(), {});
        c.conv_out.assign(convs_.size(), {});
        for (std::size_t l = 0; l < convs_.size(); ++l) {
            convs_[l].forward_leaky(input_of(c, l), c.conv_out[l]);
            if (l + 1 < convs_.size() && pooled(l)) nn::avg_pool(c.conv_out[l], pool_[l].first, pool_[l].second, c.pooled[l]);
        }
        return head_.forward(c.conv_out.back().data.data(), x.n);
    }

    /// Back-propagates dout. Parameter gradients accumulate when param_grads;
    /// dx receives the input gradient when non-null; keep_conv_grads stores
    /// pre-activation gradients in the cache for penalty_backward.
    void backward(Cache& c, const nn::MatR<S>& dout, nn::Tensor<S>* dx, bool param_grads, bool keep_conv_grads = false) {
        const int n = c.input->n;
        nn::Tensor<S> g = c.conv_out.back();
        head_.backward(c.conv_out.back().data.data(), n, dout, g.data.data(), param_grads);
        if (keep_conv_grads) c.conv_grad.assign(convs_.size(), {});
        for (std::size_t l = convs_.size(); l-- > 0;) {
            nn::leaky_relu_backward(c.conv_out[l], g);
            nn::Tensor<S> gin;
            const bool last = l == 0;
            if (!last || dx) convs_[l].backward(input_of(c, l), g, &gin, param_grads);
            else if (param_grads) convs_[l].backward(input_of(c, l), g, nullptr, true);
            if (keep_conv_grads) c.conv_grad[l] = std::move(g);
            if (last) {
                if (dx) *dx = std::move(gin);
                break;
            }
            if (pooled(l - 1)) nn::avg_pool_adjoint(gin, pool_[l - 1].first, pool_[l - 1].second, g);
            else g = std::move(gin);
        }
    }

    /// Given a cache whose conv_grad came from a unit score gradient, adds the
    /// parameter gradient of sum_i <grad_x score(x_i), v_i> with the activation
    /// pattern held fixed. For this piecewise-linear critic that is the exact
    /// gradient of the directional derivative almost everywhere.
    void penalty_backward(const Cache& c, const nn::Tensor<S>& v) {
        nn::Tensor<S> t, next;
        for (std::size_t l = 0; l < convs_.size(); ++l) {
            const nn::Tensor<S>& in = l == 0 ? v : t;
            convs_[l].accumulate_weight_grad(in, c.conv_grad[l]);
            convs_[l].forward_masked(in, c.conv_out[l], next);
            if (l + 1 < convs_.size() && pooled(l)) nn::avg_pool(next, pool_[l].first, pool_[l].second, t);
            else std::swap(t, next);
        }
        // Score row of the head: d<w, t>/dw = t.
        const int n = t.n;
        for (int i = 0; i < n; ++i) {
            const S* ti = t.sample(i);
            for (int f = 0; f < features_; ++f) head_.dweight[static_cast<std::size_t>(f)] += ti[f];
        }
    }

    std::vector<nn::ParamBlock<S>> params() {
        std::vector<nn::ParamBlock<S>> p;
        for (auto& conv : convs_) {
            for (auto& b : conv.params()) p.push_back(b);
        }
        for (auto& b : head_.params()) p.push_back(b);
        return p;
    }

    void zero_grad() {
        for (auto& b : params()) std::fill(b.grad.begin(), b.grad.end(), S(0));
    }

private:
    bool pooled(std::size_t l) const { return pool_[l].first != 1 || pool_[l].second != 1; }

    const nn::Tensor<S>& input_of(const Cache& c, std::size_t l) const {
        if (l == 0) return *c.input;
        return pooled(l - 1) ? c.pooled[l - 1] : c.conv_out[l - 1];
    }

    GanArchitecture arch_;
    std::vector<nn::Conv2d<S>> convs_;
    std::vector<std::pair<int, int>> pool_;  // applied after conv l
    nn::Linear<S> head_;
    int features_ = 0;
};

/// Weighted gradient penalty on interpolates eps_i * real_i + (1 - eps_i) * fake_i:
/// returns mean_i (||grad_x score(x_i)|| - 1)^2 and, when param_grads, adds
/// weight times its parameter gradient to the critic.
template <typename S>
double critic_gradient_penalty(Critic<S>& critic, const nn::Tensor<S>& real, const nn::Tensor<S>& fake,
                               std::span<const double> eps, double weight, bool param_grads) {
    if (!real.same_shape(fake)) throw invalid_input("gradient penalty: real and fake shapes differ");
    if (eps.size() != static_cast<std::size_t>(real.n)) throw invalid_input("gradient penalty: one epsilon per sample");
    const int n = real.n;
    nn::Tensor<S> mix = real;
    const std::size_t m = real.sample_size();
    for (int i = 0; i < n; ++i) {
        const S e = static_cast<S>(eps[static_cast<std::size_t>(i)]);
        for (std::size_t j = 0; j < m; ++j) mix.sample(i)[j] = e * real.sample(i)[j] + (S(1) - e) * fake.sample(i)[j];
    }
    typename Critic<S>::Cache cache;
    const auto out = critic.forward(mix, &cache);
    nn::MatR<S> dscore = nn::MatR<S>::Zero(out.rows(), out.cols());
    dscore.col(0).setOnes();
    nn::Tensor<S> g;
    critic.backward(cache, dscore, &g, false, param_grads);
    double penalty = 0.0;
    std::vector<double> coef(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < m; ++j) sq += static_cast<double>(g.sample(i)[j]) * g.sample(i)[j];
        const double norm = std::sqrt(sq);
        penalty += (norm - 1.0) * (norm - 1.0);
        coef[static_cast<std::size_t>(i)] = norm > 0.0 ? weight * 2.0 * (norm - 1.0) / (norm * n) : 0.0;
    }
    if (param_grads) {
        for (int i = 0; i < n; ++i) {
            const S c = static_cast<S>(coef[static_cast<std::size_t>(i)]);
            for (std::size_t j = 0; j < m; ++j) g.sample(i)[j] *= c;
        }
        critic.penalty_backward(cache, g);
    }
    return penalty / n;
}

}  // namespace darksynth
