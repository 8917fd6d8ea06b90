#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

namespace darksynth::nn {

/// A parameter tensor and its gradient accumulator, viewed as flat arrays.
template <typename S>
struct ParamBlock {
    std::span<S> value;
    std::span<S> grad;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename S>
class Adam {
public:
    Adam(std::vector<ParamBlock<S>> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        for (const auto& p : params_) {
            m_.emplace_back(p.value.size(), S(0));
            v_.emplace_back(p.value.size(), S(0));
        }
    }

    void zero_grad() {
        for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), S(0));
    }

    void step() {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        const S lr = static_cast<S>(cfg_.lr * std::sqrt(c2) / c1);
        const S b1 = static_cast<S>(cfg_.beta1);
        const S b2 = static_cast<S>(cfg_.beta2);
        const S eps = static_cast<S>(cfg_.eps * std::sqrt(c2));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < p.value.size(); ++j) {
                const S g = p.grad[j];
                m[j] = b1 * m[j] + (S(1) - b1) * g;
                v[j] = b2 * v[j] + (S(1) - b2) * g * g;
                p.value[j] -= lr * m[j] / (std::sqrt(v[j]) + eps);
            }
        }
    }

    std::int64_t steps() const { return t_; }

private:
    std::vector<ParamBlock<S>> params_;
    AdamConfig cfg_;
    std::vector<std::vector<S>> m_;
    std::vector<std::vector<S>> v_;
    std::int64_t t_ = 0;
};

inline constexpr double kLeakySlope = 0.2;

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Fully connected network with leaky-ReLU hidden layers and a linear output.
/// Rows of every matrix are samples.
class Mlp {
public:
    Mlp() = default;
    Mlp(std::vector<int> widths, std::uint64_t seed);

    struct Trace {
        std::vector<Matrix> inputs;       // input to each layer
        std::vector<Matrix> preactivations;
    };

    Matrix forward(const Matrix& x, Trace* trace = nullptr) const;
    /// Activations of the last hidden layer.
    Matrix hidden(const Matrix& x) const;
    /// Accumulates parameter gradients for d(loss)/d(output) = grad_out.
    void backward(const Trace& trace, const Matrix& grad_out);

    std::vector<ParamBlock<double>> params();
    void zero_grad();

    int input_dim() const { return widths_.empty() ? 0 : widths_.front(); }
    int output_dim() const { return widths_.empty() ? 0 : widths_.back(); }

    nlohmann::json to_json() const;
    static Mlp from_json(const nlohmann::json& j);

private:
    std::vector<int> widths_;
    std::vector<Matrix> weights_;  // [in x out]
    std::vector<Vector> biases_;
    std::vector<Matrix> weight_grads_;
    std::vector<Vector> bias_grads_;
};

/// Per-feature standardization fitted on a training matrix.
struct Standardizer {
    Vector mean;
    Vector scale;

    static Standardizer fit(const Matrix& x);
    Matrix apply(const Matrix& x) const;
    nlohmann::json to_json() const;
    static Standardizer from_json(const nlohmann::json& j);
};

}  // namespace darksynth::nn
