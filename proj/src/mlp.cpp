#include "darksynth/nn.hpp"

#include "darksynth/error.hpp"

namespace darksynth::nn {

Mlp::Mlp(std::vector<int> widths, std::uint64_t seed) : widths_(std::move(widths)) {
    if (widths_.size() < 2) throw invalid_input("an MLP needs at least input and output widths");
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        const int in = widths_[l];
        const int out = widths_[l + 1];
        std::normal_distribution<double> init(0.0, std::sqrt(2.0 / in));
        Matrix w(in, out);
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = init(rng);
        weights_.push_back(std::move(w));
        biases_.push_back(Vector::Zero(out));
        weight_grads_.push_back(Matrix::Zero(in, out));
        bias_grads_.push_back(Vector::Zero(out));
    }
}

Matrix Mlp::forward(const Matrix& x, Trace* trace) const {
    if (x.cols() != input_dim()) throw invalid_input("MLP input width mismatch");
    if (trace) {
        trace->inputs.clear();
        trace->preactivations.clear();
    }
    Matrix h = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        if (trace) trace->inputs.push_back(h);
        Matrix a = h * weights_[l];
        a.rowwise() += biases_[l].transpose();
        if (l + 1 == weights_.size()) return a;
        if (trace) trace->preactivations.push_back(a);
        h = a.unaryExpr([](double v) { return v > 0.0 ? v : kLeakySlope * v; });
    }
    return h;
}

Matrix Mlp::hidden(const Matrix& x) const {
    Matrix h = x;
    for (std::size_t l = 0; l + 1 < weights_.size(); ++l) {
        Matrix a = h * weights_[l];
        a.rowwise() += biases_[l].transpose();
        h = a.unaryExpr([](double v) { return v > 0.0 ? v : kLeakySlope * v; });
    }
    return h;
}

void Mlp::backward(const Trace& trace, const Matrix& grad_out) {
    Matrix g = grad_out;
    for (std::size_t l = weights_.size(); l-- > 0;) {
        weight_grads_[l].noalias() += trace.inputs[l].transpose() * g;
        bias_grads_[l] += g.colwise().sum().transpose();
        if (l == 0) break;
        Matrix gin = g * weights_[l].transpose();
        const Matrix& pre = trace.preactivations[l - 1];
        for (Eigen::Index i = 0; i < gin.size(); ++i) {
            if (pre.data()[i] <= 0.0) gin.data()[i] *= kLeakySlope;
        }
        g = std::move(gin);
    }
}

std::vector<ParamBlock<double>> Mlp::params() {
    std::vector<ParamBlock<double>> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        out.push_back({{weights_[l].data(), static_cast<std::size_t>(weights_[l].size())},
                       {weight_grads_[l].data(), static_cast<std::size_t>(weight_grads_[l].size())}});
        out.push_back({{biases_[l].data(), static_cast<std::size_t>(biases_[l].size())},
                       {bias_grads_[l].data(), static_cast<std::size_t>(bias_grads_[l].size())}});
    }
    return out;
}

void Mlp::zero_grad() {
    for (auto& g : weight_grads_) g.setZero();
    for (auto& g : bias_grads_) g.setZero();
}

nlohmann::json Mlp::to_json() const {
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        layers.push_back({{"weights", std::vector<double>(weights_[l].data(), weights_[l].data() + weights_[l].size())},
                          {"bias", std::vector<double>(biases_[l].data(), biases_[l].data() + biases_[l].size())}});
    }
    return {{"widths", widths_}, {"layers", layers}};
}

Mlp Mlp::from_json(const nlohmann::json& j) {
    Mlp m(j.at("widths").get<std::vector<int>>(), 0);
    const auto& layers = j.at("layers");
    if (layers.size() != m.weights_.size()) throw validation_error("MLP layer count mismatch");
    for (std::size_t l = 0; l < m.weights_.size(); ++l) {
        const auto w = layers[l].at("weights").get<std::vector<double>>();
        const auto b = layers[l].at("bias").get<std::vector<double>>();
        if (w.size() != static_cast<std::size_t>(m.weights_[l].size()) ||
            b.size() != static_cast<std::size_t>(m.biases_[l].size())) {
            throw validation_error("MLP parameter size mismatch");
        }
        std::copy(w.begin(), w.end(), m.weights_[l].data());
        std::copy(b.begin(), b.end(), m.biases_[l].data());
    }
    return m;
}

Standardizer Standardizer::fit(const Matrix& x) {
    Standardizer s;
    s.mean = x.colwise().mean().transpose();
    s.scale = Vector::Ones(x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        const double var = (x.col(c).array() - s.mean(c)).square().mean();
        s.scale(c) = var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
    }
    return s;
}

Matrix Standardizer::apply(const Matrix& x) const {
    Matrix out = x;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        out.col(c) = (x.col(c).array() - mean(c)) * scale(c);
    }
    return out;
}

nlohmann::json Standardizer::to_json() const {
    return {{"mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
            {"scale", std::vector<double>(scale.data(), scale.data() + scale.size())}};
}

Standardizer Standardizer::from_json(const nlohmann::json& j) {
    const auto m = j.at("mean").get<std::vector<double>>();
    const auto s = j.at("scale").get<std::vector<double>>();
    Standardizer out;
    out.mean = Eigen::Map<const Vector>(m.data(), static_cast<Eigen::Index>(m.size()));
    out.scale = Eigen::Map<const Vector>(s.data(), static_cast<Eigen::Index>(s.size()));
    return out;
}

}  // namespace darksynth::nn
