#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "darksynth/error.hpp"
#include "darksynth/nn.hpp"

namespace darksynth::nn {

template <typename S>
using MatR = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapR = Eigen::Map<MatR<S>>;
template <typename S>
using CMapR = Eigen::Map<const MatR<S>>;

/// Storage for everything Eigen maps. A fixed base alignment keeps the
/// vectorized reduction order, and so the rounding, identical across runs.
template <typename S>
using AlignedVector = std::vector<S, Eigen::aligned_allocator<S>>;

/// Batch of feature maps laid out [n][c][h][w]; h is time, w is frequency.
template <typename S>
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    AlignedVector<S> data;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_), data(count(), S(0)) {}

    std::size_t count() const { return static_cast<std::size_t>(n) * c * h * w; }
    std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
    S* sample(int i) { return data.data() + static_cast<std::size_t>(i) * sample_size(); }
    const S* sample(int i) const { return data.data() + static_cast<std::size_t>(i) * sample_size(); }
    bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }

    void reshape(int n_, int c_, int h_, int w_) {
        n = n_, c = c_, h = h_, w = w_;
        data.assign(count(), S(0));
    }

    /// Like reshape, but leaves contents unspecified for callers that overwrite them.
    void resize(int n_, int c_, int h_, int w_) {
        n = n_, c = c_, h = h_, w = w_;
        data.resize(count());
    }
};

template <typename S>
void leaky_relu(Tensor<S>& t) {
    const S slope = static_cast<S>(kLeakySlope);
    for (S& v : t.data) v = v > S(0) ? v : slope * v;
}

/// Multiplies a gradient by the leaky-ReLU derivative, read off the layer output.
template <typename S>
void leaky_relu_backward(const Tensor<S>& out, Tensor<S>& grad) {
    const S slope = static_cast<S>(kLeakySlope);
    for (std::size_t i = 0; i < grad.data.size(); ++i) {
        if (!(out.data[i] > S(0))) grad.data[i] *= slope;
    }
}

/// Nearest-neighbour (box) upsampling by integer factors.
template <typename S>
void upsample(const Tensor<S>& in, int fh, int fw, Tensor<S>& out) {
    out.resize(in.n, in.c, in.h * fh, in.w * fw);
    for (int p = 0; p < in.n * in.c; ++p) {
        const S* src = in.data.data() + static_cast<std::size_t>(p) * in.h * in.w;
        S* dst = out.data.data() + static_cast<std::size_t>(p) * out.h * out.w;
        for (int y = 0; y < in.h; ++y) {
            S* first = dst + static_cast<std::size_t>(y) * fh * out.w;
            const S* row = src + static_cast<std::size_t>(y) * in.w;
            for (int x = 0; x < in.w; ++x) {
                for (int k = 0; k < fw; ++k) first[x * fw + k] = row[x];
            }
            for (int r = 1; r < fh; ++r) std::memcpy(first + static_cast<std::size_t>(r) * out.w, first, sizeof(S) * out.w);
        }
    }
}

/// Adjoint of upsample: sums each fh x fw block.
template <typename S>
void upsample_adjoint(const Tensor<S>& grad_out, int fh, int fw, Tensor<S>& grad_in) {
    grad_in.resize(grad_out.n, grad_out.c, grad_out.h / fh, grad_out.w / fw);
    for (int p = 0; p < grad_out.n * grad_out.c; ++p) {
        const S* src = grad_out.data.data() + static_cast<std::size_t>(p) * grad_out.h * grad_out.w;
        S* dst = grad_in.data.data() + static_cast<std::size_t>(p) * grad_in.h * grad_in.w;
        for (int y = 0; y < grad_in.h; ++y) {
            S* drow = dst + static_cast<std::size_t>(y) * grad_in.w;
            for (int x = 0; x < grad_in.w; ++x) {
                S acc = S(0);
                for (int r = 0; r < fh; ++r) {
                    const S* row = src + (static_cast<std::size_t>(y) * fh + r) * grad_out.w + static_cast<std::size_t>(x) * fw;
                    for (int k = 0; k < fw; ++k) acc += row[k];
                }
                drow[x] = acc;
            }
        }
    }
}

template <typename S>
void avg_pool(const Tensor<S>& in, int fh, int fw, Tensor<S>& out) {
    upsample_adjoint(in, fh, fw, out);
    const S scale = S(1) / static_cast<S>(fh * fw);
    for (S& v : out.data) v *= scale;
}

template <typename S>
void avg_pool_adjoint(const Tensor<S>& grad_out, int fh, int fw, Tensor<S>& grad_in) {
    upsample(grad_out, fh, fw, grad_in);
    const S scale = S(1) / static_cast<S>(fh * fw);
    for (S& v : grad_in.data) v *= scale;
}

/// Stride-1 convolution with an odd square kernel and zero "same" padding.
/// Each sample is copied into a zero-bordered buffer whose rows are widened to
/// a whole number of column blocks, so the inner loops have no edge cases.
template <typename S>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int cin, int cout, int kernel, std::mt19937_64& rng) : cin_(cin), cout_(cout), k_(kernel) {
        if (kernel % 2 != 1) throw invalid_input("convolution kernel size must be odd");
        weight.resize(static_cast<std::size_t>(cout) * fan_in());
        bias.assign(static_cast<std::size_t>(cout), S(0));
        const double gain = std::sqrt(2.0 / (1.0 + kLeakySlope * kLeakySlope));
        std::normal_distribution<double> init(0.0, gain / std::sqrt(static_cast<double>(fan_in())));
        for (S& v : weight) v = static_cast<S>(init(rng));
        dweight.assign(weight.size(), S(0));
        dbias.assign(bias.size(), S(0));
    }

    int in_channels() const { return cin_; }
    int out_channels() const { return cout_; }
    int kernel() const { return k_; }
    std::size_t fan_in() const { return static_cast<std::size_t>(cin_) * k_ * k_; }

    void forward(const Tensor<S>& x, Tensor<S>& y, bool with_bias = true) const {
        run(x, y, with_bias ? bias.data() : nullptr, Epilogue::None, nullptr);
    }

    /// forward followed by leaky ReLU.
    void forward_leaky(const Tensor<S>& x, Tensor<S>& y) const { run(x, y, bias.data(), Epilogue::Leaky, nullptr); }

    /// Bias-free forward whose outputs are scaled by the leaky slope wherever
    /// mask is not positive; mask has the output's shape.
    void forward_masked(const Tensor<S>& x, const Tensor<S>& mask, Tensor<S>& y) const {
        run(x, y, nullptr, Epilogue::Masked, &mask);
    }

    /// Accumulates parameter gradients (when param_grads) and writes the input
    /// gradient into dx (when non-null).
    void backward(const Tensor<S>& x, const Tensor<S>& dy, Tensor<S>* dx, bool param_grads) {
        if (param_grads) {
            accumulate_weight_grad(x, dy);
            const auto hw = static_cast<Eigen::Index>(x.h) * x.w;
            for (int i = 0; i < x.n; ++i) {
                for (int o = 0; o < cout_; ++o) {
                    dbias[static_cast<std::size_t>(o)] +=
                        Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>(dy.sample(i) + o * hw, hw).sum();
                }
            }
        }
        if (!dx) return;
        dx->resize(x.n, x.c, x.h, x.w);
        const int kk = k_ * k_;
        AlignedVector<S> flipped(weight.size());
        for (int o = 0; o < cout_; ++o) {
            for (int c = 0; c < cin_; ++c) {
                const S* src = weight.data() + (static_cast<std::size_t>(o) * cin_ + c) * kk;
                S* dst = flipped.data() + (static_cast<std::size_t>(c) * cout_ + o) * kk;
                for (int t = 0; t < kk; ++t) dst[t] = src[kk - 1 - t];
            }
        }
        AlignedVector<S> padded;
        for (int i = 0; i < x.n; ++i) {
            pad(dy.sample(i), cout_, x.h, x.w, padded);
            correlate(padded.data(), flipped.data(), cout_, cin_, x.h, x.w, dx->sample(i), nullptr, Epilogue::None, nullptr);
        }
    }

    /// Weight-only gradient for a given input and output gradient; biases untouched.
    void accumulate_weight_grad(const Tensor<S>& x, const Tensor<S>& dy) {
        const int wide = widened(x.w);
        AlignedVector<S> padded, grad;
        for (int i = 0; i < x.n; ++i) {
            pad(x.sample(i), cin_, x.h, x.w, padded);
            grad.assign(static_cast<std::size_t>(cout_) * x.h * wide, S(0));
            for (int o = 0; o < cout_; ++o) {
                for (int y = 0; y < x.h; ++y) {
                    std::memcpy(grad.data() + (static_cast<std::size_t>(o) * x.h + y) * wide,
                                dy.sample(i) + (static_cast<std::size_t>(o) * x.h + y) * x.w, sizeof(S) * x.w);
                }
            }
            if (k_ == 3 && cout_ % 2 == 0) {
                weight_grad_block<3, 2>(padded.data(), grad.data(), x.h, x.w);
            } else if (k_ == 3) {
                weight_grad_block<3, 1>(padded.data(), grad.data(), x.h, x.w);
            } else if (k_ == 1 && cout_ % 4 == 0) {
                weight_grad_block<1, 4>(padded.data(), grad.data(), x.h, x.w);
            } else if (k_ == 1) {
                weight_grad_block<1, 1>(padded.data(), grad.data(), x.h, x.w);
            } else {
                weight_grad_block<0, 1>(padded.data(), grad.data(), x.h, x.w);
            }
        }
    }

    std::vector<ParamBlock<S>> params() { return {{weight, dweight}, {bias, dbias}}; }

    AlignedVector<S> weight, bias, dweight, dbias;

private:
    enum class Epilogue { None, Leaky, Masked };

    void run(const Tensor<S>& x, Tensor<S>& y, const S* b, Epilogue e, const Tensor<S>* mask) const {
        if (x.c != cin_) {
            throw invalid_input("convolution expects " + std::to_string(cin_) + " channels, got " + std::to_string(x.c));
        }
        y.resize(x.n, cout_, x.h, x.w);
        AlignedVector<S> padded;
        for (int i = 0; i < x.n; ++i) {
            pad(x.sample(i), cin_, x.h, x.w, padded);
            correlate(padded.data(), weight.data(), cin_, cout_, x.h, x.w, y.sample(i), b, e, mask ? mask->sample(i) : nullptr);
        }
    }

    static constexpr int kBlock = 32;
    static constexpr int kLanes = 16;

    static int widened(int w) { return (w + kBlock - 1) / kBlock * kBlock; }
    int stride(int w) const { return widened(w) + 2 * (k_ / 2); }

    void pad(const S* src, int c, int h, int w, AlignedVector<S>& dst) const {
        const int r = k_ / 2, ws = stride(w), hs = h + 2 * r;
        dst.assign(static_cast<std::size_t>(c) * hs * ws, S(0));
        for (int ch = 0; ch < c; ++ch) {
            for (int y = 0; y < h; ++y) {
                std::memcpy(dst.data() + (static_cast<std::size_t>(ch) * hs + y + r) * ws + r,
                            src + (static_cast<std::size_t>(ch) * h + y) * w, sizeof(S) * w);
            }
        }
    }

    // out[o][y][x] = b[o] + sum_{c,ky,kx} wk[o][c][ky][kx] * padded[c][y+ky][x+kx]
    void correlate(const S* padded, const S* wk, int ci, int co, int h, int w, S* out, const S* b, Epilogue e,
                   const S* mask) const {
        if (k_ == 3) {
            correlate_k<3>(padded, wk, ci, co, h, w, out, b, e, mask);
        } else if (k_ == 1) {
            correlate_k<1>(padded, wk, ci, co, h, w, out, b, e, mask);
        } else {
            correlate_block<0, 1>(padded, wk, ci, co, h, w, out, b, e, mask);
        }
    }

    template <int K>
    void correlate_k(const S* padded, const S* wk, int ci, int co, int h, int w, S* out, const S* b, Epilogue e,
                     const S* mask) const {
        if (co % 8 == 0) {
            correlate_block<K, 8>(padded, wk, ci, co, h, w, out, b, e, mask);
        } else if (co % 4 == 0) {
            correlate_block<K, 4>(padded, wk, ci, co, h, w, out, b, e, mask);
        } else if (co % 2 == 0) {
            correlate_block<K, 2>(padded, wk, ci, co, h, w, out, b, e, mask);
        } else {
            correlate_block<K, 1>(padded, wk, ci, co, h, w, out, b, e, mask);
        }
    }

    // K is the kernel size when known at compile time, 0 otherwise.
    template <int K, int OB>
    void correlate_block(const S* padded, const S* wk, int ci, int co, int h, int w, S* out, const S* b, Epilogue e,
                         const S* mask) const {
        const int k = K ? K : k_;
        const int r = k / 2, kk = k * k, ws = stride(w), wide = widened(w);
        const std::size_t plane = static_cast<std::size_t>(h + 2 * r) * ws;
        using Block = Eigen::Array<S, kBlock, 1>;
        using BlockMap = Eigen::Map<const Block, Eigen::Unaligned>;
        Block acc[OB];
        for (int o0 = 0; o0 < co; o0 += OB) {
            const S* wo = wk + static_cast<std::size_t>(o0) * ci * kk;
            for (int y = 0; y < h; ++y) {
                for (int x0 = 0; x0 < wide; x0 += kBlock) {
                    for (int ob = 0; ob < OB; ++ob) acc[ob].setConstant(b ? b[o0 + ob] : S(0));
                    for (int c = 0; c < ci; ++c) {
                        const S* base = padded + c * plane + static_cast<std::size_t>(y) * ws + x0;
                        for (int ky = 0; ky < k; ++ky) {
                            for (int kx = 0; kx < k; ++kx) {
                                const Block v = BlockMap(base + static_cast<std::size_t>(ky) * ws + kx);
                                for (int ob = 0; ob < OB; ++ob) {
                                    acc[ob] += wo[(static_cast<std::size_t>(ob) * ci + c) * kk + ky * k + kx] * v;
                                }
                            }
                        }
                    }
                    const int n = std::min(kBlock, w - x0);
                    const S slope = static_cast<S>(kLeakySlope);
                    for (int ob = 0; ob < OB; ++ob) {
                        const std::size_t at = (static_cast<std::size_t>(o0 + ob) * h + y) * w + x0;
                        if (e == Epilogue::Leaky) {
                            acc[ob] = (acc[ob] > S(0)).select(acc[ob], slope * acc[ob]);
                        } else if (e == Epilogue::Masked) {
                            for (int j = 0; j < n; ++j) {
                                if (!(mask[at + j] > S(0))) acc[ob][j] *= slope;
                            }
                        }
                        std::memcpy(out + at, acc[ob].data(), sizeof(S) * n);
                    }
                }
            }
        }
    }

    // dweight[o][c][ky][kx] += sum_{y,x} grad[o][y][x] * padded[c][y+ky][x+kx], with
    // grad zero beyond column w.
    template <int K, int OB>
    void weight_grad_block(const S* padded, const S* grad, int h, int w) {
        const int k = K ? K : k_;
        const int r = k / 2, kk = k * k, ws = stride(w), wide = widened(w);
        const std::size_t plane = static_cast<std::size_t>(h + 2 * r) * ws;
        using Lane = Eigen::Array<S, kLanes, 1>;
        using LaneMap = Eigen::Map<const Lane, Eigen::Unaligned>;
        constexpr int kTaps = K ? K * K : 1;
        Lane fixed[K ? OB * kTaps : 1];
        std::vector<Lane, Eigen::aligned_allocator<Lane>> dynamic(K ? 0 : static_cast<std::size_t>(OB) * kk);
        Lane* acc = K ? fixed : dynamic.data();
        for (int o0 = 0; o0 < cout_; o0 += OB) {
            for (int c = 0; c < cin_; ++c) {
                for (int a = 0; a < OB * kk; ++a) acc[a].setZero();
                for (int y = 0; y < h; ++y) {
                    for (int x0 = 0; x0 < wide; x0 += kLanes) {
                        const S* base = padded + c * plane + static_cast<std::size_t>(y) * ws + x0;
                        Lane g[OB];
                        for (int ob = 0; ob < OB; ++ob) {
                            g[ob] = LaneMap(grad + (static_cast<std::size_t>(o0 + ob) * h + y) * wide + x0);
                        }
                        for (int ky = 0; ky < k; ++ky) {
                            for (int kx = 0; kx < k; ++kx) {
                                const Lane v = LaneMap(base + static_cast<std::size_t>(ky) * ws + kx);
                                for (int ob = 0; ob < OB; ++ob) acc[ob * kk + ky * k + kx] += g[ob] * v;
                            }
                        }
                    }
                }
                for (int ob = 0; ob < OB; ++ob) {
                    S* dwk = dweight.data() + (static_cast<std::size_t>(o0 + ob) * cin_ + c) * kk;
                    for (int t = 0; t < kk; ++t) dwk[t] += acc[ob * kk + t].sum();
                }
            }
        }
    }

    int cin_ = 0, cout_ = 0, k_ = 1;
};

/// Dense layer on flattened inputs: y = W x + b with W stored [out x in].
template <typename S>
class Linear {
public:
    Linear() = default;
    Linear(int in, int out, std::mt19937_64& rng) : in_(in), out_(out) {
        weight.resize(static_cast<std::size_t>(in) * out);
        std::normal_distribution<double> init(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
        for (S& v : weight) v = static_cast<S>(init(rng));
        bias.assign(static_cast<std::size_t>(out), S(0));
        dweight.assign(weight.size(), S(0));
        dbias.assign(bias.size(), S(0));
    }

    int in_features() const { return in_; }
    int out_features() const { return out_; }

    /// x is [n x in] row-major, result [n x out].
    MatR<S> forward(const S* x, int n, bool with_bias = true) const {
        CMapR<S> xm(x, n, in_);
        MatR<S> y = xm * CMapR<S>(weight.data(), out_, in_).transpose();
        if (with_bias) {
            for (int o = 0; o < out_; ++o) y.col(o).array() += bias[static_cast<std::size_t>(o)];
        }
        return y;
    }

    void backward(const S* x, int n, const MatR<S>& dy, S* dx, bool param_grads) {
        CMapR<S> xm(x, n, in_);
        if (param_grads) {
            MapR<S>(dweight.data(), out_, in_).noalias() += dy.transpose() * xm;
            for (int o = 0; o < out_; ++o) dbias[static_cast<std::size_t>(o)] += dy.col(o).sum();
        }
        if (dx) MapR<S>(dx, n, in_).noalias() = dy * CMapR<S>(weight.data(), out_, in_);
    }

    std::vector<ParamBlock<S>> params() { return {{weight, dweight}, {bias, dbias}}; }

    AlignedVector<S> weight, bias, dweight, dbias;

private:
    int in_ = 0, out_ = 0;
};

}  // namespace darksynth::nn
