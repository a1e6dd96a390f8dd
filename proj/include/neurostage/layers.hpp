#ifndef NEUROSTAGE_LAYERS_HPP
#define NEUROSTAGE_LAYERS_HPP

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "neurostage/tensor.hpp"

namespace neurostage {

enum class Mode { Train, Eval };

/// Tags double as the record kind in the weight file; keep values stable.
enum class LayerKind : std::uint32_t {
    Conv2d = 1,
    BatchNorm = 2,
    ReLU = 3,
    MaxPool2d = 4,
    Flatten = 5,
    Linear = 6,
    Dropout = 7,
    Softmax = 8,
};

inline std::string_view layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv2d: return "Conv2D";
        case LayerKind::BatchNorm: return "BatchNorm";
        case LayerKind::ReLU: return "ReLU";
        case LayerKind::MaxPool2d: return "MaxPool2D";
        case LayerKind::Flatten: return "Flatten";
        case LayerKind::Linear: return "Linear";
        case LayerKind::Dropout: return "Dropout";
        case LayerKind::Softmax: return "SoftMax";
    }
    return "?";
}

template <class T>
struct Param {
    Tensor<T>* value;
    Tensor<T>* grad;
};

/// One stage of a sequential network.
///
/// `forward` caches what `backward` needs; `infer` is the eval-mode path and
/// touches no state, so a fitted network can serve concurrent callers.
/// `backward` writes (does not accumulate) parameter gradients.
template <class T>
class Layer {
public:
    virtual ~Layer() = default;
    virtual LayerKind kind() const = 0;
    virtual Tensor<T> forward(const Tensor<T>& x, Mode mode, Rng& rng) = 0;
    virtual Tensor<T> infer(const Tensor<T>& x) const = 0;
    virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
    virtual std::vector<Param<T>> params() { return {}; }
    virtual std::unique_ptr<Layer<T>> clone() const = 0;
    /// Hash of the piecewise branch taken by the last `forward` (ReLU on/off
    /// pattern, pooling winners); 0 for smooth layers.
    virtual std::uint64_t branch_signature() const { return 0; }
};

inline std::uint64_t fnv_mix(std::uint64_t h, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xff;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// ---------------------------------------------------------------------------

template <class T>
class Conv2d final : public Layer<T> {
public:
    Conv2d(std::size_t in_c, std::size_t out_c, std::size_t kernel, std::size_t stride, std::size_t pad)
        : in_c_(in_c), out_c_(out_c), k_(kernel), stride_(stride), pad_(pad),
          weight_({out_c, in_c, kernel, kernel}), bias_({out_c}), gw_(weight_.shape()), gb_(bias_.shape()) {
        if (stride == 0 || kernel == 0) throw InvalidArgument("Conv2d: kernel and stride must be positive");
    }

    LayerKind kind() const override { return LayerKind::Conv2d; }

    std::size_t in_channels() const { return in_c_; }
    std::size_t out_channels() const { return out_c_; }
    std::size_t kernel() const { return k_; }
    std::size_t stride() const { return stride_; }
    std::size_t pad() const { return pad_; }
    Tensor<T>& weight() { return weight_; }
    Tensor<T>& bias() { return bias_; }
    const Tensor<T>& weight() const { return weight_; }
    const Tensor<T>& bias() const { return bias_; }

    /// The first layer of a network never needs the input gradient.
    void set_input_grad(bool on) { input_grad_ = on; }

    std::size_t out_dim(std::size_t in) const {
        const long long span = static_cast<long long>(in) + 2 * static_cast<long long>(pad_) - static_cast<long long>(k_);
        if (span < 0) throw InvalidArgument("Conv2d: non-positive output dimension for input " + std::to_string(in));
        return static_cast<std::size_t>(span) / stride_ + 1;
    }

    Tensor<T> forward(const Tensor<T>& x, Mode, Rng&) override {
        padded_ = pad_input(x);
        in_shape_ = x.shape();
        return convolve(padded_, x.dim(2), x.dim(3));
    }

    Tensor<T> infer(const Tensor<T>& x) const override {
        const auto p = pad_input(x);
        return convolve(p, x.dim(2), x.dim(3));
    }

    Tensor<T> backward(const Tensor<T>& g) override {
        const std::size_t n = in_shape_[0], h = in_shape_[2], w = in_shape_[3];
        const std::size_t ho = g.dim(2), wo = g.dim(3);
        const std::size_t hp = h + 2 * pad_, wp = w + 2 * pad_;
        gw_.fill(0);
        gb_.fill(0);
        Tensor<T> gpad;
        if (input_grad_) gpad = Tensor<T>({n, in_c_, hp, wp});
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t oc = 0; oc < out_c_; ++oc) {
                const T* go = g.data() + (b * out_c_ + oc) * ho * wo;
                T sb = 0;
                for (std::size_t i = 0; i < ho * wo; ++i) sb += go[i];
                gb_[oc] += sb;
                for (std::size_t ic = 0; ic < in_c_; ++ic) {
                    const T* src = padded_.data() + (b * in_c_ + ic) * hp * wp;
                    T* gsrc = input_grad_ ? gpad.data() + (b * in_c_ + ic) * hp * wp : nullptr;
                    for (std::size_t ky = 0; ky < k_; ++ky) {
                        for (std::size_t kx = 0; kx < k_; ++kx) {
                            const std::size_t widx = ((oc * in_c_ + ic) * k_ + ky) * k_ + kx;
                            const T wv = weight_[widx];
                            T acc = 0;
                            for (std::size_t y = 0; y < ho; ++y) {
                                const T* srow = src + (y * stride_ + ky) * wp + kx;
                                const T* grow = go + y * wo;
                                if (stride_ == 1) {
                                    for (std::size_t x = 0; x < wo; ++x) acc += grow[x] * srow[x];
                                    if (gsrc) {
                                        T* drow = gsrc + (y + ky) * wp + kx;
                                        for (std::size_t x = 0; x < wo; ++x) drow[x] += wv * grow[x];
                                    }
                                } else {
                                    for (std::size_t x = 0; x < wo; ++x) acc += grow[x] * srow[x * stride_];
                                    if (gsrc) {
                                        T* drow = gsrc + (y * stride_ + ky) * wp + kx;
                                        for (std::size_t x = 0; x < wo; ++x) drow[x * stride_] += wv * grow[x];
                                    }
                                }
                            }
                            gw_[widx] += acc;
                        }
                    }
                }
            }
        }
        if (!input_grad_) return Tensor<T>(in_shape_);
        Tensor<T> gx(in_shape_);
        for (std::size_t p = 0; p < n * in_c_; ++p)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x)
                    gx[(p * h + y) * w + x] = gpad[(p * hp + y + pad_) * wp + x + pad_];
        return gx;
    }

    std::vector<Param<T>> params() override { return {{&weight_, &gw_}, {&bias_, &gb_}}; }
    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv2d>(*this); }

private:
    Tensor<T> pad_input(const Tensor<T>& x) const {
        if (x.rank() != 4 || x.dim(1) != in_c_)
            throw InvalidArgument("Conv2d: expected [N," + std::to_string(in_c_) + ",H,W], got " + shape_string(x.shape()));
        const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
        out_dim(h);
        out_dim(w);
        const std::size_t hp = h + 2 * pad_, wp = w + 2 * pad_;
        Tensor<T> p({n, in_c_, hp, wp});
        for (std::size_t c = 0; c < n * in_c_; ++c)
            for (std::size_t y = 0; y < h; ++y)
                std::copy_n(x.data() + (c * h + y) * w, w, p.data() + (c * hp + y + pad_) * wp + pad_);
        return p;
    }

    // Cross-correlation over a zero-padded input.
    Tensor<T> convolve(const Tensor<T>& p, std::size_t h, std::size_t w) const {
        const std::size_t n = p.dim(0);
        const std::size_t hp = p.dim(2), wp = p.dim(3);
        const std::size_t ho = out_dim(h), wo = out_dim(w);
        Tensor<T> out({n, out_c_, ho, wo});
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t oc = 0; oc < out_c_; ++oc) {
                T* dst = out.data() + (b * out_c_ + oc) * ho * wo;
                std::fill(dst, dst + ho * wo, bias_[oc]);
                for (std::size_t ic = 0; ic < in_c_; ++ic) {
                    const T* src = p.data() + (b * in_c_ + ic) * hp * wp;
                    for (std::size_t ky = 0; ky < k_; ++ky) {
                        for (std::size_t kx = 0; kx < k_; ++kx) {
                            const T wv = weight_[((oc * in_c_ + ic) * k_ + ky) * k_ + kx];
                            for (std::size_t y = 0; y < ho; ++y) {
                                const T* srow = src + (y * stride_ + ky) * wp + kx;
                                T* drow = dst + y * wo;
                                if (stride_ == 1) {
                                    for (std::size_t x = 0; x < wo; ++x) drow[x] += wv * srow[x];
                                } else {
                                    for (std::size_t x = 0; x < wo; ++x) drow[x] += wv * srow[x * stride_];
                                }
                            }
                        }
                    }
                }
            }
        }
        return out;
    }

    std::size_t in_c_, out_c_, k_, stride_, pad_;
    Tensor<T> weight_, bias_, gw_, gb_;
    Tensor<T> padded_;
    Shape in_shape_;
    bool input_grad_ = true;
};

// ---------------------------------------------------------------------------

/// Batch normalization over the channel axis (axis 1) of [N,C] or [N,C,H,W].
/// Train mode uses biased batch statistics and folds the unbiased variance
/// into the running estimate; eval mode uses the running estimates.
template <class T>
class BatchNorm final : public Layer<T> {
public:
    explicit BatchNorm(std::size_t features, T eps = T(1e-5), T momentum = T(0.1))
        : c_(features), eps_(eps), momentum_(momentum), gamma_({features}, T(1)), beta_({features}, T(0)),
          running_mean_({features}, T(0)), running_var_({features}, T(1)), gg_({features}), gbeta_({features}) {}

    LayerKind kind() const override { return LayerKind::BatchNorm; }

    std::size_t features() const { return c_; }
    T eps() const { return eps_; }
    T momentum() const { return momentum_; }
    Tensor<T>& gamma() { return gamma_; }
    Tensor<T>& beta() { return beta_; }
    Tensor<T>& running_mean() { return running_mean_; }
    Tensor<T>& running_var() { return running_var_; }
    const Tensor<T>& gamma() const { return gamma_; }
    const Tensor<T>& beta() const { return beta_; }
    const Tensor<T>& running_mean() const { return running_mean_; }
    const Tensor<T>& running_var() const { return running_var_; }

    Tensor<T> forward(const Tensor<T>& x, Mode mode, Rng&) override {
        check(x);
        eval_cache_ = mode == Mode::Eval;
        if (eval_cache_) {
            const std::size_t n = x.dim(0), s = spatial(x);
            xhat_ = Tensor<T>(x.shape());
            inv_std_.assign(c_, T(0));
            for (std::size_t c = 0; c < c_; ++c) {
                inv_std_[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var_[c]) + eps_));
                for (std::size_t b = 0; b < n; ++b) {
                    const std::size_t off = (b * c_ + c) * s;
                    for (std::size_t i = 0; i < s; ++i) xhat_[off + i] = (x[off + i] - running_mean_[c]) * inv_std_[c];
                }
            }
            return infer(x);
        }
        const std::size_t n = x.dim(0), s = spatial(x), m = n * s;
        if (m < 2) throw InvalidArgument("BatchNorm: train mode needs at least 2 values per channel, got " + std::to_string(m));
        xhat_ = Tensor<T>(x.shape());
        inv_std_.assign(c_, T(0));
        Tensor<T> out(x.shape());
        for (std::size_t c = 0; c < c_; ++c) {
            double sum = 0.0;
            for (std::size_t b = 0; b < n; ++b) {
                const T* p = x.data() + (b * c_ + c) * s;
                for (std::size_t i = 0; i < s; ++i) sum += p[i];
            }
            const double mean = sum / static_cast<double>(m);
            double sq = 0.0;
            for (std::size_t b = 0; b < n; ++b) {
                const T* p = x.data() + (b * c_ + c) * s;
                for (std::size_t i = 0; i < s; ++i) sq += (p[i] - mean) * (p[i] - mean);
            }
            const double var = sq / static_cast<double>(m);
            const T inv = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps_)));
            inv_std_[c] = inv;
            for (std::size_t b = 0; b < n; ++b) {
                const std::size_t off = (b * c_ + c) * s;
                for (std::size_t i = 0; i < s; ++i) {
                    const T xh = static_cast<T>(x[off + i] - mean) * inv;
                    xhat_[off + i] = xh;
                    out[off + i] = gamma_[c] * xh + beta_[c];
                }
            }
            const double unbiased = sq / static_cast<double>(m - 1);
            running_mean_[c] = static_cast<T>((1.0 - momentum_) * running_mean_[c] + momentum_ * mean);
            running_var_[c] = static_cast<T>((1.0 - momentum_) * running_var_[c] + momentum_ * unbiased);
        }
        return out;
    }

    Tensor<T> infer(const Tensor<T>& x) const override {
        check(x);
        const std::size_t n = x.dim(0), s = spatial(x);
        Tensor<T> out(x.shape());
        for (std::size_t c = 0; c < c_; ++c) {
            const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var_[c]) + eps_));
            for (std::size_t b = 0; b < n; ++b) {
                const std::size_t off = (b * c_ + c) * s;
                for (std::size_t i = 0; i < s; ++i) out[off + i] = (x[off + i] - running_mean_[c]) * inv * gamma_[c] + beta_[c];
            }
        }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& g) override {
        const std::size_t n = g.dim(0), s = spatial(g);
        const double m = static_cast<double>(n * s);
        Tensor<T> gx(g.shape());
        for (std::size_t c = 0; c < c_; ++c) {
            double sum_g = 0.0, sum_gx = 0.0;
            for (std::size_t b = 0; b < n; ++b) {
                const std::size_t off = (b * c_ + c) * s;
                for (std::size_t i = 0; i < s; ++i) {
                    sum_g += g[off + i];
                    sum_gx += static_cast<double>(g[off + i]) * xhat_[off + i];
                }
            }
            gbeta_[c] = static_cast<T>(sum_g);
            gg_[c] = static_cast<T>(sum_gx);
            if (eval_cache_) {
                // fixed statistics: the normalization is affine in x
                const T k = gamma_[c] * inv_std_[c];
                for (std::size_t b = 0; b < n; ++b) {
                    const std::size_t off = (b * c_ + c) * s;
                    for (std::size_t i = 0; i < s; ++i) gx[off + i] = g[off + i] * k;
                }
                continue;
            }
            const double scale = static_cast<double>(gamma_[c]) * inv_std_[c] / m;
            for (std::size_t b = 0; b < n; ++b) {
                const std::size_t off = (b * c_ + c) * s;
                for (std::size_t i = 0; i < s; ++i)
                    gx[off + i] = static_cast<T>(scale * (m * g[off + i] - sum_g - xhat_[off + i] * sum_gx));
            }
        }
        return gx;
    }

    std::vector<Param<T>> params() override { return {{&gamma_, &gg_}, {&beta_, &gbeta_}}; }
    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<BatchNorm>(*this); }

private:
    void check(const Tensor<T>& x) const {
        if ((x.rank() != 2 && x.rank() != 4) || x.dim(1) != c_)
            throw InvalidArgument("BatchNorm(" + std::to_string(c_) + "): unexpected input " + shape_string(x.shape()));
    }
    static std::size_t spatial(const Tensor<T>& x) { return x.rank() == 4 ? x.dim(2) * x.dim(3) : 1; }

    std::size_t c_;
    T eps_, momentum_;
    Tensor<T> gamma_, beta_, running_mean_, running_var_, gg_, gbeta_;
    Tensor<T> xhat_;
    std::vector<T> inv_std_;
    bool eval_cache_ = false;
};

// ---------------------------------------------------------------------------

template <class T>
class ReLU final : public Layer<T> {
public:
    LayerKind kind() const override { return LayerKind::ReLU; }
    Tensor<T> forward(const Tensor<T>& x, Mode, Rng&) override {
        Tensor<T> out = infer(x);
        out_ = out;
        return out;
    }
    Tensor<T> infer(const Tensor<T>& x) const override {
        Tensor<T> out = x;
        for (auto& v : out.values()) v = v > T(0) ? v : T(0);
        return out;
    }
    Tensor<T> backward(const Tensor<T>& g) override {
        Tensor<T> gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i)
            if (!(out_[i] > T(0))) gx[i] = T(0);
        return gx;
    }
    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ReLU>(*this); }
    std::uint64_t branch_signature() const override {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (std::size_t i = 0; i < out_.size(); ++i)
            if (out_[i] > T(0)) h = fnv_mix(h, i);
        return h;
    }

private:
    Tensor<T> out_;
};

// ---------------------------------------------------------------------------

/// Non-overlapping max pooling. Odd spatial sizes are rejected.
template <class T>
class MaxPool2d final : public Layer<T> {
public:
    explicit MaxPool2d(std::size_t window = 2, std::size_t stride = 2) : k_(window), stride_(stride) {
        if (window != 2 || stride != 2) throw InvalidArgument("MaxPool2d: only 2x2 windows with stride 2 are supported");
    }
    LayerKind kind() const override { return LayerKind::MaxPool2d; }
    std::size_t window() const { return k_; }
    std::size_t stride() const { return stride_; }

    Tensor<T> forward(const Tensor<T>& x, Mode, Rng&) override {
        in_shape_ = x.shape();
        return pool(x, &argmax_);
    }
    Tensor<T> infer(const Tensor<T>& x) const override { return pool(x, nullptr); }

    Tensor<T> backward(const Tensor<T>& g) override {
        Tensor<T> gx(in_shape_);
        for (std::size_t i = 0; i < g.size(); ++i) gx[argmax_[i]] += g[i];
        return gx;
    }
    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<MaxPool2d>(*this); }
    std::uint64_t branch_signature() const override {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (auto a : argmax_) h = fnv_mix(h, a);
        return h;
    }

private:
    Tensor<T> pool(const Tensor<T>& x, std::vector<std::size_t>* arg) const {
        if (x.rank() != 4) throw InvalidArgument("MaxPool2d: expected [N,C,H,W], got " + shape_string(x.shape()));
        const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
        if (h % 2 || w % 2) throw InvalidArgument("MaxPool2d: odd spatial dimension in " + shape_string(x.shape()));
        const std::size_t ho = h / 2, wo = w / 2;
        Tensor<T> out({x.dim(0), x.dim(1), ho, wo});
        if (arg) arg->assign(out.size(), 0);
        for (std::size_t p = 0; p < nc; ++p) {
            for (std::size_t y = 0; y < ho; ++y) {
                for (std::size_t xo = 0; xo < wo; ++xo) {
                    std::size_t best = (p * h + 2 * y) * w + 2 * xo;
                    for (std::size_t dy = 0; dy < 2; ++dy)
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                            const std::size_t i = (p * h + 2 * y + dy) * w + 2 * xo + dx;
                            if (x[i] > x[best]) best = i;
                        }
                    const std::size_t o = (p * ho + y) * wo + xo;
                    out[o] = x[best];
                    if (arg) (*arg)[o] = best;
                }
            }
        }
        return out;
    }

    std::size_t k_, stride_;
    Shape in_shape_;
    std::vector<std::size_t> argmax_;
};

// ---------------------------------------------------------------------------

template <class T>
class Flatten final : public Layer<T> {
public:
    LayerKind kind() const override { return LayerKind::Flatten; }
    Tensor<T> forward(const Tensor<T>& x, Mode, Rng&) override {
        in_shape_ = x.shape();
        return infer(x);
    }
    Tensor<T> infer(const Tensor<T>& x) const override { return x.reshaped({x.dim(0), x.size() / x.dim(0)}); }
    Tensor<T> backward(const Tensor<T>& g) override { return g.reshaped(in_shape_); }
    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Flatten>(*this); }

private:
    Shape in_shape_;
};

// ---------------------------------------------------------------------------

template <class T>
class Linear final : public Layer<T> {
public:
    Linear(std::size_t in, std::size_t out)
        : in_(in), out_(out), weight_({out, in}), bias_({out}), gw_({out, in}), gb_({out}) {}

    LayerKind kind() const override { return LayerKind::Linear; }
    std::size_t in_features() const { return in_; }
    std::size_t out_features() const { return out_; }
    Tensor<T>& weight() { return weight_; }
    Tensor<T>& bias() { return bias_; }
    const Tensor<T>& weight() const { return weight_; }
    const Tensor<T>& bias() const { return bias_; }

    Tensor<T> forward(const Tensor<T>& x, Mode, Rng&) override {
        x_ = x;
        return infer(x);
    }

    Tensor<T> infer(const Tensor<T>& x) const override {
        if (x.rank() != 2 || x.dim(1) != in_)
            throw InvalidArgument("Linear: expected [N," + std::to_string(in_) + "], got " + shape_string(x.shape()));
        const std::size_t n = x.dim(0);
        Tensor<T> y({n, out_});
        for (std::size_t b = 0; b < n; ++b) {
            const T* xr = x.data() + b * in_;
            for (std::size_t o = 0; o < out_; ++o) {
                const T* wr = weight_.data() + o * in_;
                T acc = 0;
                for (std::size_t i = 0; i < in_; ++i) acc += wr[i] * xr[i];
                y[b * out_ + o] = acc + bias_[o];
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& g) override {
        const std::size_t n = g.dim(0);
        gw_.fill(0);
        gb_.fill(0);
        Tensor<T> gx({n, in_});
        for (std::size_t b = 0; b < n; ++b) {
            const T* xr = x_.data() + b * in_;
            T* gxr = gx.data() + b * in_;
            for (std::size_t o = 0; o < out_; ++o) {
                const T go = g[b * out_ + o];
                gb_[o] += go;
                T* gwr = gw_.data() + o * in_;
                const T* wr = weight_.data() + o * in_;
                for (std::size_t i = 0; i < in_; ++i) {
                    gwr[i] += go * xr[i];
                    gxr[i] += go * wr[i];
                }
            }
        }
        return gx;
    }

    std::vector<Param<T>> params() override { return {{&weight_, &gw_}, {&bias_, &gb_}}; }
    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Linear>(*this); }

private:
    std::size_t in_, out_;
    Tensor<T> weight_, bias_, gw_, gb_;
    Tensor<T> x_;
};

// ---------------------------------------------------------------------------

/// Inverted dropout: train mode zeroes with probability `rate` and scales the
/// survivors by 1/(1-rate); eval mode is the identity.
template <class T>
class Dropout final : public Layer<T> {
public:
    explicit Dropout(double rate) : rate_(rate) {
        if (rate < 0.0 || rate >= 1.0) throw InvalidArgument("Dropout: rate must be in [0,1)");
    }
    LayerKind kind() const override { return LayerKind::Dropout; }
    double rate() const { return rate_; }

    Tensor<T> forward(const Tensor<T>& x, Mode mode, Rng& rng) override {
        mask_.assign(x.size(), T(1));
        if (mode == Mode::Eval || rate_ == 0.0) return x;
        const T scale = static_cast<T>(1.0 / (1.0 - rate_));
        Tensor<T> out = x;
        for (std::size_t i = 0; i < x.size(); ++i) {
            mask_[i] = rng.bernoulli(rate_) ? T(0) : scale;
            out[i] *= mask_[i];
        }
        return out;
    }
    Tensor<T> infer(const Tensor<T>& x) const override { return x; }
    Tensor<T> backward(const Tensor<T>& g) override {
        Tensor<T> gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= mask_[i];
        return gx;
    }
    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Dropout>(*this); }

private:
    double rate_;
    std::vector<T> mask_;
};

}  // namespace neurostage

#endif
