#ifndef NEUROSTAGE_CNN_HPP
#define NEUROSTAGE_CNN_HPP

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "neurostage/image.hpp"
#include "neurostage/layers.hpp"
#include "neurostage/tensor.hpp"

namespace neurostage {

/// Sequential layer stack. The softmax is not a layer in the stack:
/// `forward` returns logits and `predict_proba` applies the softmax.
template <class T>
class Network {
public:
    Network() = default;
    Network(const Network& o) { *this = o; }
    Network& operator=(const Network& o) {
        if (this != &o) {
            layers_.clear();
            for (const auto& l : o.layers_) layers_.push_back(l->clone());
        }
        return *this;
    }
    Network(Network&&) noexcept = default;
    Network& operator=(Network&&) noexcept = default;

    template <class L, class... Args>
    L& add(Args&&... args) {
        auto p = std::make_unique<L>(std::forward<Args>(args)...);
        L& ref = *p;
        layers_.push_back(std::move(p));
        return ref;
    }
    void add_layer(std::unique_ptr<Layer<T>> l) { layers_.push_back(std::move(l)); }

    std::size_t size() const { return layers_.size(); }
    Layer<T>& layer(std::size_t i) { return *layers_.at(i); }
    const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }

    Tensor<T> forward(const Tensor<T>& x, Mode mode, Rng& rng) {
        Tensor<T> h = x;
        for (auto& l : layers_) h = mode == Mode::Eval ? l->infer(h) : l->forward(h, mode, rng);
        return h;
    }

    /// Like `forward` but keeps the caches needed by `backward` in both modes.
    Tensor<T> forward_for_backward(const Tensor<T>& x, Mode mode, Rng& rng) {
        Tensor<T> h = x;
        for (auto& l : layers_) h = l->forward(h, mode, rng);
        return h;
    }

    /// Eval-mode logits; touches no layer state.
    Tensor<T> infer(const Tensor<T>& x) const {
        Tensor<T> h = x;
        for (const auto& l : layers_) h = l->infer(h);
        return h;
    }

    Tensor<T> predict_proba(const Tensor<T>& x) const { return softmax_rows(infer(x)); }

    /// Output shape after every layer, eval mode.
    std::vector<Shape> trace_shapes(const Tensor<T>& x) const {
        std::vector<Shape> shapes;
        Tensor<T> h = x;
        for (const auto& l : layers_) {
            h = l->infer(h);
            shapes.push_back(h.shape());
        }
        return shapes;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) {
        Tensor<T> g = grad_out;
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
        return g;
    }

    std::uint64_t branch_signature() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& l : layers_) h = fnv_mix(h, l->branch_signature());
        return h;
    }

    std::vector<Param<T>> params() {
        std::vector<Param<T>> ps;
        for (auto& l : layers_)
            for (auto p : l->params()) ps.push_back(p);
        return ps;
    }

private:
    std::vector<std::unique_ptr<Layer<T>>> layers_;
};

// ---------------------------------------------------------------------------
// Architecture

struct CnnArch {
    std::size_t input_size = 248;
    std::size_t conv1_channels = 2;
    std::size_t conv2_channels = 4;
    std::size_t kernel = 5;
    std::size_t stride = 1;
    std::size_t pad = 1;
    std::size_t hidden = 32;
    double dropout = 0.3;
    std::size_t num_classes = 3;
    /// ReLU on the output Linear, as listed in the layer table.
    bool head_relu = true;

    std::size_t conv1_out() const { return (input_size + 2 * pad - kernel) / stride + 1; }
    std::size_t conv2_out() const { return (conv1_out() + 2 * pad - kernel) / stride + 1; }
    std::size_t pooled() const { return conv2_out() / 2; }
    std::size_t flat() const { return pooled() * pooled() * conv2_channels; }
};

/// Fan-in scaled uniform initialization, bound sqrt(1/fan_in), for weights
/// and biases. Batch norm starts at gamma = 1, beta = 0.
template <class T>
void init_uniform(Tensor<T>& t, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
}

/// Conv -> ReLU -> BN2D -> Conv -> ReLU -> BN2D -> MaxPool -> Flatten ->
/// Linear -> ReLU -> Dropout -> BN1D -> Linear -> [ReLU] -> BN1D.
template <class T>
Network<T> build_network(const CnnArch& a, std::uint64_t seed) {
    if (a.conv2_out() % 2) throw InvalidArgument("architecture: second conv output must be even for 2x2 pooling");
    Rng rng(seed);
    Network<T> net;
    auto& c1 = net.template add<Conv2d<T>>(1, a.conv1_channels, a.kernel, a.stride, a.pad);
    init_uniform(c1.weight(), a.kernel * a.kernel, rng);
    init_uniform(c1.bias(), a.kernel * a.kernel, rng);
    c1.set_input_grad(false);
    net.template add<ReLU<T>>();
    net.template add<BatchNorm<T>>(a.conv1_channels);
    auto& c2 = net.template add<Conv2d<T>>(a.conv1_channels, a.conv2_channels, a.kernel, a.stride, a.pad);
    init_uniform(c2.weight(), a.conv1_channels * a.kernel * a.kernel, rng);
    init_uniform(c2.bias(), a.conv1_channels * a.kernel * a.kernel, rng);
    net.template add<ReLU<T>>();
    net.template add<BatchNorm<T>>(a.conv2_channels);
    net.template add<MaxPool2d<T>>(2, 2);
    net.template add<Flatten<T>>();
    auto& l1 = net.template add<Linear<T>>(a.flat(), a.hidden);
    init_uniform(l1.weight(), a.flat(), rng);
    init_uniform(l1.bias(), a.flat(), rng);
    net.template add<ReLU<T>>();
    net.template add<Dropout<T>>(a.dropout);
    net.template add<BatchNorm<T>>(a.hidden);
    auto& l2 = net.template add<Linear<T>>(a.hidden, a.num_classes);
    init_uniform(l2.weight(), a.hidden, rng);
    init_uniform(l2.bias(), a.hidden, rng);
    if (a.head_relu) net.template add<ReLU<T>>();
    net.template add<BatchNorm<T>>(a.num_classes);
    return net;
}

/// The production single-precision network plus its input geometry.
struct CnnModel {
    Network<float> net;
    std::size_t input_size = 248;
    std::size_t num_classes = 3;
};

inline CnnModel make_cnn(const CnnArch& arch, std::uint64_t seed) {
    return {build_network<float>(arch, seed), arch.input_size, arch.num_classes};
}

/// Pixel intensities mapped to [0, 1].
inline void write_image(const GrayImage& img, float* dst) {
    const auto px = img.pixels();
    for (std::size_t i = 0; i < px.size(); ++i) dst[i] = static_cast<float>(px[i]) / 255.0f;
}

/// Resizes to the square network input when needed.
inline GrayImage prepare_input(const GrayImage& img, std::size_t size) {
    const int s = static_cast<int>(size);
    if (img.width() == s && img.height() == s) return img;
    return resize_bilinear(img, s, s);
}

inline Tensor<float> images_to_tensor(const std::vector<const GrayImage*>& images, std::size_t size) {
    Tensor<float> t({images.size(), 1, size, size});
    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto& im = *images[i];
        if (static_cast<std::size_t>(im.width()) != size || static_cast<std::size_t>(im.height()) != size)
            throw InvalidArgument("CNN input must be " + std::to_string(size) + "x" + std::to_string(size) + ", got " +
                                  std::to_string(im.width()) + "x" + std::to_string(im.height()));
        write_image(im, t.data() + i * size * size);
    }
    return t;
}

// ---------------------------------------------------------------------------
// Prediction

struct SlicePrediction {
    int label = 0;
    double confidence = 0.0;  ///< max softmax probability
};

/// Argmax with ties to the lowest index, and the max probability.
inline SlicePrediction from_probabilities(std::span<const double> p) {
    SlicePrediction s;
    for (std::size_t k = 0; k < p.size(); ++k)
        if (p[k] > p[static_cast<std::size_t>(s.label)]) s.label = static_cast<int>(k);
    s.confidence = p[static_cast<std::size_t>(s.label)];
    return s;
}

inline std::vector<std::vector<double>> predict_proba(const CnnModel& m, const std::vector<const GrayImage*>& images) {
    const auto probs = m.net.predict_proba(images_to_tensor(images, m.input_size));
    std::vector<std::vector<double>> out(images.size());
    for (std::size_t i = 0; i < images.size(); ++i)
        out[i].assign(probs.data() + i * m.num_classes, probs.data() + (i + 1) * m.num_classes);
    return out;
}

/// Eval-mode prediction for one slice. The image must already be at the
/// network input size.
inline SlicePrediction predict_slice(const CnnModel& m, const GrayImage& image) {
    const auto p = predict_proba(m, {&image});
    return from_probabilities(p.front());
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentParams {
    double scale = 1.0;
    bool flip_h = false;
    bool flip_v = false;
};

/// Zoom about the image center by `scale` (pixels mapped outside the source
/// read black), optional flips, then resize to `out_size` square.
inline GrayImage augment_with(const GrayImage& image, const AugmentParams& p, int out_size = 248) {
    GrayImage zoomed = image;
    if (p.scale != 1.0) {
        const double cx = (image.width() - 1) / 2.0;
        const double cy = (image.height() - 1) / 2.0;
        for (int y = 0; y < image.height(); ++y)
            for (int x = 0; x < image.width(); ++x)
                zoomed.at(x, y) = clamp_to_u8(sample_bilinear(image, cx + (x - cx) / p.scale, cy + (y - cy) / p.scale));
    }
    if (p.flip_h) zoomed = flip_horizontal(zoomed);
    if (p.flip_v) zoomed = flip_vertical(zoomed);
    return resize_bilinear(zoomed, out_size, out_size);
}

inline AugmentParams draw_augment(Rng& rng) {
    AugmentParams p;
    p.scale = rng.uniform(0.8, 1.2);
    p.flip_h = rng.bernoulli(0.5);
    p.flip_v = rng.bernoulli(0.5);
    return p;
}

inline GrayImage augment(const GrayImage& image, Rng& rng, int out_size = 248) {
    return augment_with(image, draw_augment(rng), out_size);
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
    int epochs = 6;
    int batch_size = 32;
    double learning_rate = 1e-3;
    double momentum = 0.9;
    std::uint64_t seed = 0;
    bool augment = true;
};

struct LabeledImage {
    GrayImage image;
    int target = 0;
};

struct EpochMetrics {
    int epoch = 0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

inline constexpr double kProbFloor = 1e-12;

/// Mean cross-entropy of softmax rows against integer targets, and the fused
/// gradient (p - y) / N with respect to the logits.
template <class T>
double softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets, Tensor<T>* grad,
                             std::size_t* correct = nullptr) {
    const auto p = softmax_rows(logits);
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    if (targets.size() != n) throw InvalidArgument("softmax_cross_entropy: target count mismatch");
    double loss = 0.0;
    if (grad) *grad = Tensor<T>(logits.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const auto t = static_cast<std::size_t>(targets[i]);
        loss -= std::log(std::max(static_cast<double>(p[i * k + t]), kProbFloor));
        if (correct) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < k; ++j)
                if (p[i * k + j] > p[i * k + best]) best = j;
            if (best == t) ++*correct;
        }
        if (grad)
            for (std::size_t j = 0; j < k; ++j)
                (*grad)[i * k + j] = static_cast<T>((p[i * k + j] - (j == t ? T(1) : T(0))) / static_cast<double>(n));
    }
    return loss / static_cast<double>(n);
}

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
};

/// Eval-mode loss and accuracy; images are resized to the input size.
inline EvalResult evaluate(const CnnModel& m, const std::vector<LabeledImage>& data, int batch_size = 32) {
    if (data.empty()) return {};
    double loss = 0.0;
    std::size_t correct = 0;
    const int s = static_cast<int>(m.input_size);
    for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(data.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<GrayImage> resized;
        std::vector<int> targets;
        for (std::size_t i = start; i < end; ++i) {
            resized.push_back(resize_bilinear(data[i].image, s, s));
            targets.push_back(data[i].target);
        }
        std::vector<const GrayImage*> ptrs;
        for (const auto& r : resized) ptrs.push_back(&r);
        const auto logits = m.net.infer(images_to_tensor(ptrs, m.input_size));
        loss += softmax_cross_entropy<float>(logits, targets, nullptr, &correct) * static_cast<double>(end - start);
    }
    return {loss / static_cast<double>(data.size()), static_cast<double>(correct) / static_cast<double>(data.size())};
}

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Mini-batch SGD with momentum (v = mu v + g; w -= lr v) on softmax
/// cross-entropy. Fully determined by `cfg.seed`.
inline std::vector<EpochMetrics> train(CnnModel& m, const std::vector<LabeledImage>& train_set,
                                       const std::vector<LabeledImage>& val_set, const TrainConfig& cfg,
                                       const EpochCallback& on_epoch = {}) {
    if (train_set.empty()) throw TrainingError("train: empty training set");
    if (cfg.batch_size < 1) throw InvalidArgument("train: batch_size must be >= 1");
    for (const auto& s : train_set)
        if (s.target < 0 || static_cast<std::size_t>(s.target) >= m.num_classes)
            throw InvalidArgument("train: target outside the network's class range");

    Rng order_rng(cfg.seed);
    Rng aug_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    Rng drop_rng(cfg.seed + 0x51ed270b27a5f1ULL);
    auto params = m.net.params();
    std::vector<Tensor<float>> velocity;
    for (const auto& p : params) velocity.emplace_back(p.value->shape());

    const int size = static_cast<int>(m.input_size);
    std::vector<std::size_t> order(train_set.size());
    std::vector<EpochMetrics> history;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        order_rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        std::size_t batch_no = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size), ++batch_no) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            // a single-sample tail batch has no batch-norm statistics
            if (end - start < 2 && start > 0) break;
            std::vector<GrayImage> batch;
            std::vector<int> targets;
            for (std::size_t i = start; i < end; ++i) {
                const auto& s = train_set[order[i]];
                batch.push_back(cfg.augment ? augment(s.image, aug_rng, size) : resize_bilinear(s.image, size, size));
                targets.push_back(s.target);
            }
            std::vector<const GrayImage*> ptrs;
            for (const auto& b : batch) ptrs.push_back(&b);
            const auto logits = m.net.forward(images_to_tensor(ptrs, m.input_size), Mode::Train, drop_rng);
            Tensor<float> grad;
            const double loss = softmax_cross_entropy(logits, targets, &grad, &correct);
            if (!std::isfinite(loss))
                throw TrainingError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(batch_no) + " (learning rate " + format_exact(cfg.learning_rate) + ")");
            loss_sum += loss * static_cast<double>(end - start);
            m.net.backward(grad);
            for (std::size_t p = 0; p < params.size(); ++p) {
                auto& v = velocity[p];
                auto& w = *params[p].value;
                const auto& g = *params[p].grad;
                for (std::size_t i = 0; i < w.size(); ++i) {
                    v[i] = static_cast<float>(cfg.momentum) * v[i] + g[i];
                    w[i] -= static_cast<float>(cfg.learning_rate) * v[i];
                }
            }
        }
        EpochMetrics em;
        em.epoch = epoch;
        em.train_loss = loss_sum / static_cast<double>(order.size());
        em.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
        if (!val_set.empty()) {
            const auto ev = evaluate(m, val_set, cfg.batch_size);
            em.val_loss = ev.loss;
            em.val_accuracy = ev.accuracy;
        }
        history.push_back(em);
        if (on_epoch) on_epoch(em);
    }
    return history;
}

// ---------------------------------------------------------------------------
// Weight file: "NSPCNN 1\n", u32 layer count, then per layer a u32 kind tag
// and its fields. Tensors are u32 rank, u32 dims, little-endian f32 values.

namespace detail {

class BinWriter {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_ += static_cast<char>((v >> (8 * i)) & 0xff);
    }
    void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
    void tensor(const Tensor<float>& t) {
        u32(static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) u32(static_cast<std::uint32_t>(d));
        for (float v : t.values()) f32(v);
    }
    std::string buf_;
};

class BinReader {
public:
    explicit BinReader(std::string_view s) : s_(s) {}
    std::uint32_t u32() {
        if (pos_ + 4 > s_.size()) throw FormatError("CNN weights: truncated file at byte " + std::to_string(pos_));
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
        pos_ += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    Tensor<float> tensor(const Shape& expected) {
        const auto rank = u32();
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(u32());
        if (shape != expected)
            throw FormatError("CNN weights: tensor shape " + shape_string(shape) + " does not match layer " +
                              shape_string(expected));
        std::vector<float> data(shape_size(shape));
        for (auto& v : data) v = f32();
        return Tensor<float>(shape, std::move(data));
    }
    bool done() const { return pos_ == s_.size(); }
    std::size_t pos_ = 0;

private:
    std::string_view s_;
};

}  // namespace detail

inline constexpr std::string_view kCnnMagic = "NSPCNN 1\n";

inline std::string serialize_cnn(const CnnModel& m) {
    detail::BinWriter w;
    w.buf_ = std::string(kCnnMagic);
    w.u32(static_cast<std::uint32_t>(m.input_size));
    w.u32(static_cast<std::uint32_t>(m.net.size() + 1));  // + trailing SoftMax record
    for (std::size_t i = 0; i < m.net.size(); ++i) {
        const auto& l = m.net.layer(i);
        w.u32(static_cast<std::uint32_t>(l.kind()));
        switch (l.kind()) {
            case LayerKind::Conv2d: {
                const auto& c = static_cast<const Conv2d<float>&>(l);
                for (auto v : {c.in_channels(), c.out_channels(), c.kernel(), c.stride(), c.pad()})
                    w.u32(static_cast<std::uint32_t>(v));
                w.tensor(c.weight());
                w.tensor(c.bias());
                break;
            }
            case LayerKind::BatchNorm: {
                const auto& b = static_cast<const BatchNorm<float>&>(l);
                w.u32(static_cast<std::uint32_t>(b.features()));
                w.f32(b.eps());
                w.f32(b.momentum());
                w.tensor(b.gamma());
                w.tensor(b.beta());
                w.tensor(b.running_mean());
                w.tensor(b.running_var());
                break;
            }
            case LayerKind::MaxPool2d: {
                const auto& p = static_cast<const MaxPool2d<float>&>(l);
                w.u32(static_cast<std::uint32_t>(p.window()));
                w.u32(static_cast<std::uint32_t>(p.stride()));
                break;
            }
            case LayerKind::Linear: {
                const auto& f = static_cast<const Linear<float>&>(l);
                w.u32(static_cast<std::uint32_t>(f.in_features()));
                w.u32(static_cast<std::uint32_t>(f.out_features()));
                w.tensor(f.weight());
                w.tensor(f.bias());
                break;
            }
            case LayerKind::Dropout:
                w.f32(static_cast<float>(static_cast<const Dropout<float>&>(l).rate()));
                break;
            case LayerKind::ReLU:
            case LayerKind::Flatten:
            case LayerKind::Softmax:
                break;
        }
    }
    w.u32(static_cast<std::uint32_t>(LayerKind::Softmax));
    return w.buf_;
}

inline CnnModel deserialize_cnn(std::string_view bytes) {
    if (bytes.substr(0, kCnnMagic.size()) != kCnnMagic)
        throw FormatError("CNN weights: unsupported format or version (expected header 'NSPCNN 1')");
    detail::BinReader r(bytes.substr(kCnnMagic.size()));
    CnnModel m;
    m.input_size = r.u32();
    const auto n = r.u32();
    bool saw_softmax = false;
    bool first_conv = true;
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto kind = static_cast<LayerKind>(r.u32());
        if (saw_softmax) throw FormatError("CNN weights: layers after SoftMax");
        switch (kind) {
            case LayerKind::Conv2d: {
                const auto ic = r.u32(), oc = r.u32(), k = r.u32(), s = r.u32(), p = r.u32();
                auto& c = m.net.add<Conv2d<float>>(ic, oc, k, s, p);
                c.weight() = r.tensor({oc, ic, k, k});
                c.bias() = r.tensor({oc});
                if (first_conv) c.set_input_grad(false);
                first_conv = false;
                break;
            }
            case LayerKind::BatchNorm: {
                const auto c = r.u32();
                const float eps = r.f32(), mom = r.f32();
                auto& b = m.net.add<BatchNorm<float>>(c, eps, mom);
                b.gamma() = r.tensor({c});
                b.beta() = r.tensor({c});
                b.running_mean() = r.tensor({c});
                b.running_var() = r.tensor({c});
                m.num_classes = c;
                break;
            }
            case LayerKind::ReLU: m.net.add<ReLU<float>>(); break;
            case LayerKind::MaxPool2d: {
                const auto k = r.u32(), s = r.u32();
                m.net.add<MaxPool2d<float>>(k, s);
                break;
            }
            case LayerKind::Flatten: m.net.add<Flatten<float>>(); break;
            case LayerKind::Linear: {
                const auto in = r.u32(), out = r.u32();
                auto& f = m.net.add<Linear<float>>(in, out);
                f.weight() = r.tensor({out, in});
                f.bias() = r.tensor({out});
                m.num_classes = out;
                break;
            }
            case LayerKind::Dropout: m.net.add<Dropout<float>>(r.f32()); break;
            case LayerKind::Softmax: saw_softmax = true; break;
            default: throw FormatError("CNN weights: unknown layer kind " + std::to_string(static_cast<std::uint32_t>(kind)));
        }
    }
    if (!saw_softmax) throw FormatError("CNN weights: missing SoftMax record");
    if (!r.done()) throw FormatError("CNN weights: trailing bytes after layer records");
    return m;
}

inline void save_cnn(const CnnModel& m, const std::filesystem::path& path) { write_file_atomic(path, serialize_cnn(m)); }

inline CnnModel load_cnn(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return deserialize_cnn(bytes);
}

// ---------------------------------------------------------------------------
// Gradient checking (double precision)

/// Scalar objective of a network output: returns the loss and writes the
/// gradient with respect to the output.
using Objective = std::function<double(const Tensor<double>& out, Tensor<double>& grad)>;

/// Softmax + cross-entropy on logits with the fused (p - y) gradient, summed
/// over the batch.
inline Objective cross_entropy_objective(std::vector<int> targets) {
    return [targets](const Tensor<double>& out, Tensor<double>& grad) {
        const double n = static_cast<double>(out.dim(0));
        const double loss = softmax_cross_entropy(out, targets, &grad);
        for (auto& g : grad.values()) g *= n;
        return loss * n;
    };
}

/// Fixed random projection sum(w_i * out_i).
inline Objective projection_objective(Tensor<double> weights) {
    return [weights](const Tensor<double>& out, Tensor<double>& grad) {
        if (out.size() != weights.size()) throw InvalidArgument("projection_objective: size mismatch");
        grad = weights.reshaped(out.shape());
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) s += weights[i] * out[i];
        return s;
    };
}

struct GradientCheckResult {
    double max_rel_error = 0.0;
    std::string worst;  ///< "param <i>[<j>]" or "input[<j>]"
    std::size_t checked = 0;
    std::size_t skipped = 0;  ///< entries whose +-eps probe crossed a ReLU or pooling branch
};

inline constexpr double kGradCheckStep = 1e-4;
inline constexpr double kGradCheckFloor = 1e-6;

/// Compares analytic gradients of `objective(net(input))` with central finite
/// differences (fourth order) for every parameter and every input element. Relative error is
/// |a - n| / max(|a|, |n|, floor). Entries whose probes change the network's
/// branch pattern straddle a kink and are skipped. The dropout generator is
/// re-seeded before every evaluation so masks stay fixed.
inline GradientCheckResult gradient_check(Network<double>& net, const Tensor<double>& input, const Objective& objective,
                                          double eps = kGradCheckStep, Mode mode = Mode::Train, std::uint64_t seed = 1,
                                          double floor = kGradCheckFloor) {
    std::uint64_t signature = 0;
    auto loss_at = [&](const Tensor<double>& x) {
        Rng rng(seed);
        const auto out = net.forward_for_backward(x, mode, rng);
        signature = net.branch_signature();
        Tensor<double> g;
        return objective(out, g);
    };
    Rng rng(seed);
    const auto out = net.forward_for_backward(input, mode, rng);
    const auto base_signature = net.branch_signature();
    Tensor<double> gout;
    objective(out, gout);
    const auto gin = net.backward(gout);
    auto params = net.params();
    std::vector<Tensor<double>> analytic;
    for (auto& p : params) analytic.push_back(*p.grad);

    GradientCheckResult res;
    // fourth-order central difference over probes at +-eps and +-2 eps
    auto probe = [&](double& slot, const Tensor<double>& x, const std::string& where, double a) {
        const double orig = slot;
        double f[4];
        bool smooth = true;
        const double steps[4] = {eps, -eps, 2 * eps, -2 * eps};
        for (int k = 0; k < 4; ++k) {
            slot = orig + steps[k];
            f[k] = loss_at(x);
            smooth = smooth && signature == base_signature;
        }
        slot = orig;
        if (!smooth) {
            ++res.skipped;
            return;
        }
        const double n = (8.0 * (f[0] - f[1]) - (f[2] - f[3])) / (12.0 * eps);
        const double rel = std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
        ++res.checked;
        if (rel > res.max_rel_error) {
            res.max_rel_error = rel;
            res.worst = where;
        }
    };
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& w = *params[p].value;
        for (std::size_t j = 0; j < w.size(); ++j)
            probe(w[j], input, "param " + std::to_string(p) + "[" + std::to_string(j) + "]", analytic[p][j]);
    }
    Tensor<double> x = input;
    for (std::size_t j = 0; j < x.size(); ++j) probe(x[j], x, "input[" + std::to_string(j) + "]", gin[j]);
    return res;
}

}  // namespace neurostage

#endif
