#pragma once

#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dnsv/errors.hpp"
#include "dnsv/rng.hpp"
#include "dnsv/tensor.hpp"

namespace dnsv::nn {

using json = nlohmann::json;

// A layer's forward pass is const and, with cache == nullptr, pure; the same
// model can therefore run eval-mode forwards from several threads. Training
// passes a cache slot that backward() consumes. Parameter gradients are
// accumulated into an externally owned span aligned with params().
template <typename S>
class Layer {
public:
    using Cache = std::vector<Tensor<S>>;

    virtual ~Layer() = default;

    virtual Tensor<S> forward(const Tensor<S>& x, Cache* cache) const = 0;
    virtual Tensor<S> backward(const Tensor<S>& dy, const Cache& cache,
                               std::span<Tensor<S>> param_grads) const = 0;

    virtual std::vector<Tensor<S>*> params() { return {}; }
    virtual std::vector<const Tensor<S>*> params() const { return {}; }
    std::size_t n_params() const { return const_cast<Layer*>(this)->params().size(); }

    virtual std::string kind() const = 0;
    virtual json config() const { return {{"kind", kind()}}; }
};

// Kaiming-uniform bound for ReLU fan-in.
template <typename S>
void kaiming_uniform(Tensor<S>& w, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < w.size(); ++i)
        w[i] = static_cast<S>((2.0 * rng.uniform() - 1.0) * bound);
}

// Fully connected y = x W^T + b, applied to the last axis; all leading axes
// are treated as batch rows, so the same layer serves frame-level and
// utterance-level stages.
template <typename S>
class Dense : public Layer<S> {
public:
    using typename Layer<S>::Cache;

    Dense(std::size_t in_dim, std::size_t out_dim)
        : in_(in_dim), out_(out_dim), w_({out_dim, in_dim}), b_({out_dim}) {}

    void init(Rng& rng) { kaiming_uniform(w_, in_, rng); }

    Tensor<S> forward(const Tensor<S>& x, Cache* cache) const override {
        if (x.shape().back() != in_)
            throw ConfigError("dense: input dim " + std::to_string(x.shape().back()) +
                              " != " + std::to_string(in_));
        auto out_shape = x.shape();
        out_shape.back() = out_;
        Tensor<S> y(out_shape);
        const std::size_t rows = x.leading_rows();
        y.mat(rows, out_).noalias() = x.mat(rows, in_) * w_.mat(out_, in_).transpose();
        y.mat(rows, out_).rowwise() += b_.mat(1, out_).row(0);
        if (cache) *cache = {x};
        return y;
    }

    Tensor<S> backward(const Tensor<S>& dy, const Cache& cache,
                       std::span<Tensor<S>> pg) const override {
        const Tensor<S>& x = cache[0];
        const std::size_t rows = x.leading_rows();
        Tensor<S> dx(x.shape());
        dx.mat(rows, in_).noalias() = dy.mat(rows, out_) * w_.mat(out_, in_);
        pg[0].mat(out_, in_).noalias() += dy.mat(rows, out_).transpose() * x.mat(rows, in_);
        pg[1].mat(1, out_) += dy.mat(rows, out_).colwise().sum();
        return dx;
    }

    std::vector<Tensor<S>*> params() override { return {&w_, &b_}; }
    std::vector<const Tensor<S>*> params() const override { return {&w_, &b_}; }
    std::string kind() const override { return "dense"; }
    json config() const override { return {{"kind", "dense"}, {"in", in_}, {"out", out_}}; }

    std::size_t in_dim() const { return in_; }
    std::size_t out_dim() const { return out_; }
    Tensor<S>& weight() { return w_; }
    Tensor<S>& bias() { return b_; }

private:
    std::size_t in_, out_;
    Tensor<S> w_, b_;
};

template <typename S>
class ReLU : public Layer<S> {
public:
    using typename Layer<S>::Cache;

    Tensor<S> forward(const Tensor<S>& x, Cache* cache) const override {
        Tensor<S> y(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > S(0) ? x[i] : S(0);
        if (cache) *cache = {x};
        return y;
    }

    Tensor<S> backward(const Tensor<S>& dy, const Cache& cache,
                       std::span<Tensor<S>>) const override {
        const Tensor<S>& x = cache[0];
        Tensor<S> dx(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > S(0) ? dy[i] : S(0);
        return dx;
    }

    std::string kind() const override { return "relu"; }
};

// (M, T, D) -> (M, 1, D, T): turns a frame sequence into a one-channel image
// with frequency as height and time as width.
template <typename S>
class ToImage : public Layer<S> {
public:
    using typename Layer<S>::Cache;

    Tensor<S> forward(const Tensor<S>& x, Cache* cache) const override {
        if (x.rank() != 3) throw ConfigError("to_image expects rank-3 input");
        const std::size_t M = x.dim(0), T = x.dim(1), D = x.dim(2);
        Tensor<S> y({M, 1, D, T});
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t d = 0; d < D; ++d) y(m, 0, d, t) = x(m, t, d);
        (void)cache;
        return y;
    }

    Tensor<S> backward(const Tensor<S>& dy, const Cache&, std::span<Tensor<S>>) const override {
        const std::size_t M = dy.dim(0), D = dy.dim(2), T = dy.dim(3);
        Tensor<S> dx({M, T, D});
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t d = 0; d < D; ++d) dx(m, t, d) = dy(m, 0, d, t);
        return dx;
    }

    std::string kind() const override { return "to_image"; }
};

// 2D convolution over (M, C, H, W), square kernel, zero padding.
template <typename S>
class Conv2D : public Layer<S> {
public:
    using typename Layer<S>::Cache;

    Conv2D(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
           std::size_t pad)
        : ci_(in_ch), co_(out_ch), k_(kernel), stride_(stride), pad_(pad),
          w_({out_ch, in_ch, kernel, kernel}), b_({out_ch}) {}

    void init(Rng& rng) { kaiming_uniform(w_, ci_ * k_ * k_, rng); }

    static std::size_t out_extent(std::size_t in, std::size_t k, std::size_t stride,
                                  std::size_t pad) {
        return (in + 2 * pad - k) / stride + 1;
    }

    Tensor<S> forward(const Tensor<S>& x, Cache* cache) const override {
        if (x.rank() != 4 || x.dim(1) != ci_) throw ConfigError("conv2d: bad input shape");
        const std::size_t M = x.dim(0), H = x.dim(2), W = x.dim(3);
        const std::size_t Ho = out_extent(H, k_, stride_, pad_);
        const std::size_t Wo = out_extent(W, k_, stride_, pad_);
        Tensor<S> y({M, co_, Ho, Wo});
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t c = 0; c < co_; ++c)
                for (std::size_t i = 0; i < Ho; ++i)
                    for (std::size_t j = 0; j < Wo; ++j) {
                        S acc = b_[c];
                        for (std::size_t ci = 0; ci < ci_; ++ci)
                            for (std::size_t u = 0; u < k_; ++u) {
                                const std::ptrdiff_t hi =
                                    static_cast<std::ptrdiff_t>(i * stride_ + u) -
                                    static_cast<std::ptrdiff_t>(pad_);
                                if (hi < 0 || hi >= static_cast<std::ptrdiff_t>(H)) continue;
                                for (std::size_t v = 0; v < k_; ++v) {
                                    const std::ptrdiff_t wi =
                                        static_cast<std::ptrdiff_t>(j * stride_ + v) -
                                        static_cast<std::ptrdiff_t>(pad_);
                                    if (wi < 0 || wi >= static_cast<std::ptrdiff_t>(W)) continue;
                                    acc += w_(c, ci, u, v) *
                                           x(m, ci, static_cast<std::size_t>(hi),
                                             static_cast<std::size_t>(wi));
                                }
                            }
                        y(m, c, i, j) = acc;
                    }
        if (cache) *cache = {x};
        return y;
    }

    Tensor<S> backward(const Tensor<S>& dy, const Cache& cache,
                       std::span<Tensor<S>> pg) const override {
        const Tensor<S>& x = cache[0];
        const std::size_t M = x.dim(0), H = x.dim(2), W = x.dim(3);
        const std::size_t Ho = dy.dim(2), Wo = dy.dim(3);
        Tensor<S> dx(x.shape());
        Tensor<S>& dw = pg[0];
        Tensor<S>& db = pg[1];
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t c = 0; c < co_; ++c)
                for (std::size_t i = 0; i < Ho; ++i)
                    for (std::size_t j = 0; j < Wo; ++j) {
                        const S g = dy(m, c, i, j);
                        db[c] += g;
                        for (std::size_t ci = 0; ci < ci_; ++ci)
                            for (std::size_t u = 0; u < k_; ++u) {
                                const std::ptrdiff_t hi =
                                    static_cast<std::ptrdiff_t>(i * stride_ + u) -
                                    static_cast<std::ptrdiff_t>(pad_);
                                if (hi < 0 || hi >= static_cast<std::ptrdiff_t>(H)) continue;
                                for (std::size_t v = 0; v < k_; ++v) {
                                    const std::ptrdiff_t wi =
                                        static_cast<std::ptrdiff_t>(j * stride_ + v) -
                                        static_cast<std::ptrdiff_t>(pad_);
                                    if (wi < 0 || wi >= static_cast<std::ptrdiff_t>(W)) continue;
                                    dw(c, ci, u, v) += g * x(m, ci, static_cast<std::size_t>(hi),
                                                             static_cast<std::size_t>(wi));
                                    dx(m, ci, static_cast<std::size_t>(hi),
                                       static_cast<std::size_t>(wi)) += g * w_(c, ci, u, v);
                                }
                            }
                    }
        return dx;
    }

    std::vector<Tensor<S>*> params() override { return {&w_, &b_}; }
    std::vector<const Tensor<S>*> params() const override { return {&w_, &b_}; }
    std::string kind() const override { return "conv2d"; }
    json config() const override {
        return {{"kind", "conv2d"}, {"in", ci_},       {"out", co_},
                {"kernel", k_},     {"stride", stride_}, {"pad", pad_}};
    }

private:
    std::size_t ci_, co_, k_, stride_, pad_;
    Tensor<S> w_, b_;
};

// conv(3x3, stride s) -> ReLU -> conv(3x3) plus a skip path, ReLU after the
// add. The skip uses a 1x1 stride-s projection when shape changes.
template <typename S>
class ResidualBlock : public Layer<S> {
public:
    using typename Layer<S>::Cache;

    ResidualBlock(std::size_t in_ch, std::size_t out_ch, std::size_t stride)
        : conv1_(in_ch, out_ch, 3, stride, 1), conv2_(out_ch, out_ch, 3, 1, 1) {
        if (stride != 1 || in_ch != out_ch)
            proj_ = std::make_unique<Conv2D<S>>(in_ch, out_ch, 1, stride, 0);
    }

    void init(Rng& rng) {
        conv1_.init(rng);
        conv2_.init(rng);
        if (proj_) proj_->init(rng);
    }

    Tensor<S> forward(const Tensor<S>& x, Cache* cache) const override {
        Cache c1, c2, cp;
        Tensor<S> h1 = conv1_.forward(x, cache ? &c1 : nullptr);
        Tensor<S> a1(h1.shape());
        for (std::size_t i = 0; i < h1.size(); ++i) a1[i] = h1[i] > S(0) ? h1[i] : S(0);
        Tensor<S> h2 = conv2_.forward(a1, cache ? &c2 : nullptr);
        Tensor<S> skip = proj_ ? proj_->forward(x, cache ? &cp : nullptr) : x;
        Tensor<S> sum(h2.shape());
        for (std::size_t i = 0; i < h2.size(); ++i) sum[i] = h2[i] + skip[i];
        Tensor<S> y(sum.shape());
        for (std::size_t i = 0; i < sum.size(); ++i) y[i] = sum[i] > S(0) ? sum[i] : S(0);
        if (cache) {
            *cache = {std::move(c1[0]), std::move(h1), std::move(c2[0]), std::move(sum)};
            if (proj_) cache->push_back(std::move(cp[0]));
        }
        return y;
    }

    Tensor<S> backward(const Tensor<S>& dy, const Cache& cache,
                       std::span<Tensor<S>> pg) const override {
        const Tensor<S>& h1 = cache[1];
        const Tensor<S>& sum = cache[3];
        Tensor<S> dsum(dy.shape());
        for (std::size_t i = 0; i < dy.size(); ++i) dsum[i] = sum[i] > S(0) ? dy[i] : S(0);

        Cache c2 = {cache[2]};
        Tensor<S> da1 = conv2_.backward(dsum, c2, pg.subspan(2, 2));
        Tensor<S> dh1(da1.shape());
        for (std::size_t i = 0; i < da1.size(); ++i) dh1[i] = h1[i] > S(0) ? da1[i] : S(0);
        Cache c1 = {cache[0]};
        Tensor<S> dx = conv1_.backward(dh1, c1, pg.subspan(0, 2));

        if (proj_) {
            Cache cp = {cache[4]};
            dx += proj_->backward(dsum, cp, pg.subspan(4, 2));
        } else {
            dx += dsum;
        }
        return dx;
    }

    std::vector<Tensor<S>*> params() override {
        std::vector<Tensor<S>*> p = conv1_.params();
        for (auto* q : conv2_.params()) p.push_back(q);
        if (proj_)
            for (auto* q : proj_->params()) p.push_back(q);
        return p;
    }
    std::vector<const Tensor<S>*> params() const override {
        auto p = const_cast<ResidualBlock*>(this)->params();
        return {p.begin(), p.end()};
    }
    std::string kind() const override { return "residual"; }
    json config() const override {
        const auto c1 = conv1_.config();
        return {{"kind", "residual"},
                {"in", c1["in"]},
                {"out", c1["out"]},
                {"stride", c1["stride"]}};
    }

private:
    Conv2D<S> conv1_, conv2_;
    std::unique_ptr<Conv2D<S>> proj_;
};

// (M, T, H) -> (M, H), arithmetic mean over the time axis.
template <typename S>
class TemporalAvgPool : public Layer<S> {
public:
    using typename Layer<S>::Cache;

    Tensor<S> forward(const Tensor<S>& x, Cache* cache) const override {
        if (x.rank() != 3) throw ConfigError("temporal pool expects rank-3 input");
        const std::size_t M = x.dim(0), T = x.dim(1), H = x.dim(2);
        if (T == 0) throw ConfigError("temporal pool over zero frames");
        Tensor<S> y({M, H});
        const S inv = S(1) / static_cast<S>(T);
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t h = 0; h < H; ++h) y(m, h) += x(m, t, h) * inv;
        if (cache) {
            Tensor<S> t_carrier({1});
            t_carrier[0] = static_cast<S>(T);
            *cache = {std::move(t_carrier)};
        }
        return y;
    }

    Tensor<S> backward(const Tensor<S>& dy, const Cache& cache,
                       std::span<Tensor<S>>) const override {
        const std::size_t M = dy.dim(0), H = dy.dim(1);
        const std::size_t T = static_cast<std::size_t>(cache[0][0]);
        Tensor<S> dx({M, T, H});
        const S inv = S(1) / static_cast<S>(T);
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t h = 0; h < H; ++h) dx(m, t, h) = dy(m, h) * inv;
        return dx;
    }

    std::string kind() const override { return "temporal_avg_pool"; }
};

// (M, C, H, W) -> (M, C), mean over both spatial axes.
template <typename S>
class GlobalAvgPool : public Layer<S> {
public:
    using typename Layer<S>::Cache;

    Tensor<S> forward(const Tensor<S>& x, Cache* cache) const override {
        if (x.rank() != 4) throw ConfigError("global pool expects rank-4 input");
        const std::size_t M = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
        Tensor<S> y({M, C});
        const S inv = S(1) / static_cast<S>(H * W);
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t c = 0; c < C; ++c) {
                S acc = S(0);
                for (std::size_t i = 0; i < H; ++i)
                    for (std::size_t j = 0; j < W; ++j) acc += x(m, c, i, j);
                y(m, c) = acc * inv;
            }
        if (cache) {
            Tensor<S> hw({2});
            hw[0] = static_cast<S>(H);
            hw[1] = static_cast<S>(W);
            *cache = {std::move(hw)};
        }
        return y;
    }

    Tensor<S> backward(const Tensor<S>& dy, const Cache& cache,
                       std::span<Tensor<S>>) const override {
        const std::size_t M = dy.dim(0), C = dy.dim(1);
        const std::size_t H = static_cast<std::size_t>(cache[0][0]);
        const std::size_t W = static_cast<std::size_t>(cache[0][1]);
        Tensor<S> dx({M, C, H, W});
        const S inv = S(1) / static_cast<S>(H * W);
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t i = 0; i < H; ++i)
                    for (std::size_t j = 0; j < W; ++j) dx(m, c, i, j) = dy(m, c) * inv;
        return dx;
    }

    std::string kind() const override { return "global_avg_pool"; }
};

inline double softplus(double b) { return b > 30.0 ? b : std::log1p(std::exp(b)); }
inline double softplus_inverse(double a) {
    return a > 30.0 ? a : std::log(std::expm1(a));
}

// Projects each row onto the sphere of radius alpha: y = alpha * x / ||x||.
// In trainable mode alpha = softplus(beta) with beta the stored parameter,
// which keeps alpha > 0. A row norm at or below the guard is an error, not a
// clamp: collapse must surface.
template <typename S>
class L2NormScale : public Layer<S> {
public:
    using typename Layer<S>::Cache;

    static constexpr double kNormGuard = 1e-12;

    L2NormScale(bool trainable, double alpha_init) : trainable_(trainable) {
        if (alpha_init <= 0.0) throw ConfigError("alpha must be > 0");
        if (trainable_) {
            beta_ = Tensor<S>({1});
            beta_[0] = static_cast<S>(softplus_inverse(alpha_init));
        } else {
            fixed_alpha_ = alpha_init;
        }
    }

    double alpha() const {
        return trainable_ ? softplus(static_cast<double>(beta_[0])) : fixed_alpha_;
    }
    bool trainable() const { return trainable_; }

    Tensor<S> forward(const Tensor<S>& x, Cache* cache) const override {
        if (x.rank() != 2) throw ConfigError("l2norm_scale expects rank-2 input");
        const std::size_t M = x.dim(0), D = x.dim(1);
        const S a = static_cast<S>(alpha());
        Tensor<S> y({M, D});
        Tensor<S> norms({M});
        for (std::size_t m = 0; m < M; ++m) {
            double n2 = 0.0;
            for (std::size_t d = 0; d < D; ++d)
                n2 += static_cast<double>(x(m, d)) * static_cast<double>(x(m, d));
            const double n = std::sqrt(n2);
            if (!(n > kNormGuard))
                throw DegenerateNorm("embedding norm " + std::to_string(n) +
                                     " at or below guard " + std::to_string(kNormGuard));
            norms[m] = static_cast<S>(n);
            const S scale = a / static_cast<S>(n);
            for (std::size_t d = 0; d < D; ++d) y(m, d) = x(m, d) * scale;
        }
        if (cache) *cache = {x, std::move(norms)};
        return y;
    }

    // dx = (alpha/||x||) (dy - x (x.dy)/||x||^2);  dalpha = sum_m (x_m.dy_m)/||x_m||
    Tensor<S> backward(const Tensor<S>& dy, const Cache& cache,
                       std::span<Tensor<S>> pg) const override {
        const Tensor<S>& x = cache[0];
        const Tensor<S>& norms = cache[1];
        const std::size_t M = x.dim(0), D = x.dim(1);
        const S a = static_cast<S>(alpha());
        Tensor<S> dx({M, D});
        S dalpha = S(0);
        for (std::size_t m = 0; m < M; ++m) {
            const S n = norms[m];
            S xdy = S(0);
            for (std::size_t d = 0; d < D; ++d) xdy += x(m, d) * dy(m, d);
            const S radial = xdy / (n * n);
            const S scale = a / n;
            for (std::size_t d = 0; d < D; ++d)
                dx(m, d) = scale * (dy(m, d) - x(m, d) * radial);
            dalpha += xdy / n;
        }
        if (trainable_) {
            const double sig = 1.0 / (1.0 + std::exp(-static_cast<double>(beta_[0])));
            pg[0][0] += dalpha * static_cast<S>(sig);
        }
        return dx;
    }

    std::vector<Tensor<S>*> params() override {
        if (trainable_) return {&beta_};
        return {};
    }
    std::vector<const Tensor<S>*> params() const override {
        if (trainable_) return {&beta_};
        return {};
    }
    std::string kind() const override { return "l2norm_scale"; }
    json config() const override {
        return {{"kind", "l2norm_scale"},
                {"trainable", trainable_},
                {"alpha", trainable_ ? alpha() : fixed_alpha_}};
    }

private:
    bool trainable_;
    double fixed_alpha_ = 0.0;
    Tensor<S> beta_;  // unconstrained scalar, alpha = softplus(beta)
};

template <typename S>
struct CrossEntropyResult {
    double loss = 0.0;
    Tensor<S> dlogits;
};

// Mean softmax cross-entropy over the batch, stabilized by max subtraction.
// dlogits = (softmax - onehot) / M.
template <typename S>
CrossEntropyResult<S> cross_entropy(const Tensor<S>& logits, std::span<const int> labels) {
    const std::size_t M = logits.dim(0), C = logits.dim(1);
    if (labels.size() != M) throw ConfigError("label count != batch size");
    CrossEntropyResult<S> r;
    r.dlogits = Tensor<S>({M, C});
    const S invM = S(1) / static_cast<S>(M);
    double total = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
        const int c = labels[m];
        if (c < 0 || static_cast<std::size_t>(c) >= C)
            throw ConfigError("label " + std::to_string(c) + " out of range");
        S mx = logits(m, 0);
        for (std::size_t j = 1; j < C; ++j) mx = std::max(mx, logits(m, j));
        S z = S(0);
        for (std::size_t j = 0; j < C; ++j) z += std::exp(logits(m, j) - mx);
        const S logz = std::log(z) + mx;
        total += static_cast<double>(logz - logits(m, static_cast<std::size_t>(c)));
        for (std::size_t j = 0; j < C; ++j)
            r.dlogits(m, j) = std::exp(logits(m, j) - logz) * invM;
        r.dlogits(m, static_cast<std::size_t>(c)) -= invM;
    }
    r.loss = total / static_cast<double>(M);
    return r;
}

// Free-standing mean over the time axis of a single utterance, T x D -> D.
template <typename S>
std::vector<S> average_pool(const Tensor<S>& frames) {
    if (frames.rank() != 2 || frames.dim(0) == 0) throw ConfigError("average_pool needs T >= 1");
    const std::size_t T = frames.dim(0), D = frames.dim(1);
    std::vector<S> out(D, S(0));
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t d = 0; d < D; ++d) out[d] += frames(t, d);
    for (auto& v : out) v /= static_cast<S>(T);
    return out;
}

}  // namespace dnsv::nn
