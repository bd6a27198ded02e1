#pragma once

#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dnsv/binio.hpp"
#include "dnsv/errors.hpp"
#include "dnsv/layers.hpp"

namespace dnsv::nn {

enum class EncoderType { Tdnn, Cnn };
enum class AlphaMode { Fixed, Trainable };

// Network shape: encoder -> pool -> FC(embedding) -> [l2norm_scale] -> output FC.
struct ArchConfig {
    std::size_t feature_dim = 24;
    EncoderType encoder = EncoderType::Tdnn;
    std::vector<std::size_t> hidden = {64, 64};       // tdnn: frame-level FC widths
    std::vector<std::size_t> channels = {4, 8, 16, 32};  // cnn: channels per stage
    std::vector<std::size_t> blocks = {1, 1, 1, 1};      // cnn: residual blocks per stage
    std::size_t embedding_dim = 32;
    std::size_t num_classes = 0;
    bool normalize = true;
    AlphaMode alpha_mode = AlphaMode::Fixed;
    double alpha = 12.0;  // fixed value, or init when trainable

    json to_json() const {
        json j;
        j["feature_dim"] = feature_dim;
        j["encoder"] = encoder == EncoderType::Tdnn ? "tdnn" : "cnn";
        j["hidden"] = hidden;
        j["channels"] = channels;
        j["blocks"] = blocks;
        j["embedding_dim"] = embedding_dim;
        j["num_classes"] = num_classes;
        j["normalize"] = normalize;
        j["alpha_mode"] = alpha_mode == AlphaMode::Fixed ? "fixed" : "trainable";
        j["alpha"] = alpha;
        return j;
    }

    static ArchConfig from_json(const json& j) { return from_json(j, ArchConfig()); }

    // Fields absent from the JSON keep the values in `base`.
    static ArchConfig from_json(const json& j, ArchConfig base) {
        ArchConfig c = std::move(base);
        c.feature_dim = j.value("feature_dim", c.feature_dim);
        const std::string enc = j.value("encoder", "tdnn");
        if (enc == "tdnn")
            c.encoder = EncoderType::Tdnn;
        else if (enc == "cnn")
            c.encoder = EncoderType::Cnn;
        else
            throw ConfigError("unknown encoder type: " + enc);
        if (j.contains("hidden")) c.hidden = j["hidden"].get<std::vector<std::size_t>>();
        if (j.contains("channels")) c.channels = j["channels"].get<std::vector<std::size_t>>();
        if (j.contains("blocks")) c.blocks = j["blocks"].get<std::vector<std::size_t>>();
        c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
        c.num_classes = j.value("num_classes", c.num_classes);
        c.normalize = j.value("normalize", c.normalize);
        const std::string am = j.value("alpha_mode", "fixed");
        if (am == "fixed")
            c.alpha_mode = AlphaMode::Fixed;
        else if (am == "trainable")
            c.alpha_mode = AlphaMode::Trainable;
        else
            throw ConfigError("unknown alpha_mode: " + am);
        c.alpha = j.value("alpha", c.alpha);
        return c;
    }
};

enum class TapPoint { Penultimate, PostNorm };

inline std::string to_string(TapPoint t) {
    return t == TapPoint::Penultimate ? "penultimate" : "post_norm";
}

template <typename S>
class Model {
public:
    using Cache = std::vector<std::vector<Tensor<S>>>;

    Model() = default;

    explicit Model(const ArchConfig& cfg) : cfg_(cfg) {
        if (cfg.num_classes < 2) throw ConfigError("model needs num_classes >= 2");
        std::size_t d = cfg.feature_dim;
        if (cfg.encoder == EncoderType::Tdnn) {
            for (const std::size_t h : cfg.hidden) {
                layers_.push_back(std::make_unique<Dense<S>>(d, h));
                layers_.push_back(std::make_unique<ReLU<S>>());
                d = h;
            }
            layers_.push_back(std::make_unique<TemporalAvgPool<S>>());
        } else {
            if (cfg.channels.empty() || cfg.channels.size() != cfg.blocks.size())
                throw ConfigError("cnn preset needs matching channels/blocks lists");
            layers_.push_back(std::make_unique<ToImage<S>>());
            layers_.push_back(std::make_unique<Conv2D<S>>(1, cfg.channels[0], 3, 1, 1));
            layers_.push_back(std::make_unique<ReLU<S>>());
            std::size_t ch = cfg.channels[0];
            for (std::size_t stage = 0; stage < cfg.channels.size(); ++stage) {
                for (std::size_t b = 0; b < cfg.blocks[stage]; ++b) {
                    const std::size_t stride = (stage > 0 && b == 0) ? 2 : 1;
                    layers_.push_back(
                        std::make_unique<ResidualBlock<S>>(ch, cfg.channels[stage], stride));
                    ch = cfg.channels[stage];
                }
            }
            layers_.push_back(std::make_unique<GlobalAvgPool<S>>());
            d = ch;
        }
        layers_.push_back(std::make_unique<Dense<S>>(d, cfg.embedding_dim));
        embed_index_ = layers_.size() - 1;
        if (cfg.normalize) {
            layers_.push_back(std::make_unique<L2NormScale<S>>(
                cfg.alpha_mode == AlphaMode::Trainable, cfg.alpha));
            norm_index_ = static_cast<std::ptrdiff_t>(layers_.size()) - 1;
        }
        layers_.push_back(std::make_unique<Dense<S>>(cfg.embedding_dim, cfg.num_classes));
    }

    void init_params(Rng& rng) {
        for (auto& l : layers_) {
            if (auto* d = dynamic_cast<Dense<S>*>(l.get())) d->init(rng);
            if (auto* c = dynamic_cast<Conv2D<S>*>(l.get())) c->init(rng);
            if (auto* r = dynamic_cast<ResidualBlock<S>*>(l.get())) r->init(rng);
        }
    }

    const ArchConfig& arch() const { return cfg_; }
    std::size_t num_layers() const { return layers_.size(); }
    const Layer<S>& layer(std::size_t i) const { return *layers_[i]; }

    bool has_norm_layer() const { return norm_index_ >= 0; }
    double alpha() const {
        if (!has_norm_layer()) throw TapPointUnavailable("model has no normalization layer");
        return static_cast<const L2NormScale<S>&>(*layers_[static_cast<std::size_t>(norm_index_)])
            .alpha();
    }
    TapPoint default_tap() const {
        return has_norm_layer() ? TapPoint::PostNorm : TapPoint::Penultimate;
    }

    std::vector<Tensor<S>*> parameters() {
        std::vector<Tensor<S>*> ps;
        for (auto& l : layers_)
            for (auto* p : l->params()) ps.push_back(p);
        return ps;
    }
    std::vector<const Tensor<S>*> parameters() const {
        std::vector<const Tensor<S>*> ps;
        for (const auto& l : layers_)
            for (const auto* p : l->params()) ps.push_back(p);
        return ps;
    }

    std::vector<Tensor<S>> zero_grads() const {
        std::vector<Tensor<S>> gs;
        for (const auto* p : parameters()) gs.emplace_back(p->shape());
        return gs;
    }

    // Input is always (M, T, D). With cache == nullptr this is pure.
    Tensor<S> forward(const Tensor<S>& x, Cache* cache) const {
        if (cache) cache->assign(layers_.size(), {});
        Tensor<S> h = x;
        for (std::size_t i = 0; i < layers_.size(); ++i)
            h = layers_[i]->forward(h, cache ? &(*cache)[i] : nullptr);
        return h;
    }

    // Runs layers up to and including `last`, eval mode.
    Tensor<S> forward_to(std::size_t last, const Tensor<S>& x) const {
        Tensor<S> h = x;
        for (std::size_t i = 0; i <= last; ++i) h = layers_[i]->forward(h, nullptr);
        return h;
    }

    std::size_t tap_layer_index(TapPoint tap) const {
        if (tap == TapPoint::Penultimate) return embed_index_;
        if (!has_norm_layer())
            throw TapPointUnavailable("post_norm tap requested on a model without a "
                                      "normalization layer");
        return static_cast<std::size_t>(norm_index_);
    }

    // Accumulates parameter gradients (aligned with parameters()) and returns
    // the input gradient.
    Tensor<S> backward(const Cache& cache, const Tensor<S>& dlogits,
                       std::vector<Tensor<S>>& grads) const {
        Tensor<S> g = dlogits;
        std::size_t pend = grads.size();
        for (std::size_t i = layers_.size(); i-- > 0;) {
            const std::size_t np = layers_[i]->n_params();
            pend -= np;
            g = layers_[i]->backward(g, cache[i], std::span<Tensor<S>>(grads).subspan(pend, np));
        }
        return g;
    }

    template <typename S2>
    Model<S2> cast() const {
        Model<S2> m(cfg_);
        auto dst = m.parameters();
        auto src = parameters();
        for (std::size_t i = 0; i < src.size(); ++i) {
            auto converted = src[i]->template cast<S2>();
            dst[i]->storage() = converted.storage();
        }
        return m;
    }

private:
    ArchConfig cfg_;
    std::vector<std::unique_ptr<Layer<S>>> layers_;
    std::size_t embed_index_ = 0;
    std::ptrdiff_t norm_index_ = -1;
};

// 64-bit FNV-1a over the architecture plus parameter bytes. Identifies which
// model produced a set of embeddings.
template <typename S>
std::string fingerprint(const Model<S>& model) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ull;
        }
    };
    const std::string arch = model.arch().to_json().dump();
    mix(arch.data(), arch.size());
    for (const auto* p : model.parameters()) {
        for (std::size_t i = 0; i < p->size(); ++i) {
            const double v = static_cast<double>((*p)[i]);
            mix(&v, sizeof v);
        }
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline constexpr char kCheckpointMagic[] = "DNSV1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Checkpoint: magic "DNSV1", u32 version, JSON architecture blob, then each
// parameter tensor as u32 rank, u64 dims, float64 values. A JSON sidecar
// (<path>.json) duplicates the architecture for human inspection.
template <typename S>
void save_checkpoint(const std::string& path, const Model<S>& model,
                     const json& extra_sidecar = json::object()) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint: " + path);
    os.write(kCheckpointMagic, 5);
    write_u32(os, kCheckpointVersion);
    write_string(os, model.arch().to_json().dump());
    const auto params = model.parameters();
    write_u32(os, static_cast<std::uint32_t>(params.size()));
    for (const auto* p : params) {
        write_u32(os, static_cast<std::uint32_t>(p->rank()));
        for (const std::size_t d : p->shape()) write_u64(os, d);
        for (std::size_t i = 0; i < p->size(); ++i) write_f64(os, static_cast<double>((*p)[i]));
    }
    if (!os) throw IoError("failed writing checkpoint: " + path);

    json side = extra_sidecar;
    side["format"] = kCheckpointMagic;
    side["version"] = kCheckpointVersion;
    side["arch"] = model.arch().to_json();
    side["fingerprint"] = fingerprint(model);
    json layers = json::array();
    for (std::size_t i = 0; i < model.num_layers(); ++i) layers.push_back(model.layer(i).config());
    side["layers"] = layers;
    std::ofstream js(path + ".json");
    if (!js) throw IoError("cannot write checkpoint sidecar: " + path + ".json");
    js << side.dump(2) << '\n';
}

inline Model<double> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    char magic[5];
    if (!is.read(magic, 5) || std::string(magic, 5) != kCheckpointMagic)
        throw IoError("not a model checkpoint: " + path);
    const std::uint32_t version = read_u32(is);
    if (version != kCheckpointVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    const json arch = json::parse(read_string(is));
    Model<double> model(ArchConfig::from_json(arch));
    auto params = model.parameters();
    const std::uint32_t n = read_u32(is);
    if (n != params.size()) throw IoError("checkpoint parameter count mismatch");
    for (auto* p : params) {
        const std::uint32_t rank = read_u32(is);
        if (rank != p->rank()) throw IoError("checkpoint parameter rank mismatch");
        for (std::size_t d = 0; d < rank; ++d)
            if (read_u64(is) != p->shape()[d]) throw IoError("checkpoint parameter shape mismatch");
        for (std::size_t i = 0; i < p->size(); ++i) (*p)[i] = read_f64(is);
    }
    return model;
}

}  // namespace dnsv::nn
