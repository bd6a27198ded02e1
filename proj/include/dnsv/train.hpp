#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dnsv/errors.hpp"
#include "dnsv/features.hpp"
#include "dnsv/model.hpp"

namespace dnsv::nn {

struct TrainConfig {
    std::size_t batch_size = 128;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::vector<double> learning_rates = {0.1, 0.01, 0.001};
    // The rate drops to the next entry once the epoch-mean loss has improved
    // by less than plateau_rel_improvement (relative) for plateau_epochs
    // consecutive epochs.
    int plateau_epochs = 3;
    double plateau_rel_improvement = 0.01;
    std::size_t crop_min = 300;
    std::size_t crop_max = 800;
    std::size_t epochs = 15;
    std::uint64_t rng_seed = 1234;
    std::string dtype = "float64";  // or "float32"

    json to_json() const {
        return {{"batch_size", batch_size},
                {"momentum", momentum},
                {"weight_decay", weight_decay},
                {"learning_rates", learning_rates},
                {"plateau_epochs", plateau_epochs},
                {"plateau_rel_improvement", plateau_rel_improvement},
                {"crop_min", crop_min},
                {"crop_max", crop_max},
                {"epochs", epochs},
                {"rng_seed", rng_seed},
                {"dtype", dtype}};
    }

    static TrainConfig from_json(const json& j) { return from_json(j, TrainConfig()); }

    // Fields absent from the JSON keep the values in `base`.
    static TrainConfig from_json(const json& j, TrainConfig base) {
        TrainConfig c = std::move(base);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.momentum = j.value("momentum", c.momentum);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        if (j.contains("learning_rates"))
            c.learning_rates = j["learning_rates"].get<std::vector<double>>();
        c.plateau_epochs = j.value("plateau_epochs", c.plateau_epochs);
        c.plateau_rel_improvement = j.value("plateau_rel_improvement", c.plateau_rel_improvement);
        c.crop_min = j.value("crop_min", c.crop_min);
        c.crop_max = j.value("crop_max", c.crop_max);
        c.epochs = j.value("epochs", c.epochs);
        c.rng_seed = j.value("rng_seed", c.rng_seed);
        c.dtype = j.value("dtype", c.dtype);
        c.validate();
        return c;
    }

    void validate() const {
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("need 0 <= momentum < 1");
        if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
        if (learning_rates.empty()) throw ConfigError("need at least one learning rate");
        if (crop_min > crop_max) throw ConfigError("need crop_min <= crop_max");
        if (crop_min == 0) throw ConfigError("crop_min must be >= 1");
        if (dtype != "float64" && dtype != "float32")
            throw ConfigError("dtype must be float64 or float32");
    }
};

struct EpochStats {
    std::size_t epoch = 0;
    double loss = 0.0;
    double accuracy = 0.0;
    double learning_rate = 0.0;
    std::optional<double> alpha;
};

struct TrainStats {
    std::vector<EpochStats> epochs;

    double final_loss() const { return epochs.empty() ? 0.0 : epochs.back().loss; }

    json to_json() const {
        json rows = json::array();
        for (const auto& e : epochs) {
            json r = {{"epoch", e.epoch},
                      {"loss", e.loss},
                      {"accuracy", e.accuracy},
                      {"learning_rate", e.learning_rate}};
            if (e.alpha) r["alpha"] = *e.alpha;
            rows.push_back(r);
        }
        return rows;
    }
};

// v <- momentum * v - lr * (g + weight_decay * theta);  theta <- theta + v
template <typename S>
void sgd_step(std::span<Tensor<S>* const> params, std::span<const Tensor<S>> grads,
              std::span<Tensor<S>> velocity, double lr, double momentum, double weight_decay) {
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor<S>& theta = *params[p];
        const Tensor<S>& g = grads[p];
        Tensor<S>& v = velocity[p];
        const S mu = static_cast<S>(momentum);
        const S eta = static_cast<S>(lr);
        const S wd = static_cast<S>(weight_decay);
        for (std::size_t i = 0; i < theta.size(); ++i) {
            v[i] = mu * v[i] - eta * (g[i] + wd * theta[i]);
            theta[i] += v[i];
        }
    }
}

// T >= L: contiguous random crop. T < L: wrap-around tiling from a random
// start, so rows repeat with period T.
template <typename S>
void crop_or_extend_into(const FeatureMatrix& src, std::size_t L, Rng& rng, Tensor<S>& dst,
                         std::size_t batch_row) {
    const std::size_t T = src.num_frames;
    const std::size_t D = src.dim;
    const std::size_t start = static_cast<std::size_t>(
        T >= L ? rng.uniform_int(0, static_cast<std::int64_t>(T - L))
               : rng.uniform_int(0, static_cast<std::int64_t>(T) - 1));
    for (std::size_t t = 0; t < L; ++t) {
        const std::size_t s = (start + t) % T;
        for (std::size_t d = 0; d < D; ++d)
            dst(batch_row, t, d) = static_cast<S>(src.at(s, d));
    }
}

template <typename S>
Tensor<S> crop_or_extend(const FeatureMatrix& src, std::size_t L, Rng& rng) {
    Tensor<S> out({1, L, src.dim});
    crop_or_extend_into(src, L, rng, out, 0);
    return out.reshaped({L, src.dim});
}

struct Dataset {
    std::vector<FeatureMatrix> utterances;
    std::vector<int> labels;                // class index per utterance
    std::vector<std::string> class_names;   // sorted speaker ids

    std::size_t num_classes() const { return class_names.size(); }
};

// Joins a feature list with utt->speaker labels; class indices follow the
// sorted order of speaker ids.
inline Dataset make_dataset(std::vector<FeatureMatrix> feats,
                            const std::vector<std::pair<std::string, std::string>>& utt2spk) {
    std::map<std::string, std::string> spk_of;
    for (const auto& [utt, spk] : utt2spk) spk_of[utt] = spk;
    std::map<std::string, int> index_of;
    for (const auto& [utt, spk] : spk_of) {
        (void)utt;
        index_of.emplace(spk, 0);
    }
    {
        int next = 0;
        for (auto& [spk, idx] : index_of) idx = next++;
    }
    Dataset ds;
    ds.class_names.resize(index_of.size());
    for (const auto& [spk, idx] : index_of) ds.class_names[static_cast<std::size_t>(idx)] = spk;
    for (auto& f : feats) {
        const auto it = spk_of.find(f.utt_id);
        if (it == spk_of.end()) throw TrainingDataError("no speaker label for " + f.utt_id);
        ds.labels.push_back(index_of.at(it->second));
        ds.utterances.push_back(std::move(f));
    }
    return ds;
}

template <typename S>
struct TrainResult {
    Model<S> model;
    TrainStats stats;
};

// Mini-batch SGD with momentum and weight decay over randomly cropped
// fixed-length segments. Deterministic for a given seed: one Rng drives
// init, shuffling, crop lengths and offsets in a fixed order.
template <typename S>
TrainResult<S> train(const TrainConfig& cfg, const ArchConfig& arch, const Dataset& data) {
    cfg.validate();
    if (data.num_classes() < 2) throw TrainingDataError("need at least 2 speakers");
    if (data.utterances.empty()) throw TrainingDataError("empty training set");
    for (const auto& f : data.utterances)
        if (f.dim != arch.feature_dim)
            throw ConfigError("feature dim " + std::to_string(f.dim) +
                              " != model feature dim " + std::to_string(arch.feature_dim));

    ArchConfig arch_full = arch;
    arch_full.num_classes = data.num_classes();

    Rng rng(cfg.rng_seed);
    TrainResult<S> result{Model<S>(arch_full), {}};
    Model<S>& model = result.model;
    model.init_params(rng);

    auto params = model.parameters();
    std::vector<Tensor<S>> velocity;
    for (const auto* p : params) velocity.emplace_back(p->shape());

    std::vector<std::size_t> order(data.utterances.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::size_t lr_index = 0;
    int plateau_count = 0;
    double prev_loss = -1.0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        const double lr = cfg.learning_rates[lr_index];

        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            const std::size_t M = std::min(cfg.batch_size, order.size() - begin);
            const std::size_t L = static_cast<std::size_t>(
                rng.uniform_int(static_cast<std::int64_t>(cfg.crop_min),
                                static_cast<std::int64_t>(cfg.crop_max)));
            Tensor<S> batch({M, L, arch.feature_dim});
            std::vector<int> labels(M);
            for (std::size_t m = 0; m < M; ++m) {
                const std::size_t idx = order[begin + m];
                crop_or_extend_into(data.utterances[idx], L, rng, batch, m);
                labels[m] = data.labels[idx];
            }

            typename Model<S>::Cache cache;
            Tensor<S> logits;
            try {
                logits = model.forward(batch, &cache);
            } catch (const DegenerateNorm& e) {
                throw DegenerateNorm("epoch " + std::to_string(epoch) + ", step " +
                                     std::to_string(begin / cfg.batch_size) + ": " + e.what());
            }
            auto ce = cross_entropy<S>(logits, labels);
            if (!std::isfinite(ce.loss))
                throw Error("NanLoss", "non-finite loss at epoch " + std::to_string(epoch) +
                                           ", step " + std::to_string(begin / cfg.batch_size));
            loss_sum += ce.loss * static_cast<double>(M);
            for (std::size_t m = 0; m < M; ++m) {
                std::size_t argmax = 0;
                for (std::size_t c = 1; c < arch_full.num_classes; ++c)
                    if (logits(m, c) > logits(m, argmax)) argmax = c;
                if (static_cast<int>(argmax) == labels[m]) ++correct;
            }

            auto grads = model.zero_grads();
            model.backward(cache, ce.dlogits, grads);
            sgd_step<S>(params, grads, velocity, lr, cfg.momentum, cfg.weight_decay);
        }

        EpochStats es;
        es.epoch = epoch;
        es.loss = loss_sum / static_cast<double>(order.size());
        es.accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
        es.learning_rate = lr;
        if (model.has_norm_layer()) es.alpha = model.alpha();
        result.stats.epochs.push_back(es);

        if (prev_loss >= 0.0) {
            const double rel = (prev_loss - es.loss) / std::max(prev_loss, 1e-12);
            plateau_count = rel < cfg.plateau_rel_improvement ? plateau_count + 1 : 0;
            if (plateau_count >= cfg.plateau_epochs && lr_index + 1 < cfg.learning_rates.size()) {
                ++lr_index;
                plateau_count = 0;
            }
        }
        prev_loss = es.loss;
    }
    return result;
}

}  // namespace dnsv::nn
