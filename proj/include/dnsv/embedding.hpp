#pragma once

#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dnsv/binio.hpp"
#include "dnsv/errors.hpp"
#include "dnsv/features.hpp"
#include "dnsv/model.hpp"

namespace dnsv {

// Fixed-dimensional utterance vectors keyed by utterance id. Keys are kept
// sorted, so the content never depends on extraction order.
struct EmbeddingSet {
    std::map<std::string, std::vector<double>> entries;
    std::size_t dim = 0;
    nn::TapPoint tap_point = nn::TapPoint::Penultimate;
    std::string model_fingerprint;
};

// Forwards the whole utterance (no cropping) in eval mode and taps the
// requested layer. post_norm requires the model's normalization layer.
inline std::vector<double> extract(const nn::Model<double>& model, const FeatureMatrix& features,
                                   nn::TapPoint tap) {
    if (features.num_frames == 0) throw UtteranceTooShort("no frames for " + features.utt_id);
    if (features.dim != model.arch().feature_dim)
        throw ConfigError("feature dim " + std::to_string(features.dim) +
                          " != model feature dim " + std::to_string(model.arch().feature_dim));
    nn::Tensor<double> x({1, features.num_frames, features.dim});
    std::copy(features.values.begin(), features.values.end(), x.data());
    const auto v = model.forward_to(model.tap_layer_index(tap), x);
    std::vector<double> out(v.data(), v.data() + v.size());
    for (const double e : out)
        if (!std::isfinite(e)) throw Error("NonFiniteEmbedding", "embedding for " +
                                                                      features.utt_id +
                                                                      " is not finite");
    return out;
}

inline EmbeddingSet extract_all(const nn::Model<double>& model,
                                const std::vector<FeatureMatrix>& features, nn::TapPoint tap,
                                unsigned jobs = 1) {
    EmbeddingSet set;
    set.dim = model.arch().embedding_dim;
    set.tap_point = tap;
    set.model_fingerprint = nn::fingerprint(model);

    std::vector<std::vector<double>> vecs(features.size());
    if (jobs <= 1 || features.size() < 2) {
        for (std::size_t i = 0; i < features.size(); ++i) vecs[i] = extract(model, features[i], tap);
    } else {
        // The model is read-only here; utterances are independent.
        std::vector<std::thread> pool;
        std::atomic<std::size_t> next{0};
        std::vector<std::exception_ptr> errs(jobs);
        for (unsigned w = 0; w < jobs; ++w)
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t i = next++; i < features.size(); i = next++)
                        vecs[i] = extract(model, features[i], tap);
                } catch (...) {
                    errs[w] = std::current_exception();
                }
            });
        for (auto& t : pool) t.join();
        for (const auto& e : errs)
            if (e) std::rethrow_exception(e);
    }
    for (std::size_t i = 0; i < features.size(); ++i)
        set.entries[features[i].utt_id] = std::move(vecs[i]);
    return set;
}

inline constexpr char kEmbeddingBinaryMagic[] = "EMBB1";

// Text form: one "<utt_id> <v1> ... <vD>" line per utterance. Binary form:
// magic "EMBB1", then per entry id, u32 D, D float64 values.
inline void save_embeddings(const std::string& path, const EmbeddingSet& set,
                            bool binary = false) {
    if (binary) {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw IoError("cannot write embedding file: " + path);
        os.write(kEmbeddingBinaryMagic, 5);
        for (const auto& [id, v] : set.entries) {
            write_string(os, id);
            write_u32(os, static_cast<std::uint32_t>(v.size()));
            os.write(reinterpret_cast<const char*>(v.data()),
                     static_cast<std::streamsize>(v.size() * sizeof(double)));
        }
        if (!os) throw IoError("failed writing embedding file: " + path);
        return;
    }
    std::ofstream os(path);
    if (!os) throw IoError("cannot write embedding file: " + path);
    for (const auto& [id, v] : set.entries) {
        os << id;
        for (const double e : v) os << ' ' << format_double(e);
        os << '\n';
    }
    if (!os) throw IoError("failed writing embedding file: " + path);
}

inline EmbeddingSet load_embeddings(const std::string& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw IoError("cannot open embedding file: " + path);
    char magic[5] = {};
    probe.read(magic, 5);
    EmbeddingSet set;
    if (probe.gcount() == 5 && std::string(magic, 5) == kEmbeddingBinaryMagic) {
        std::ifstream is(path, std::ios::binary);
        is.seekg(5);
        while (is.peek() != EOF) {
            const std::string id = read_string(is);
            const std::uint32_t d = read_u32(is);
            std::vector<double> v(d);
            if (!is.read(reinterpret_cast<char*>(v.data()),
                         static_cast<std::streamsize>(d * sizeof(double))))
                throw IoError("truncated embedding file: " + path);
            set.entries[id] = std::move(v);
        }
    } else {
        std::ifstream is(path);
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            std::istringstream ls(line);
            std::string id;
            ls >> id;
            std::vector<double> v;
            double x;
            while (ls >> x) v.push_back(x);
            if (v.empty()) throw IoError("bad embedding line: " + line);
            set.entries[id] = std::move(v);
        }
    }
    if (!set.entries.empty()) set.dim = set.entries.begin()->second.size();
    for (const auto& [id, v] : set.entries)
        if (v.size() != set.dim) throw IoError("inconsistent embedding dims in " + path);
    return set;
}

}  // namespace dnsv
