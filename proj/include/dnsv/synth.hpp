#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dnsv/errors.hpp"
#include "dnsv/features.hpp"
#include "dnsv/metrics.hpp"
#include "dnsv/rng.hpp"

namespace dnsv::synth {

using json = nlohmann::json;

// Synthetic speaker corpus: speaker means drawn from N(0, between^2 I), each
// frame = speaker mean + AR(1)-smoothed noise, the whole utterance scaled by
// a log-normal gain. Test speakers are disjoint from train speakers.
struct SynthSpec {
    int n_speakers = 50;
    int utts_per_speaker = 20;
    int n_test_speakers = 10;
    int test_utts_per_speaker = 10;
    int frames_min = 200;
    int frames_max = 400;
    int feature_dim = 24;
    double between_scale = 1.0;   // spread of speaker means
    double within_scale = 2.0;    // per-frame noise scale
    double temporal_smoothing = 0.9;  // AR(1) coefficient, 0 = white noise
    double gain_log_std = 0.25;   // per-utterance log-normal amplitude nuisance
    std::uint64_t rng_seed = 42;

    json to_json() const {
        return {{"n_speakers", n_speakers},
                {"utts_per_speaker", utts_per_speaker},
                {"n_test_speakers", n_test_speakers},
                {"test_utts_per_speaker", test_utts_per_speaker},
                {"frames_min", frames_min},
                {"frames_max", frames_max},
                {"feature_dim", feature_dim},
                {"between_scale", between_scale},
                {"within_scale", within_scale},
                {"temporal_smoothing", temporal_smoothing},
                {"gain_log_std", gain_log_std},
                {"rng_seed", rng_seed}};
    }

    static SynthSpec from_json(const json& j) { return from_json(j, SynthSpec()); }

    // Fields absent from the JSON keep the values in `base`.
    static SynthSpec from_json(const json& j, SynthSpec base) {
        SynthSpec s = std::move(base);
        s.n_speakers = j.value("n_speakers", s.n_speakers);
        s.utts_per_speaker = j.value("utts_per_speaker", s.utts_per_speaker);
        s.n_test_speakers = j.value("n_test_speakers", s.n_test_speakers);
        s.test_utts_per_speaker = j.value("test_utts_per_speaker", s.test_utts_per_speaker);
        s.frames_min = j.value("frames_min", s.frames_min);
        s.frames_max = j.value("frames_max", s.frames_max);
        s.feature_dim = j.value("feature_dim", s.feature_dim);
        s.between_scale = j.value("between_scale", s.between_scale);
        s.within_scale = j.value("within_scale", s.within_scale);
        s.temporal_smoothing = j.value("temporal_smoothing", s.temporal_smoothing);
        s.gain_log_std = j.value("gain_log_std", s.gain_log_std);
        s.rng_seed = j.value("rng_seed", s.rng_seed);
        s.validate();
        return s;
    }

    void validate() const {
        if (n_speakers < 2) throw ConfigError("need at least 2 train speakers");
        if (n_test_speakers < 2) throw ConfigError("need at least 2 test speakers");
        if (utts_per_speaker < 1 || test_utts_per_speaker < 2)
            throw ConfigError("need utterances per speaker (>= 2 for test)");
        if (frames_min < 1 || frames_min > frames_max) throw ConfigError("bad frame range");
        if (feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
        if (between_scale <= 0.0 || within_scale <= 0.0)
            throw ConfigError("scales must be > 0");
        if (temporal_smoothing < 0.0 || temporal_smoothing >= 1.0)
            throw ConfigError("temporal_smoothing must be in [0,1)");
    }
};

struct SynthCorpus {
    std::vector<FeatureMatrix> train;
    std::vector<std::pair<std::string, std::string>> train_utt2spk;
    std::vector<FeatureMatrix> test;
    std::vector<std::pair<std::string, std::string>> test_utt2spk;
    TrialList trials;
};

namespace detail {

inline std::string speaker_id(const char* prefix, int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%04d", prefix, i);
    return buf;
}

inline std::string utt_id(const std::string& spk, int j) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_u%03d", spk.c_str(), j);
    return buf;
}

inline FeatureMatrix make_utterance(const std::string& id, const std::vector<double>& spk_mean,
                                    const SynthSpec& spec, Rng& rng) {
    const int T = static_cast<int>(rng.uniform_int(spec.frames_min, spec.frames_max));
    const int D = spec.feature_dim;
    const double rho = spec.temporal_smoothing;
    const double innov = spec.within_scale * std::sqrt(1.0 - rho * rho);
    const double gain = std::exp(rng.normal(0.0, spec.gain_log_std));

    FeatureMatrix f;
    f.utt_id = id;
    f.num_frames = static_cast<std::size_t>(T);
    f.dim = static_cast<std::size_t>(D);
    f.values.resize(f.num_frames * f.dim);
    std::vector<double> noise(static_cast<std::size_t>(D));
    for (int t = 0; t < T; ++t)
        for (int d = 0; d < D; ++d) {
            auto& nd = noise[static_cast<std::size_t>(d)];
            nd = t == 0 ? spec.within_scale * rng.normal() : rho * nd + innov * rng.normal();
            f.at(static_cast<std::size_t>(t), static_cast<std::size_t>(d)) =
                gain * (spk_mean[static_cast<std::size_t>(d)] + nd);
        }
    return f;
}

}  // namespace detail

inline SynthCorpus generate(const SynthSpec& spec) {
    spec.validate();
    Rng rng(spec.rng_seed);
    SynthCorpus corpus;

    auto gen_split = [&](const char* prefix, int n_spk, int n_utt,
                         std::vector<FeatureMatrix>& feats,
                         std::vector<std::pair<std::string, std::string>>& utt2spk) {
        for (int s = 0; s < n_spk; ++s) {
            const std::string spk = detail::speaker_id(prefix, s);
            std::vector<double> mean(static_cast<std::size_t>(spec.feature_dim));
            for (auto& m : mean) m = rng.normal(0.0, spec.between_scale);
            for (int u = 0; u < n_utt; ++u) {
                const std::string utt = detail::utt_id(spk, u);
                feats.push_back(detail::make_utterance(utt, mean, spec, rng));
                utt2spk.emplace_back(utt, spk);
            }
        }
    };
    gen_split("spk", spec.n_speakers, spec.utts_per_speaker, corpus.train, corpus.train_utt2spk);
    gen_split("tspk", spec.n_test_speakers, spec.test_utts_per_speaker, corpus.test,
              corpus.test_utt2spk);

    // Balanced trials over the test split: every same-speaker pair is a
    // target; an equal number of cross-speaker pairs is sampled.
    std::vector<Trial> targets, nontarget_pool;
    for (std::size_t i = 0; i < corpus.test.size(); ++i)
        for (std::size_t j = i + 1; j < corpus.test.size(); ++j) {
            const auto& [utt_i, spk_i] = corpus.test_utt2spk[i];
            const auto& [utt_j, spk_j] = corpus.test_utt2spk[j];
            if (spk_i == spk_j)
                targets.push_back({utt_i, utt_j, true});
            else
                nontarget_pool.push_back({utt_i, utt_j, false});
        }
    rng.shuffle(nontarget_pool);
    const std::size_t n_keep = std::min(targets.size(), nontarget_pool.size());
    corpus.trials.assign(targets.begin(), targets.begin() + static_cast<std::ptrdiff_t>(n_keep));
    corpus.trials.insert(corpus.trials.end(), nontarget_pool.begin(),
                         nontarget_pool.begin() + static_cast<std::ptrdiff_t>(n_keep));
    return corpus;
}

}  // namespace dnsv::synth
