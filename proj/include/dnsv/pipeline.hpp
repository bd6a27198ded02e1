#pragma once

#include <filesystem>
#include <fstream>
#include <atomic>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dnsv/backend.hpp"
#include "dnsv/embedding.hpp"
#include "dnsv/feature_io.hpp"
#include "dnsv/metrics.hpp"
#include "dnsv/model.hpp"
#include "dnsv/synth.hpp"
#include "dnsv/train.hpp"

namespace dnsv::pipeline {

using json = nlohmann::json;

// End-to-end comparison run: synthesize a corpus, train a baseline and a
// normalized model with the same recipe, then score the test trials with
// inner-product/cosine/PLDA back-ends and evaluate each system.
struct PipelineConfig {
    synth::SynthSpec synth;
    nn::TrainConfig train;
    nn::ArchConfig arch;  // `normalize` is toggled per model; alpha applies to the normalized one
    int plda_iters = 10;
    std::vector<DcfParams> dcf = {{0.01, 1.0, 1.0}, {0.001, 1.0, 1.0}};
    bool binary_features = true;

    PipelineConfig() {
        train.crop_min = 150;
        train.crop_max = 300;
        train.epochs = 30;
        arch.feature_dim = static_cast<std::size_t>(synth.feature_dim);
        arch.alpha = 12.0;
    }

    json to_json() const {
        json d = json::array();
        for (const auto& p : dcf)
            d.push_back({{"p_target", p.p_target}, {"c_miss", p.c_miss}, {"c_fa", p.c_fa}});
        return {{"synth", synth.to_json()},
                {"train", train.to_json()},
                {"arch", arch.to_json()},
                {"plda_iters", plda_iters},
                {"dcf", d},
                {"binary_features", binary_features}};
    }

    // Partial JSON overlays the pipeline defaults, section by section.
    static PipelineConfig from_json(const json& j) {
        PipelineConfig c;
        if (j.contains("synth")) c.synth = synth::SynthSpec::from_json(j["synth"], c.synth);
        if (j.contains("train")) c.train = nn::TrainConfig::from_json(j["train"], c.train);
        if (j.contains("arch")) c.arch = nn::ArchConfig::from_json(j["arch"], c.arch);
        c.plda_iters = j.value("plda_iters", c.plda_iters);
        if (j.contains("dcf")) {
            c.dcf.clear();
            for (const auto& d : j["dcf"])
                c.dcf.push_back({d.value("p_target", 0.01), d.value("c_miss", 1.0),
                                 d.value("c_fa", 1.0)});
        }
        c.binary_features = j.value("binary_features", c.binary_features);
        c.arch.feature_dim = static_cast<std::size_t>(c.synth.feature_dim);
        return c;
    }
};

struct SystemResult {
    std::string name;
    std::string model;    // "baseline" | "normalized"
    std::string backend;  // "inner" | "cosine" | "plda"
    bool l2norm = false;
    std::vector<ScoredTrial> scores;
    EvalReport report;
};

struct PipelineResult {
    synth::SynthCorpus corpus;
    nn::TrainStats baseline_stats, normalized_stats;
    EmbeddingSet baseline_train, baseline_test, normalized_train, normalized_test;
    std::vector<SystemResult> systems;

    const SystemResult& system(const std::string& name) const {
        for (const auto& s : systems)
            if (s.name == name) return s;
        throw ConfigError("no such system: " + name);
    }

    json report_json(const PipelineConfig& cfg) const {
        json rows = json::array();
        for (const auto& s : systems) {
            json r = s.report.to_json();
            r["name"] = s.name;
            r["model"] = s.model;
            r["backend"] = s.backend;
            r["l2norm"] = s.l2norm;
            r["eer_pct"] = 100.0 * s.report.eer;
            rows.push_back(r);
        }
        return {{"config", cfg.to_json()}, {"systems", rows}};
    }
};

namespace detail {

// Scores every trial; results land at their trial's index, so the output is
// identical for any thread count.
inline std::vector<ScoredTrial> score_trials(
    const EmbeddingSet& emb, const TrialList& trials,
    const std::function<double(const std::vector<double>&, const std::vector<double>&)>& fn,
    unsigned jobs = 1) {
    std::vector<ScoredTrial> out(trials.size());
    auto score_one = [&](std::size_t i) {
        const auto& t = trials[i];
        const auto a = emb.entries.find(t.utt_a);
        const auto b = emb.entries.find(t.utt_b);
        if (a == emb.entries.end() || b == emb.entries.end())
            throw ConfigError("trial references unknown utterance " + t.utt_a + "/" + t.utt_b);
        out[i] = {t.utt_a, t.utt_b, fn(a->second, b->second)};
    };
    if (jobs <= 1 || trials.size() < 2) {
        for (std::size_t i = 0; i < trials.size(); ++i) score_one(i);
        return out;
    }
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errs(jobs);
    for (unsigned w = 0; w < jobs; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = next++; i < trials.size(); i = next++) score_one(i);
            } catch (...) {
                errs[w] = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    for (const auto& e : errs)
        if (e) std::rethrow_exception(e);
    return out;
}

inline std::map<std::string, std::string> to_map(
    const std::vector<std::pair<std::string, std::string>>& pairs) {
    return {pairs.begin(), pairs.end()};
}

}  // namespace detail

// Runs the whole comparison. With a non-empty `dir`, every artifact is also
// written there in the toolkit's file formats; the bytes are a pure function
// of the config.
inline PipelineResult run(const PipelineConfig& cfg, const std::string& dir = {},
                          unsigned jobs = 1) {
    const bool persist = !dir.empty();
    if (persist) {
        namespace fs = std::filesystem;
        for (const char* sub : {"", "/synth", "/models", "/emb", "/plda", "/scores", "/reports"})
            fs::create_directories(dir + sub);
    }

    PipelineResult r;
    r.corpus = synth::generate(cfg.synth);
    if (persist) {
        save_features(dir + "/synth/train.feats", r.corpus.train, cfg.binary_features);
        save_features(dir + "/synth/test.feats", r.corpus.test, cfg.binary_features);
        save_utt2spk(dir + "/synth/train.utt2spk", r.corpus.train_utt2spk);
        save_utt2spk(dir + "/synth/test.utt2spk", r.corpus.test_utt2spk);
        save_trials(dir + "/synth/trials.txt", r.corpus.trials);
    }

    nn::ArchConfig arch_base = cfg.arch;
    arch_base.normalize = false;
    nn::ArchConfig arch_norm = cfg.arch;
    arch_norm.normalize = true;

    const auto train_ds = nn::make_dataset(r.corpus.train, r.corpus.train_utt2spk);

    auto train_one = [&](const nn::ArchConfig& arch, const std::string& name,
                         nn::TrainStats& stats_out) {
        auto res = nn::train<double>(cfg.train, arch, train_ds);
        stats_out = res.stats;
        if (persist) {
            json side;
            side["train_config"] = cfg.train.to_json();
            side["classes"] = train_ds.class_names;
            nn::save_checkpoint(dir + "/models/" + name + ".ckpt", res.model, side);
            std::ofstream st(dir + "/models/" + name + ".stats.json");
            st << res.stats.to_json().dump(2) << '\n';
        }
        return std::move(res.model);
    };
    const auto base_model = train_one(arch_base, "baseline", r.baseline_stats);
    const auto norm_model = train_one(arch_norm, "normalized", r.normalized_stats);

    r.baseline_train = extract_all(base_model, r.corpus.train, nn::TapPoint::Penultimate, jobs);
    r.baseline_test = extract_all(base_model, r.corpus.test, nn::TapPoint::Penultimate, jobs);
    r.normalized_train = extract_all(norm_model, r.corpus.train, nn::TapPoint::PostNorm, jobs);
    r.normalized_test = extract_all(norm_model, r.corpus.test, nn::TapPoint::PostNorm, jobs);
    if (persist) {
        save_embeddings(dir + "/emb/baseline.train.emb", r.baseline_train);
        save_embeddings(dir + "/emb/baseline.test.emb", r.baseline_test);
        save_embeddings(dir + "/emb/normalized.train.emb", r.normalized_train);
        save_embeddings(dir + "/emb/normalized.test.emb", r.normalized_test);
    }

    const auto train_labels = detail::to_map(r.corpus.train_utt2spk);
    const auto plda_base = plda_train(r.baseline_train, train_labels, cfg.plda_iters);
    const auto plda_base_l2 =
        plda_train(center_and_normalize(r.baseline_train), train_labels, cfg.plda_iters);
    const auto plda_norm = plda_train(r.normalized_train, train_labels, cfg.plda_iters);
    if (persist) {
        save_plda(dir + "/plda/baseline.plda", plda_base.model);
        save_plda(dir + "/plda/baseline_l2.plda", plda_base_l2.model);
        save_plda(dir + "/plda/normalized.plda", plda_norm.model);
    }

    const PldaScorer sc_base(plda_base.model);
    const PldaScorer sc_base_l2(plda_base_l2.model);
    const PldaScorer sc_norm(plda_norm.model);

    auto add_system = [&](const std::string& name, const std::string& model,
                          const std::string& backend, bool l2, const EmbeddingSet& emb,
                          const std::function<double(const std::vector<double>&,
                                                     const std::vector<double>&)>& fn) {
        SystemResult s;
        s.name = name;
        s.model = model;
        s.backend = backend;
        s.l2norm = l2;
        s.scores = detail::score_trials(emb, r.corpus.trials, fn, jobs);
        std::vector<double> vals;
        std::vector<bool> labels;
        for (std::size_t i = 0; i < s.scores.size(); ++i) {
            vals.push_back(s.scores[i].score);
            labels.push_back(r.corpus.trials[i].target);
        }
        s.report = evaluate(vals, labels, cfg.dcf);
        if (persist) {
            save_scores(dir + "/scores/" + name + ".scores", s.scores);
            std::ofstream rep(dir + "/reports/" + name + ".report.json");
            rep << s.report.to_json().dump(2) << '\n';
            save_det_points(dir + "/reports/" + name + ".det", det_points(vals, labels));
        }
        r.systems.push_back(std::move(s));
    };

    add_system("baseline_inner", "baseline", "inner", false, r.baseline_test, inner_product);
    add_system("baseline_cosine", "baseline", "cosine", false, r.baseline_test, cosine);
    add_system("baseline_plda", "baseline", "plda", false, r.baseline_test,
               [&](const auto& a, const auto& b) { return sc_base.score(a, b); });
    {
        const auto test_l2 = center_and_normalize(r.baseline_test);
        add_system("baseline_l2norm_plda", "baseline", "plda", true, test_l2,
                   [&](const auto& a, const auto& b) { return sc_base_l2.score(a, b); });
    }
    add_system("normalized_inner", "normalized", "inner", false, r.normalized_test,
               inner_product);
    add_system("normalized_plda", "normalized", "plda", false, r.normalized_test,
               [&](const auto& a, const auto& b) { return sc_norm.score(a, b); });

    if (persist) {
        std::ofstream rep(dir + "/reports/pipeline_report.json");
        rep << r.report_json(cfg).dump(2) << '\n';
        if (!rep) throw IoError("failed writing pipeline report");
    }
    return r;
}

inline std::string render_table(const PipelineResult& r) {
    std::ostringstream os;
    os << "system                     EER%    ";
    if (!r.systems.empty())
        for (const auto& d : r.systems.front().report.min_dcf) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "minDCF@%g  ", d.params.p_target);
            os << buf;
        }
    os << '\n';
    for (const auto& s : r.systems) {
        char line[64];
        std::snprintf(line, sizeof line, "%-26s %6.2f  ", s.name.c_str(), 100.0 * s.report.eer);
        os << line;
        for (const auto& d : s.report.min_dcf) {
            std::snprintf(line, sizeof line, "%9.3f  ", d.value);
            os << line;
        }
        os << '\n';
    }
    return os.str();
}

}  // namespace dnsv::pipeline
