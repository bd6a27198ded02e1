// dnsv: train and evaluate speaker-verification systems built on
// length-normalized deep embeddings.
//
// Subcommands cover the whole pipeline: feature extraction from WAV,
// synthetic corpus generation, model training, embedding extraction, PLDA
// estimation, trial scoring, metric evaluation, and an end-to-end comparison
// run. Every subcommand is deterministic given its inputs and seeds; the
// DNSV_SEED environment variable overrides configured seeds globally.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dnsv/dnsv.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::optional<std::uint64_t> env_seed() {
    const char* v = std::getenv("DNSV_SEED");
    if (!v || !*v) return std::nullopt;
    return std::strtoull(v, nullptr, 10);
}

json load_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw dnsv::IoError("cannot open JSON file: " + path);
    json j;
    try {
        is >> j;
    } catch (const json::parse_error& e) {
        throw dnsv::ConfigError("bad JSON in " + path + ": " + e.what());
    }
    return j;
}

void write_json(const std::string& path, const json& j) {
    std::ofstream os(path);
    if (!os) throw dnsv::IoError("cannot write " + path);
    os << j.dump(2) << '\n';
    if (!os) throw dnsv::IoError("failed writing " + path);
}

struct FeaturesArgs {
    std::string in_dir, out_file;
    dnsv::FeatureConfig cfg;
    bool no_vad = false, no_cmn = false, binary = false;
};

int cmd_features(const FeaturesArgs& a) {
    auto cfg = a.cfg;
    cfg.apply_vad = !a.no_vad;
    cfg.apply_cmn = !a.no_cmn;
    std::vector<fs::path> wavs;
    for (const auto& e : fs::directory_iterator(a.in_dir)) {
        if (!e.is_regular_file()) continue;
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (ext == ".wav") wavs.push_back(e.path());
    }
    if (wavs.empty()) throw dnsv::IoError("no .wav files under " + a.in_dir);
    std::sort(wavs.begin(), wavs.end());
    std::vector<dnsv::FeatureMatrix> feats;
    for (const auto& p : wavs) {
        const auto w = dnsv::read_wav(p.string());
        feats.push_back(dnsv::compute_features(w, cfg, p.stem().string()));
    }
    dnsv::save_features(a.out_file, feats, a.binary);
    std::cout << "wrote " << feats.size() << " utterances to " << a.out_file << "\n";
    return 0;
}

struct SynthArgs {
    std::string spec_file, out_dir;
    std::optional<std::uint64_t> seed;
    bool binary = false;
};

int cmd_synth(const SynthArgs& a) {
    dnsv::synth::SynthSpec spec;
    if (!a.spec_file.empty()) spec = dnsv::synth::SynthSpec::from_json(load_json(a.spec_file));
    if (const auto s = a.seed ? a.seed : env_seed()) spec.rng_seed = *s;
    const auto corpus = dnsv::synth::generate(spec);
    fs::create_directories(a.out_dir);
    dnsv::save_features(a.out_dir + "/train.feats", corpus.train, a.binary);
    dnsv::save_features(a.out_dir + "/test.feats", corpus.test, a.binary);
    dnsv::save_utt2spk(a.out_dir + "/train.utt2spk", corpus.train_utt2spk);
    dnsv::save_utt2spk(a.out_dir + "/test.utt2spk", corpus.test_utt2spk);
    dnsv::save_trials(a.out_dir + "/trials.txt", corpus.trials);
    write_json(a.out_dir + "/spec.json", spec.to_json());
    std::cout << "synthesized " << corpus.train.size() << " train / " << corpus.test.size()
              << " test utterances, " << corpus.trials.size() << " trials\n";
    return 0;
}

struct TrainArgs {
    std::string config_file, feats_file, labels_file, out_model;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs, batch_size, embedding_dim;
    std::optional<double> alpha, momentum, weight_decay, plateau_improvement;
    std::optional<int> plateau_epochs;
    std::vector<double> learning_rates;  // empty = from config
    std::optional<std::string> alpha_mode, encoder, dtype;
    std::optional<std::size_t> crop_min, crop_max;
    int normalize = -1;  // -1 from config, 0 baseline, 1 normalized
};

template <typename S>
void run_training(const dnsv::nn::TrainConfig& tc, const dnsv::nn::ArchConfig& arch,
                  const dnsv::nn::Dataset& ds, const std::string& out_model) {
    auto result = dnsv::nn::train<S>(tc, arch, ds);
    json side;
    side["train_config"] = tc.to_json();
    side["classes"] = ds.class_names;
    dnsv::nn::save_checkpoint(out_model, result.model, side);
    write_json(out_model + ".stats.json", result.stats.to_json());
    const auto& last = result.stats.epochs.back();
    std::cout << "final epoch: loss=" << last.loss << " acc=" << last.accuracy << "\n";
    std::cout << "wrote " << out_model << "\n";
}

int cmd_train(const TrainArgs& a) {
    json cfg = json::object();
    if (!a.config_file.empty()) cfg = load_json(a.config_file);
    auto tc = cfg.contains("train") ? dnsv::nn::TrainConfig::from_json(cfg["train"])
                                    : dnsv::nn::TrainConfig{};
    auto arch = cfg.contains("arch") ? dnsv::nn::ArchConfig::from_json(cfg["arch"])
                                     : dnsv::nn::ArchConfig{};
    if (a.epochs) tc.epochs = *a.epochs;
    if (a.batch_size) tc.batch_size = *a.batch_size;
    if (a.crop_min) tc.crop_min = *a.crop_min;
    if (a.crop_max) tc.crop_max = *a.crop_max;
    if (a.dtype) tc.dtype = *a.dtype;
    if (a.momentum) tc.momentum = *a.momentum;
    if (a.weight_decay) tc.weight_decay = *a.weight_decay;
    if (a.plateau_epochs) tc.plateau_epochs = *a.plateau_epochs;
    if (a.plateau_improvement) tc.plateau_rel_improvement = *a.plateau_improvement;
    if (!a.learning_rates.empty()) tc.learning_rates = a.learning_rates;
    if (const auto s = a.seed ? a.seed : env_seed()) tc.rng_seed = *s;
    if (a.embedding_dim) arch.embedding_dim = *a.embedding_dim;
    if (a.alpha) arch.alpha = *a.alpha;
    if (a.normalize >= 0) arch.normalize = a.normalize == 1;
    if (a.alpha_mode)
        arch.alpha_mode = *a.alpha_mode == "trainable" ? dnsv::nn::AlphaMode::Trainable
                                                       : dnsv::nn::AlphaMode::Fixed;
    if (a.encoder)
        arch.encoder = *a.encoder == "cnn" ? dnsv::nn::EncoderType::Cnn
                                           : dnsv::nn::EncoderType::Tdnn;
    tc.validate();

    auto feats = dnsv::load_features(a.feats_file);
    if (feats.empty()) throw dnsv::TrainingDataError("no utterances in " + a.feats_file);
    arch.feature_dim = feats.front().dim;
    const auto ds = dnsv::nn::make_dataset(std::move(feats), dnsv::load_utt2spk(a.labels_file));

    if (tc.dtype == "float32")
        run_training<float>(tc, arch, ds, a.out_model);
    else
        run_training<double>(tc, arch, ds, a.out_model);
    return 0;
}

struct ExtractArgs {
    std::string model_file, feats_file, out_file, tap = "auto";
    bool binary = false;
    unsigned jobs = 1;
};

int cmd_extract(const ExtractArgs& a) {
    const auto model = dnsv::nn::load_checkpoint(a.model_file);
    dnsv::nn::TapPoint tap;
    if (a.tap == "auto")
        tap = model.default_tap();
    else if (a.tap == "penultimate")
        tap = dnsv::nn::TapPoint::Penultimate;
    else if (a.tap == "post_norm")
        tap = dnsv::nn::TapPoint::PostNorm;
    else
        throw dnsv::ConfigError("unknown tap point: " + a.tap);
    const auto feats = dnsv::load_features(a.feats_file);
    const auto set = dnsv::extract_all(model, feats, tap, a.jobs);
    dnsv::save_embeddings(a.out_file, set, a.binary);
    std::cout << "extracted " << set.entries.size() << " embeddings (dim " << set.dim << ", tap "
              << dnsv::nn::to_string(tap) << ")\n";
    return 0;
}

struct PldaArgs {
    std::string emb_file, labels_file, out_file;
    int iters = 10;
    bool l2norm = false;
};

int cmd_plda(const PldaArgs& a) {
    auto set = dnsv::load_embeddings(a.emb_file);
    if (a.l2norm) set = dnsv::center_and_normalize(set);
    const auto pairs = dnsv::load_utt2spk(a.labels_file);
    const std::map<std::string, std::string> labels(pairs.begin(), pairs.end());
    const auto r = dnsv::plda_train(set, labels, a.iters);
    if (r.floor_events > 0)
        std::cerr << "warning: within-class covariance floored " << r.floor_events
                  << " time(s)\n";
    dnsv::save_plda(a.out_file, r.model);
    std::cout << "PLDA trained, final log-likelihood "
              << (r.loglik.empty() ? 0.0 : r.loglik.back()) << "\n";
    return 0;
}

struct ScoreArgs {
    std::string emb_file, trials_file, backend = "cosine", plda_file, out_file;
    bool l2norm = false;
    unsigned jobs = 1;
};

int cmd_score(const ScoreArgs& a) {
    auto set = dnsv::load_embeddings(a.emb_file);
    if (a.l2norm) set = dnsv::center_and_normalize(set);
    const auto trials = dnsv::load_trials(a.trials_file);

    std::function<double(const std::vector<double>&, const std::vector<double>&)> fn;
    std::optional<dnsv::PldaScorer> scorer;
    if (a.backend == "inner") {
        fn = dnsv::inner_product;
    } else if (a.backend == "cosine") {
        fn = dnsv::cosine;
    } else if (a.backend == "plda") {
        if (a.plda_file.empty()) throw dnsv::ConfigError("--plda model required for plda backend");
        scorer.emplace(dnsv::load_plda(a.plda_file));
        fn = [&scorer](const auto& x, const auto& y) { return scorer->score(x, y); };
    } else {
        throw dnsv::ConfigError("unknown backend: " + a.backend);
    }
    const auto scores = dnsv::pipeline::detail::score_trials(set, trials, fn, a.jobs);
    dnsv::save_scores(a.out_file, scores);
    std::cout << "scored " << scores.size() << " trials with " << a.backend << "\n";
    return 0;
}

struct EvalArgs {
    std::string scores_file, trials_file, out_report, det_file;
    std::vector<double> p_targets = {0.01, 0.001};
    double c_miss = 1.0, c_fa = 1.0;
};

int cmd_eval(const EvalArgs& a) {
    const auto trials = dnsv::load_trials(a.trials_file);
    const auto scores = dnsv::load_scores(a.scores_file);
    const auto [vals, labels] = dnsv::align_scores(trials, scores);
    std::vector<dnsv::DcfParams> dcf;
    for (const double p : a.p_targets) dcf.push_back({p, a.c_miss, a.c_fa});
    const auto rep = dnsv::evaluate(vals, labels, dcf);
    write_json(a.out_report, rep.to_json());
    if (!a.det_file.empty()) dnsv::save_det_points(a.det_file, dnsv::det_points(vals, labels));
    std::printf("eer=%.4f%%", 100.0 * rep.eer);
    for (const auto& d : rep.min_dcf) std::printf(" minDCF@%g=%.4f", d.params.p_target, d.value);
    std::printf("\n");
    return 0;
}

struct PipelineArgs {
    std::string config_file, out_dir;
    std::optional<std::uint64_t> seed;
    unsigned jobs = 1;
    bool dump_config = false;
};

int cmd_pipeline(const PipelineArgs& a) {
    dnsv::pipeline::PipelineConfig cfg;
    if (!a.config_file.empty())
        cfg = dnsv::pipeline::PipelineConfig::from_json(load_json(a.config_file));
    if (a.dump_config) {
        std::cout << cfg.to_json().dump(2) << "\n";
        return 0;
    }
    if (const auto s = a.seed ? a.seed : env_seed()) {
        cfg.synth.rng_seed = *s;
        cfg.train.rng_seed = *s + 1;
    }
    if (a.out_dir.empty()) throw dnsv::ConfigError("--out-dir is required");
    const auto result = dnsv::pipeline::run(cfg, a.out_dir, a.jobs);
    std::cout << dnsv::pipeline::render_table(result);
    std::cout << "artifacts under " << a.out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"speaker verification toolkit: length-normalized deep embeddings, "
                 "inner-product/cosine/PLDA scoring, EER/minDCF evaluation"};
    app.require_subcommand(1);

    FeaturesArgs fa;
    auto* features = app.add_subcommand("features", "convert a directory of WAV files to "
                                                    "log-mel features");
    features->add_option("--in", fa.in_dir, "directory of 16-bit PCM WAV files")->required();
    features->add_option("--out", fa.out_file, "output feature file")->required();
    features->add_option("--n-mels", fa.cfg.n_mels, "mel bins");
    features->add_option("--frame-ms", fa.cfg.frame_len_ms, "frame length in ms");
    features->add_option("--hop-ms", fa.cfg.hop_ms, "frame hop in ms");
    features->add_option("--floor", fa.cfg.floor_value, "energy floor");
    features->add_option("--vad-offset", fa.cfg.vad_offset, "VAD threshold offset");
    features->add_option("--cmn-window", fa.cfg.cmn_window, "CMN window in frames");
    features->add_flag("--no-vad", fa.no_vad, "skip voice activity detection");
    features->add_flag("--no-cmn", fa.no_cmn, "skip sliding mean normalization");
    features->add_flag("--binary", fa.binary, "write the binary feature format");

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "generate a synthetic speaker corpus");
    synth->add_option("--spec", sa.spec_file, "SynthSpec JSON (defaults when omitted)");
    synth->add_option("--out-dir", sa.out_dir, "output directory")->required();
    std::uint64_t synth_seed = 0;
    auto* synth_seed_opt = synth->add_option("--seed", synth_seed, "override the corpus seed");
    synth->add_flag("--binary", sa.binary, "write binary feature files");

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "train a speaker-embedding network");
    train->add_option("--config", ta.config_file, "JSON with train/arch sections");
    train->add_option("--feats", ta.feats_file, "training feature file")->required();
    train->add_option("--labels", ta.labels_file, "utt2spk labels file")->required();
    train->add_option("--out", ta.out_model, "output checkpoint path")->required();
    std::uint64_t train_seed = 0;
    auto* train_seed_opt = train->add_option("--seed", train_seed, "override the rng seed");
    std::size_t ep = 0, bs = 0, ed = 0, cmin = 0, cmax = 0;
    auto* ep_opt = train->add_option("--epochs", ep, "epoch budget");
    auto* bs_opt = train->add_option("--batch-size", bs, "mini-batch size");
    auto* ed_opt = train->add_option("--embedding-dim", ed, "embedding dimension");
    auto* cmin_opt = train->add_option("--crop-min", cmin, "minimum crop length (frames)");
    auto* cmax_opt = train->add_option("--crop-max", cmax, "maximum crop length (frames)");
    double alpha_v = 0.0;
    auto* alpha_opt = train->add_option("--alpha", alpha_v, "normalization scale");
    std::string alpha_mode, encoder, dtype;
    auto* am_opt = train->add_option("--alpha-mode", alpha_mode, "fixed|trainable");
    auto* enc_opt = train->add_option("--encoder", encoder, "tdnn|cnn");
    auto* dt_opt = train->add_option("--dtype", dtype, "float64|float32");
    double mom = 0.0, wd = 0.0, plat_rel = 0.0;
    int plat_ep = 0;
    auto* mom_opt = train->add_option("--momentum", mom, "SGD momentum");
    auto* wd_opt = train->add_option("--weight-decay", wd, "L2 weight decay");
    auto* plat_ep_opt = train->add_option("--plateau-epochs", plat_ep,
                                          "epochs without improvement before a rate drop");
    auto* plat_rel_opt = train->add_option("--plateau-improvement", plat_rel,
                                           "relative improvement counted as progress");
    train->add_option("--lr", ta.learning_rates, "learning-rate schedule (repeatable)");
    train->add_flag("--normalize", [&ta](std::int64_t) { ta.normalize = 1; },
                    "insert the L2-norm + scale layer");
    train->add_flag("--baseline", [&ta](std::int64_t) { ta.normalize = 0; },
                    "omit the normalization layer");

    ExtractArgs xa;
    auto* extract = app.add_subcommand("extract", "extract utterance embeddings");
    extract->add_option("--model", xa.model_file, "model checkpoint")->required();
    extract->add_option("--feats", xa.feats_file, "feature file")->required();
    extract->add_option("--out", xa.out_file, "output embedding file")->required();
    extract->add_option("--tap", xa.tap, "auto|penultimate|post_norm");
    extract->add_flag("--binary", xa.binary, "write the binary embedding format");
    extract->add_option("--jobs", xa.jobs, "parallel extraction threads");

    PldaArgs pa;
    auto* plda = app.add_subcommand("plda", "train a PLDA back-end on embeddings");
    plda->add_option("--emb", pa.emb_file, "embedding file")->required();
    plda->add_option("--labels", pa.labels_file, "utt2spk labels file")->required();
    plda->add_option("--out", pa.out_file, "output PLDA model")->required();
    plda->add_option("--iters", pa.iters, "EM iterations");
    plda->add_flag("--l2norm", pa.l2norm, "center + length-normalize embeddings first");

    ScoreArgs ca;
    auto* score = app.add_subcommand("score", "score a trial list");
    score->add_option("--emb", ca.emb_file, "embedding file")->required();
    score->add_option("--trials", ca.trials_file, "trial list")->required();
    score->add_option("--backend", ca.backend, "inner|cosine|plda")->required();
    score->add_option("--plda", ca.plda_file, "PLDA model (plda backend)");
    score->add_option("--out", ca.out_file, "output score file")->required();
    score->add_flag("--l2norm", ca.l2norm, "center + length-normalize embeddings first");
    score->add_option("--jobs", ca.jobs, "parallel scoring threads");

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "compute EER and minDCF for scored trials");
    eval->add_option("--scores", ea.scores_file, "score file")->required();
    eval->add_option("--trials", ea.trials_file, "trial list")->required();
    eval->add_option("--out", ea.out_report, "output report JSON")->required();
    eval->add_option("--det", ea.det_file, "optional DET points file");
    eval->add_option("--p-target", ea.p_targets, "target priors for minDCF");
    eval->add_option("--c-miss", ea.c_miss, "miss cost");
    eval->add_option("--c-fa", ea.c_fa, "false-alarm cost");

    double ab_p = 0.0;
    int ab_c = 0;
    auto* ab = app.add_subcommand("alpha-bound",
                                  "lower bound on the normalization scale for C classes");
    ab->add_option("--p", ab_p, "desired classification probability")->required();
    ab->add_option("--C", ab_c, "number of classes")->required();

    PipelineArgs la;
    auto* pipe = app.add_subcommand("pipeline", "synth + train + extract + score + eval, "
                                                "all back-ends compared");
    pipe->add_option("--config", la.config_file, "pipeline config JSON");
    pipe->add_option("--out-dir", la.out_dir, "output directory");
    std::uint64_t pipe_seed = 0;
    auto* pipe_seed_opt = pipe->add_option("--seed", pipe_seed, "override corpus + train seeds");
    pipe->add_option("--jobs", la.jobs, "parallel extraction threads");
    pipe->add_flag("--dump-config", la.dump_config, "print the effective config and exit");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*features) return cmd_features(fa);
        if (*synth) {
            if (*synth_seed_opt) sa.seed = synth_seed;
            return cmd_synth(sa);
        }
        if (*train) {
            if (*train_seed_opt) ta.seed = train_seed;
            if (*ep_opt) ta.epochs = ep;
            if (*bs_opt) ta.batch_size = bs;
            if (*ed_opt) ta.embedding_dim = ed;
            if (*cmin_opt) ta.crop_min = cmin;
            if (*cmax_opt) ta.crop_max = cmax;
            if (*alpha_opt) ta.alpha = alpha_v;
            if (*am_opt) ta.alpha_mode = alpha_mode;
            if (*enc_opt) ta.encoder = encoder;
            if (*dt_opt) ta.dtype = dtype;
            if (*mom_opt) ta.momentum = mom;
            if (*wd_opt) ta.weight_decay = wd;
            if (*plat_ep_opt) ta.plateau_epochs = plat_ep;
            if (*plat_rel_opt) ta.plateau_improvement = plat_rel;
            return cmd_train(ta);
        }
        if (*extract) return cmd_extract(xa);
        if (*plda) return cmd_plda(pa);
        if (*score) return cmd_score(ca);
        if (*eval) return cmd_eval(ea);
        if (*ab) {
            std::printf("%.9g\n", dnsv::alpha_lower_bound(ab_p, ab_c));
            return 0;
        }
        if (*pipe) {
            if (*pipe_seed_opt) la.seed = pipe_seed;
            return cmd_pipeline(la);
        }
    } catch (const dnsv::Error& e) {
        const json err = {{"type", e.code()}, {"message", e.what()}};
        std::cerr << "error: " << err.dump() << "\n";
        return 1;
    } catch (const std::exception& e) {
        const json err = {{"type", "Internal"}, {"message", e.what()}};
        std::cerr << "error: " << err.dump() << "\n";
        return 1;
    }
    return 1;
}
