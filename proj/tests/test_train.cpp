#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "dnsv/model.hpp"
#include "dnsv/train.hpp"
#include "gradcheck.hpp"

using namespace dnsv;
using namespace dnsv::nn;
using Catch::Approx;

namespace {

Tensor<double> scalar_param(double v) {
    Tensor<double> t({1});
    t[0] = v;
    return t;
}

// Two perfectly separated speakers: constant features at +mu and -mu plus a
// whisper of deterministic jitter.
Dataset separable_dataset(std::size_t per_class, std::size_t frames, std::size_t dim) {
    Rng rng(77);
    Dataset ds;
    ds.class_names = {"neg", "pos"};
    for (std::size_t i = 0; i < 2 * per_class; ++i) {
        const int label = i % 2;
        FeatureMatrix f;
        f.utt_id = "u" + std::to_string(i);
        f.num_frames = frames;
        f.dim = dim;
        f.values.resize(frames * dim);
        const double center = label == 0 ? -2.0 : 2.0;
        for (auto& v : f.values) v = center + 0.05 * rng.normal();
        ds.utterances.push_back(std::move(f));
        ds.labels.push_back(label);
    }
    return ds;
}

}  // namespace

TEST_CASE("sgd_step update rule", "[train]") {
    SECTION("no momentum, no decay: plain gradient step") {
        auto theta = scalar_param(1.0);
        auto v = scalar_param(0.0);
        const auto g = scalar_param(0.5);
        Tensor<double>* params[] = {&theta};
        sgd_step<double>(params, {&g, 1}, {&v, 1}, 0.2, 0.0, 0.0);
        REQUIRE(theta[0] == Approx(1.0 - 0.2 * 0.5));
    }
    SECTION("zero gradient with decay shrinks by (1 - lr*wd)") {
        auto theta = scalar_param(2.0);
        auto v = scalar_param(0.0);
        const auto g = scalar_param(0.0);
        Tensor<double>* params[] = {&theta};
        sgd_step<double>(params, {&g, 1}, {&v, 1}, 0.1, 0.0, 0.01);
        REQUIRE(theta[0] == Approx(2.0 * (1.0 - 0.1 * 0.01)));
    }
    SECTION("two momentum steps: 0 -> -0.1 -> -0.29") {
        auto theta = scalar_param(0.0);
        auto v = scalar_param(0.0);
        const auto g = scalar_param(1.0);
        Tensor<double>* params[] = {&theta};
        sgd_step<double>(params, {&g, 1}, {&v, 1}, 0.1, 0.9, 0.0);
        REQUIRE(theta[0] == Approx(-0.1));
        sgd_step<double>(params, {&g, 1}, {&v, 1}, 0.1, 0.9, 0.0);
        REQUIRE(theta[0] == Approx(-0.29));
    }
}

TEST_CASE("crop_or_extend", "[train]") {
    FeatureMatrix f;
    f.num_frames = 3;
    f.dim = 2;
    f.values = {0, 1, 10, 11, 20, 21};

    SECTION("T == L is the identity") {
        Rng rng(1);
        const auto out = crop_or_extend<double>(f, 3, rng);
        REQUIRE(out.storage() == f.values);
    }
    SECTION("T < L tiles with period T") {
        Rng rng(2);
        const auto out = crop_or_extend<double>(f, 7, rng);
        for (std::size_t t = 0; t + 3 < 7; ++t)
            for (std::size_t d = 0; d < 2; ++d) REQUIRE(out(t, d) == out(t + 3, d));
    }
    SECTION("T > L takes a contiguous window") {
        FeatureMatrix big;
        big.num_frames = 50;
        big.dim = 1;
        big.values.resize(50);
        for (std::size_t t = 0; t < 50; ++t) big.values[t] = static_cast<double>(t);
        Rng rng(3);
        for (int trial = 0; trial < 10; ++trial) {
            const auto out = crop_or_extend<double>(big, 8, rng);
            for (std::size_t t = 1; t < 8; ++t) REQUIRE(out(t, 0) == out(t - 1, 0) + 1.0);
            REQUIRE(out(0, 0) >= 0.0);
            REQUIRE(out(7, 0) <= 49.0);
        }
    }
}

TEST_CASE("make_dataset label mapping", "[train]") {
    FeatureMatrix a, b;
    a.utt_id = "x1";
    a.num_frames = 1;
    a.dim = 1;
    a.values = {0.0};
    b = a;
    b.utt_id = "x2";
    SECTION("class indices follow sorted speaker ids") {
        const auto ds = make_dataset({a, b}, {{"x1", "zeta"}, {"x2", "alpha"}});
        REQUIRE(ds.class_names == std::vector<std::string>{"alpha", "zeta"});
        REQUIRE(ds.labels == std::vector<int>{1, 0});
    }
    SECTION("missing label throws") {
        REQUIRE_THROWS_AS(make_dataset({a, b}, {{"x1", "s"}}), TrainingDataError);
    }
}

TEST_CASE("training is deterministic per seed", "[train]") {
    const auto ds = separable_dataset(8, 12, 4);
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.epochs = 4;
    cfg.crop_min = 8;
    cfg.crop_max = 12;
    cfg.rng_seed = 9001;
    ArchConfig arch;
    arch.feature_dim = 4;
    arch.hidden = {6};
    arch.embedding_dim = 4;
    arch.normalize = true;
    arch.alpha = 8.0;

    const auto r1 = train<double>(cfg, arch, ds);
    const auto r2 = train<double>(cfg, arch, ds);
    REQUIRE(r1.stats.epochs.size() == r2.stats.epochs.size());
    for (std::size_t e = 0; e < r1.stats.epochs.size(); ++e) {
        REQUIRE(r1.stats.epochs[e].loss == r2.stats.epochs[e].loss);  // bit-identical
        REQUIRE(r1.stats.epochs[e].accuracy == r2.stats.epochs[e].accuracy);
    }
    const auto p1 = r1.model.parameters();
    const auto p2 = r2.model.parameters();
    for (std::size_t i = 0; i < p1.size(); ++i) REQUIRE(p1[i]->storage() == p2[i]->storage());

    cfg.rng_seed = 9002;
    const auto r3 = train<double>(cfg, arch, ds);
    REQUIRE(r3.stats.epochs.back().loss != r1.stats.epochs.back().loss);
}

TEST_CASE("loss sinks below 0.1 on a separable two-speaker set", "[train]") {
    const auto ds = separable_dataset(8, 10, 4);  // 16 utterances
    TrainConfig cfg;
    cfg.batch_size = 16;  // one step per epoch
    cfg.epochs = 200;     // = 200 steps
    cfg.crop_min = 8;
    cfg.crop_max = 10;
    cfg.rng_seed = 7;
    ArchConfig arch;
    arch.feature_dim = 4;
    arch.hidden = {8};
    arch.embedding_dim = 4;
    arch.normalize = false;

    const auto r = train<double>(cfg, arch, ds);
    double best = 1e9;
    for (const auto& e : r.stats.epochs) best = std::min(best, e.loss);
    REQUIRE(best < 0.1);

    SECTION("normalized variant converges too") {
        arch.normalize = true;
        arch.alpha = 8.0;
        const auto rn = train<double>(cfg, arch, ds);
        double best_n = 1e9;
        for (const auto& e : rn.stats.epochs) best_n = std::min(best_n, e.loss);
        REQUIRE(best_n < 0.1);
    }
}

TEST_CASE("cnn preset trains end to end", "[train]") {
    const auto ds = separable_dataset(8, 16, 8);
    TrainConfig cfg;
    cfg.batch_size = 16;
    cfg.epochs = 25;
    cfg.crop_min = 12;
    cfg.crop_max = 16;
    cfg.rng_seed = 17;
    ArchConfig arch;
    arch.feature_dim = 8;
    arch.encoder = EncoderType::Cnn;
    arch.channels = {2, 4};
    arch.blocks = {1, 1};
    arch.embedding_dim = 4;
    arch.normalize = true;
    arch.alpha = 8.0;

    const auto r = train<double>(cfg, arch, ds);
    REQUIRE(std::isfinite(r.stats.final_loss()));
    REQUIRE(r.stats.final_loss() < 0.5 * r.stats.epochs.front().loss);
}

TEST_CASE("training aborts cleanly on pathological input", "[train]") {
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.epochs = 2;
    cfg.crop_min = 4;
    cfg.crop_max = 6;
    ArchConfig arch;
    arch.feature_dim = 3;
    arch.hidden = {4};
    arch.embedding_dim = 3;

    SECTION("all-zero features collapse the norm layer: DegenerateNorm") {
        arch.normalize = true;
        Dataset ds;
        ds.class_names = {"a", "b"};
        for (int i = 0; i < 4; ++i) {
            FeatureMatrix f;
            f.utt_id = "z" + std::to_string(i);
            f.num_frames = 6;
            f.dim = 3;
            f.values.assign(18, 0.0);  // zero input + zero bias init = zero embedding
            ds.utterances.push_back(std::move(f));
            ds.labels.push_back(i % 2);
        }
        REQUIRE_THROWS_AS(train<double>(cfg, arch, ds), DegenerateNorm);
    }
    SECTION("NaN features surface as a NanLoss abort") {
        arch.normalize = false;
        arch.hidden = {};  // no ReLU in the path, so the NaN reaches the loss
        Dataset ds;
        ds.class_names = {"a", "b"};
        for (int i = 0; i < 4; ++i) {
            FeatureMatrix f;
            f.utt_id = "n" + std::to_string(i);
            f.num_frames = 6;
            f.dim = 3;
            f.values.assign(18, std::nan(""));
            ds.utterances.push_back(std::move(f));
            ds.labels.push_back(i % 2);
        }
        try {
            train<double>(cfg, arch, ds);
            FAIL("expected NanLoss");
        } catch (const Error& e) {
            REQUIRE(e.code() == "NanLoss");
        }
    }
    SECTION("single-speaker data is rejected") {
        Dataset ds;
        ds.class_names = {"only"};
        FeatureMatrix f;
        f.utt_id = "u0";
        f.num_frames = 6;
        f.dim = 3;
        f.values.assign(18, 1.0);
        ds.utterances.push_back(f);
        ds.labels.push_back(0);
        REQUIRE_THROWS_AS(train<double>(cfg, arch, ds), TrainingDataError);
    }
}

TEST_CASE("plateau rule lowers the learning rate", "[train]") {
    const auto ds = separable_dataset(4, 8, 3);
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.epochs = 6;
    cfg.crop_min = 6;
    cfg.crop_max = 8;
    cfg.learning_rates = {0.1, 0.01};
    cfg.plateau_epochs = 1;
    cfg.plateau_rel_improvement = 2.0;  // any epoch counts as a plateau
    ArchConfig arch;
    arch.feature_dim = 3;
    arch.hidden = {4};
    arch.embedding_dim = 3;
    arch.normalize = false;

    const auto r = train<double>(cfg, arch, ds);
    REQUIRE(r.stats.epochs[0].learning_rate == 0.1);
    REQUIRE(r.stats.epochs[1].learning_rate == 0.1);  // drop decided after epoch 1
    REQUIRE(r.stats.epochs[2].learning_rate == 0.01);
    REQUIRE(r.stats.epochs.back().learning_rate == 0.01);  // no rate below the last
}

TEST_CASE("checkpoint round trip", "[train]") {
    const auto dir = std::filesystem::temp_directory_path() / "dnsv_ckpt_test";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "model.ckpt").string();

    Rng rng(55);
    ArchConfig arch;
    arch.feature_dim = 5;
    arch.hidden = {7};
    arch.embedding_dim = 4;
    arch.num_classes = 3;
    arch.normalize = true;
    arch.alpha_mode = AlphaMode::Trainable;
    arch.alpha = 9.0;
    Model<double> m(arch);
    m.init_params(rng);

    save_checkpoint(path, m);
    REQUIRE(std::filesystem::exists(path + ".json"));
    const auto loaded = load_checkpoint(path);

    REQUIRE(loaded.arch().to_json() == m.arch().to_json());
    const auto p1 = m.parameters();
    const auto p2 = loaded.parameters();
    REQUIRE(p1.size() == p2.size());
    for (std::size_t i = 0; i < p1.size(); ++i) REQUIRE(p1[i]->storage() == p2[i]->storage());
    REQUIRE(fingerprint(m) == fingerprint(loaded));

    const auto x = gradcheck::random_tensor({1, 6, 5}, rng);
    const auto y1 = m.forward(x, nullptr);
    const auto y2 = loaded.forward(x, nullptr);
    for (std::size_t i = 0; i < y1.size(); ++i) REQUIRE(y1[i] == y2[i]);

    SECTION("fingerprint tracks parameter changes") {
        auto reloaded = load_checkpoint(path);
        auto ps = reloaded.parameters();
        (*ps[0])[0] += 1e-3;
        REQUIRE(fingerprint(reloaded) != fingerprint(m));
    }
    SECTION("truncated file is rejected") {
        const auto bad = (dir / "bad.ckpt").string();
        std::ofstream(bad, std::ios::binary) << "DNSV1";
        REQUIRE_THROWS_AS(load_checkpoint(bad), IoError);
    }
}

TEST_CASE("float32 training path stays finite and learns", "[train]") {
    const auto ds = separable_dataset(8, 10, 4);
    TrainConfig cfg;
    cfg.batch_size = 16;
    cfg.epochs = 60;
    cfg.crop_min = 8;
    cfg.crop_max = 10;
    cfg.dtype = "float32";
    ArchConfig arch;
    arch.feature_dim = 4;
    arch.hidden = {8};
    arch.embedding_dim = 4;
    arch.normalize = true;
    arch.alpha = 8.0;

    const auto r = train<float>(cfg, arch, ds);
    REQUIRE(std::isfinite(r.stats.final_loss()));
    REQUIRE(r.stats.final_loss() < r.stats.epochs.front().loss);

    // float32 models persist as float64 checkpoints
    const auto dir = std::filesystem::temp_directory_path() / "dnsv_ckpt_test";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "f32.ckpt").string();
    save_checkpoint(path, r.model);
    const auto loaded = load_checkpoint(path);
    REQUIRE(loaded.arch().embedding_dim == 4);
}
