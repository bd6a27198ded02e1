#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <vector>

#include "dnsv/backend.hpp"
#include "dnsv/metrics.hpp"
#include "dnsv/rng.hpp"
#include "plda_oracle.hpp"

using namespace dnsv;
using Catch::Approx;
using plda_oracle::oracle_plda_llr;

namespace {

PldaModel random_plda(std::size_t d, Rng& rng) {
    PldaModel m;
    m.mean.resize(static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < m.mean.size(); ++i) m.mean[i] = rng.normal();
    Eigen::MatrixXd lb = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d),
                                               static_cast<Eigen::Index>(d));
    Eigen::MatrixXd lw = lb;
    for (Eigen::Index i = 0; i < lb.rows(); ++i)
        for (Eigen::Index j = 0; j < lb.cols(); ++j) {
            lb(i, j) = rng.normal();
            lw(i, j) = rng.normal();
        }
    m.between = lb * lb.transpose();
    m.within =
        lw * lw.transpose() + 0.5 * Eigen::MatrixXd::Identity(lb.rows(), lb.cols());
    return m;
}

// Synthetic draw from the two-covariance model itself; the generator's
// parameters are the ground truth for the EM recovery check.
std::pair<EmbeddingSet, std::map<std::string, std::string>> sample_corpus(
    double b_var, double w_var, std::size_t n_spk, std::size_t n_utt, Rng& rng) {
    EmbeddingSet set;
    set.dim = 1;
    std::map<std::string, std::string> labels;
    for (std::size_t s = 0; s < n_spk; ++s) {
        const double y = rng.normal(0.0, std::sqrt(b_var));
        for (std::size_t u = 0; u < n_utt; ++u) {
            const std::string id = "s" + std::to_string(s) + "_u" + std::to_string(u);
            set.entries[id] = {y + rng.normal(0.0, std::sqrt(w_var))};
            labels[id] = "s" + std::to_string(s);
        }
    }
    return {set, labels};
}

}  // namespace

TEST_CASE("length_normalize", "[backend]") {
    REQUIRE(length_normalize({3.0, 4.0}) == std::vector<double>{0.6, 0.8});
    const std::vector<double> unit = {0.0, 1.0, 0.0};
    REQUIRE(length_normalize(unit) == unit);
    REQUIRE(length_normalize({-2.0, 0.0}) == std::vector<double>{-1.0, 0.0});
    REQUIRE_THROWS_AS(length_normalize({0.0, 0.0}), DegenerateNorm);
}

TEST_CASE("inner product and cosine", "[backend]") {
    REQUIRE(inner_product({1.0, 0.0}, {0.0, 1.0}) == 0.0);
    const std::vector<double> a = {1.5, -2.0, 0.5};
    double norm2 = 0.0;
    for (const double v : a) norm2 += v * v;
    REQUIRE(inner_product(a, a) == Approx(norm2));

    const std::vector<double> b = {0.3, 1.1, -0.4};
    REQUIRE(cosine(a, a) == Approx(1.0));
    std::vector<double> neg = a;
    for (auto& v : neg) v = -v;
    REQUIRE(cosine(a, neg) == Approx(-1.0));
    std::vector<double> scaled = a;
    for (auto& v : scaled) v *= 17.0;
    REQUIRE(cosine(scaled, b) == Approx(cosine(a, b)).epsilon(1e-12));

    SECTION("range stays in [-1, 1]") {
        Rng rng(31);
        for (int t = 0; t < 200; ++t) {
            std::vector<double> u(5), v(5);
            for (auto& x : u) x = rng.normal() * std::exp(rng.normal() * 3.0);
            for (auto& x : v) x = rng.normal() * std::exp(rng.normal() * 3.0);
            const double c = cosine(u, v);
            REQUIRE(c >= -1.0);
            REQUIRE(c <= 1.0);
        }
    }
    SECTION("on equal-norm vectors inner product equals alpha^2 cosine") {
        Rng rng(32);
        const double alpha = 12.0;
        for (int t = 0; t < 50; ++t) {
            std::vector<double> u(6), v(6);
            for (auto& x : u) x = rng.normal();
            for (auto& x : v) x = rng.normal();
            u = length_normalize(u);
            v = length_normalize(v);
            for (auto& x : u) x *= alpha;
            for (auto& x : v) x *= alpha;
            REQUIRE(inner_product(u, v) ==
                    Approx(alpha * alpha * cosine(u, v)).epsilon(1e-9));
        }
    }
}

TEST_CASE("plda scoring against the density oracle", "[backend]") {
    SECTION("hand-derived 1D case: mu=0, B=1, W=1, a=b=1") {
        PldaModel m;
        m.mean = Eigen::VectorXd::Zero(1);
        m.between = Eigen::MatrixXd::Ones(1, 1);
        m.within = Eigen::MatrixXd::Ones(1, 1);
        const double llr = plda_score(m, {1.0}, {1.0});
        // 0.5 ln(4/3) + 1/6, worked out from the explicit 2x2 densities
        REQUIRE(llr == Approx(0.3105077028925571).margin(1e-10));
        REQUIRE(llr == Approx(oracle_plda_llr(m, {1.0}, {1.0})).margin(1e-10));
    }
    SECTION("random 1D and 2D models match the oracle to 1e-10") {
        Rng rng(33);
        for (const std::size_t d : {1u, 2u}) {
            for (int t = 0; t < 25; ++t) {
                const auto m = random_plda(d, rng);
                const PldaScorer scorer(m);
                std::vector<double> a(d), b(d);
                for (auto& x : a) x = rng.normal() * 2.0;
                for (auto& x : b) x = rng.normal() * 2.0;
                REQUIRE(scorer.score(a, b) ==
                        Approx(oracle_plda_llr(m, a, b)).margin(1e-10));
            }
        }
    }
    SECTION("B = 0 gives LLR exactly 0") {
        Rng rng(34);
        PldaModel m;
        m.mean = Eigen::VectorXd::Zero(3);
        m.between = Eigen::MatrixXd::Zero(3, 3);
        m.within = Eigen::MatrixXd::Identity(3, 3) * 1.7;
        const PldaScorer scorer(m);
        for (int t = 0; t < 20; ++t) {
            std::vector<double> a(3), b(3);
            for (auto& x : a) x = rng.normal();
            for (auto& x : b) x = rng.normal();
            REQUIRE(scorer.score(a, b) == 0.0);
        }
    }
    SECTION("score is symmetric to the last bit") {
        Rng rng(35);
        const auto m = random_plda(4, rng);
        const PldaScorer scorer(m);
        for (int t = 0; t < 50; ++t) {
            std::vector<double> a(4), b(4);
            for (auto& x : a) x = rng.normal() * 3.0;
            for (auto& x : b) x = rng.normal() * 3.0;
            REQUIRE(scorer.score(a, b) == scorer.score(b, a));
        }
    }
    SECTION("invariant under a joint mean shift") {
        Rng rng(36);
        const auto m = random_plda(3, rng);
        auto shifted = m;
        const std::vector<double> delta = {0.7, -1.3, 2.2};
        for (Eigen::Index i = 0; i < 3; ++i) shifted.mean[i] += delta[static_cast<std::size_t>(i)];
        const PldaScorer s0(m), s1(shifted);
        for (int t = 0; t < 20; ++t) {
            std::vector<double> a(3), b(3), a2(3), b2(3);
            for (std::size_t i = 0; i < 3; ++i) {
                a[i] = rng.normal();
                b[i] = rng.normal();
                a2[i] = a[i] + delta[i];
                b2[i] = b[i] + delta[i];
            }
            REQUIRE(s0.score(a, b) == Approx(s1.score(a2, b2)).margin(1e-9));
        }
    }
    SECTION("non-PD covariance is rejected") {
        PldaModel m;
        m.mean = Eigen::VectorXd::Zero(2);
        m.between = Eigen::MatrixXd::Identity(2, 2);
        m.within = -Eigen::MatrixXd::Identity(2, 2);
        REQUIRE_THROWS_AS(PldaScorer(m), ModelDegenerate);
    }
    SECTION("dimension mismatch is rejected") {
        PldaModel m;
        m.mean = Eigen::VectorXd::Zero(2);
        m.between = Eigen::MatrixXd::Identity(2, 2);
        m.within = Eigen::MatrixXd::Identity(2, 2);
        REQUIRE_THROWS_AS(plda_score(m, {1.0}, {1.0, 2.0}), ConfigError);
    }
}

TEST_CASE("plda EM estimation", "[backend]") {
    SECTION("recovers 1D variances within 10% from 500 speakers x 10 utts") {
        Rng rng(37);
        const auto [set, labels] = sample_corpus(2.0, 1.0, 500, 10, rng);
        const auto r = plda_train(set, labels, 20);
        REQUIRE(std::abs(r.model.between(0, 0) - 2.0) / 2.0 < 0.10);
        REQUIRE(std::abs(r.model.within(0, 0) - 1.0) / 1.0 < 0.10);
    }
    SECTION("log-likelihood is non-decreasing across EM iterations") {
        Rng rng(38);
        // 2D, unbalanced per-speaker counts
        EmbeddingSet set;
        set.dim = 2;
        std::map<std::string, std::string> labels;
        for (int s = 0; s < 40; ++s) {
            const double y0 = rng.normal() * 1.5, y1 = rng.normal() * 0.8;
            const int n = 2 + static_cast<int>(rng.uniform_int(0, 6));
            for (int u = 0; u < n; ++u) {
                const std::string id = "s" + std::to_string(s) + "_u" + std::to_string(u);
                set.entries[id] = {y0 + rng.normal() * 0.9, y1 + rng.normal() * 1.1};
                labels[id] = "s" + std::to_string(s);
            }
        }
        const auto r = plda_train(set, labels, 20);
        REQUIRE(r.loglik.size() == 20);
        for (std::size_t i = 1; i < r.loglik.size(); ++i)
            REQUIRE(r.loglik[i] >= r.loglik[i - 1] - 1e-8);
    }
    SECTION("identical utterances per speaker floor the within covariance") {
        EmbeddingSet set;
        set.dim = 2;
        std::map<std::string, std::string> labels;
        Rng rng(39);
        for (int s = 0; s < 6; ++s) {
            const std::vector<double> v = {rng.normal(), rng.normal()};
            for (int u = 0; u < 3; ++u) {
                const std::string id = "s" + std::to_string(s) + "_u" + std::to_string(u);
                set.entries[id] = v;
                labels[id] = "s" + std::to_string(s);
            }
        }
        const auto r = plda_train(set, labels, 5);
        REQUIRE(r.floor_events > 0);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r.model.within);
        REQUIRE(es.eigenvalues().maxCoeff() < 1e-6);  // essentially the floor
    }
    SECTION("insufficient data is rejected") {
        EmbeddingSet set;
        set.dim = 1;
        set.entries["a"] = {1.0};
        set.entries["b"] = {2.0};
        REQUIRE_THROWS_AS(plda_train(set, {{"a", "s1"}, {"b", "s1"}}, 3), TrainingDataError);
        REQUIRE_THROWS_AS(plda_train(set, {{"a", "s1"}, {"b", "s2"}}, 3), TrainingDataError);
    }
}

TEST_CASE("plda file round trip", "[backend]") {
    Rng rng(40);
    const auto m = random_plda(3, rng);
    const auto dir = std::filesystem::temp_directory_path() / "dnsv_plda_test";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "m.plda").string();
    save_plda(path, m);
    REQUIRE(std::filesystem::exists(path + ".json"));
    const auto back = load_plda(path);
    REQUIRE(back.mean == m.mean);
    REQUIRE(back.between == m.between);
    REQUIRE(back.within == m.within);
}

TEST_CASE("center_and_normalize", "[backend]") {
    EmbeddingSet set;
    set.dim = 2;
    set.entries["a"] = {2.0, 0.0};
    set.entries["b"] = {4.0, 0.0};
    const auto out = center_and_normalize(set);
    // mean is (3, 0); centered vectors are (-1,0) and (1,0)
    REQUIRE(out.entries.at("a") == std::vector<double>{-1.0, 0.0});
    REQUIRE(out.entries.at("b") == std::vector<double>{1.0, 0.0});

    Rng rng(41);
    EmbeddingSet big;
    big.dim = 5;
    for (int i = 0; i < 30; ++i) {
        std::vector<double> v(5);
        for (auto& x : v) x = rng.normal() * 4.0 + 1.0;
        big.entries["u" + std::to_string(i)] = v;
    }
    const auto nb = center_and_normalize(big);
    for (const auto& [id, v] : nb.entries) {
        double n2 = 0.0;
        for (const double x : v) n2 += x * x;
        REQUIRE(std::sqrt(n2) == Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("equal-norm embeddings rank identically under inner product and cosine",
          "[backend]") {
    Rng rng(42);
    const double alpha = 9.0;
    EmbeddingSet set;
    set.dim = 4;
    std::vector<std::string> ids;
    for (int i = 0; i < 20; ++i) {
        std::vector<double> v(4);
        for (auto& x : v) x = rng.normal();
        v = length_normalize(v);
        for (auto& x : v) x *= alpha;
        const std::string id = "e" + std::to_string(i);
        set.entries[id] = v;
        ids.push_back(id);
    }
    std::vector<double> s_inner, s_cos;
    std::vector<bool> labels;
    for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = i + 1; j < ids.size(); ++j) {
            s_inner.push_back(inner_product(set.entries[ids[i]], set.entries[ids[j]]));
            s_cos.push_back(cosine(set.entries[ids[i]], set.entries[ids[j]]));
            labels.push_back((i + j) % 3 == 0);  // arbitrary but fixed labeling
        }
    const auto eer_i = compute_eer(s_inner, labels);
    const auto eer_c = compute_eer(s_cos, labels);
    REQUIRE(eer_i.eer == eer_c.eer);
    const DcfParams params{0.01, 1.0, 1.0};
    REQUIRE(compute_min_dcf(s_inner, labels, params).value ==
            compute_min_dcf(s_cos, labels, params).value);
}
