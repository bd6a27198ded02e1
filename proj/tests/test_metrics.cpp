#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "dnsv/metrics.hpp"
#include "dnsv/rng.hpp"
#include "metric_oracle.hpp"

using namespace dnsv;
using Catch::Approx;

namespace {

// Random trial sets with deliberate ties: half the draws land on a coarse
// grid so tie handling is exercised.
std::pair<std::vector<double>, std::vector<bool>> random_trials(Rng& rng) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(2, 50));
    std::vector<double> scores;
    std::vector<bool> labels;
    bool saw_t = false, saw_n = false;
    for (std::size_t i = 0; i < n; ++i) {
        const bool target = rng.uniform() < 0.5;
        double s = rng.normal();
        if (rng.uniform() < 0.5) s = std::round(s * 4.0) / 4.0;
        scores.push_back(s);
        labels.push_back(target);
        (target ? saw_t : saw_n) = true;
    }
    if (!saw_t) labels[0] = true;
    if (!saw_n) labels[labels.size() - 1] = false;
    return {scores, labels};
}

}  // namespace

TEST_CASE("EER boundary examples", "[metrics]") {
    SECTION("perfect separation") {
        const auto r = compute_eer({0.9, 0.8, 0.1, 0.2}, {true, true, false, false});
        REQUIRE(r.eer == 0.0);
    }
    SECTION("inverted scores") {
        const auto r = compute_eer({0.1, 0.2, 0.8, 0.9}, {true, true, false, false});
        REQUIRE(r.eer == 1.0);
    }
    SECTION("interleaved scores give 0.5 at the tie threshold") {
        const auto r = compute_eer({0.8, 0.2, 0.7, 0.1}, {true, true, false, false});
        REQUIRE(r.eer == 0.5);
        REQUIRE(r.threshold == 0.7);
        REQUIRE(r.eer == Approx(metric_oracle::eer({0.8, 0.2, 0.7, 0.1},
                                                   {true, true, false, false})));
    }
    SECTION("degenerate labels are rejected") {
        REQUIRE_THROWS_AS(compute_eer({0.1, 0.2}, {true, true}), MetricUndefined);
        REQUIRE_THROWS_AS(compute_eer({0.1, 0.2}, {false, false}), MetricUndefined);
    }
}

TEST_CASE("minDCF examples", "[metrics]") {
    const DcfParams p001{0.01, 1.0, 1.0};
    SECTION("perfect separation scores zero") {
        const auto r =
            compute_min_dcf({0.9, 0.8, 0.1, 0.2}, {true, true, false, false}, p001);
        REQUIRE(r.value == 0.0);
    }
    SECTION("uninformative constant scores cost exactly 1") {
        const auto r = compute_min_dcf({0.5, 0.5, 0.5, 0.5}, {true, true, false, false}, p001);
        REQUIRE(r.value == 1.0);
    }
    SECTION("interleaved case, hand-swept: accept-top-one wins") {
        // Candidates walk: 99, 99, 49.5, 50, 0.5, 1 -> min 0.5 at t = 0.8.
        const std::vector<double> s = {0.8, 0.2, 0.7, 0.1};
        const std::vector<bool> l = {true, true, false, false};
        const auto r = compute_min_dcf(s, l, p001);
        REQUIRE(r.value == Approx(0.5).epsilon(1e-15));
        REQUIRE(r.threshold == 0.8);
        REQUIRE(r.value == Approx(metric_oracle::min_dcf(s, l, p001)).epsilon(1e-15));
    }
    SECTION("bad parameters are rejected") {
        REQUIRE_THROWS_AS(compute_min_dcf({0.1}, {true}, DcfParams{0.0, 1.0, 1.0}),
                          DomainError);
        REQUIRE_THROWS_AS(compute_min_dcf({0.1}, {true}, DcfParams{0.5, -1.0, 1.0}),
                          DomainError);
    }
}

TEST_CASE("metrics match the exhaustive sweep oracle on random sets", "[metrics]") {
    Rng rng(55);
    const DcfParams p1{0.01, 1.0, 1.0};
    const DcfParams p2{0.001, 1.0, 1.0};
    const DcfParams p3{0.1, 0.3, 2.0};
    for (int t = 0; t < 300; ++t) {
        const auto [scores, labels] = random_trials(rng);
        REQUIRE(std::abs(compute_eer(scores, labels).eer -
                         metric_oracle::eer(scores, labels)) < 1e-12);
        for (const auto& p : {p1, p2, p3})
            REQUIRE(std::abs(compute_min_dcf(scores, labels, p).value -
                             metric_oracle::min_dcf(scores, labels, p)) < 1e-12);
    }
}

TEST_CASE("metric invariances", "[metrics]") {
    Rng rng(56);
    for (int t = 0; t < 40; ++t) {
        const auto [scores, labels] = random_trials(rng);
        const double eer0 = compute_eer(scores, labels).eer;
        const DcfParams p{0.05, 1.0, 1.0};
        const double dcf0 = compute_min_dcf(scores, labels, p).value;

        // strictly increasing transforms leave both metrics unchanged
        std::vector<double> affine(scores), expo(scores), arct(scores);
        for (auto& s : affine) s = 2.0 * s + 7.0;
        for (auto& s : expo) s = std::exp(s);
        for (auto& s : arct) s = std::atan(s);
        for (const auto& tr : {affine, expo, arct}) {
            REQUIRE(compute_eer(tr, labels).eer == eer0);
            REQUIRE(compute_min_dcf(tr, labels, p).value == dcf0);
        }

        // permuting trials changes nothing
        std::vector<std::size_t> perm(scores.size());
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        rng.shuffle(perm);
        std::vector<double> ps;
        std::vector<bool> pl;
        for (const std::size_t i : perm) {
            ps.push_back(scores[i]);
            pl.push_back(labels[i]);
        }
        REQUIRE(compute_eer(ps, pl).eer == eer0);
        REQUIRE(compute_min_dcf(ps, pl, p).value == dcf0);

        // minDCF never exceeds the DCF at the EER threshold, and stays in [0,1]
        const double at_eer = dcf_at_threshold(scores, labels, p,
                                               compute_eer(scores, labels).threshold);
        REQUIRE(dcf0 <= at_eer + 1e-15);
        REQUIRE(dcf0 >= 0.0);
        REQUIRE(dcf0 <= 1.0 + 1e-15);
    }
}

TEST_CASE("alpha lower bound", "[metrics]") {
    SECTION("published operating point: p=0.9, C=1211") {
        const double v = alpha_lower_bound(0.9, 1211);
        REQUIRE(v == Approx(std::log(0.9 * 1209.0 / 0.1)).margin(1e-9));
        REQUIRE(v >= 9.0);
        REQUIRE(v <= 9.5);
    }
    SECTION("p=0.5, C=3 sits exactly at zero") {
        REQUIRE(alpha_lower_bound(0.5, 3) == Approx(0.0).margin(1e-15));
    }
    SECTION("C=2 and out-of-range p are domain errors") {
        REQUIRE_THROWS_AS(alpha_lower_bound(0.9, 2), DomainError);
        REQUIRE_THROWS_AS(alpha_lower_bound(0.0, 10), DomainError);
        REQUIRE_THROWS_AS(alpha_lower_bound(1.0, 10), DomainError);
    }
}

TEST_CASE("det points form a staircase with both endpoints", "[metrics]") {
    Rng rng(57);
    for (int t = 0; t < 20; ++t) {
        const auto [scores, labels] = random_trials(rng);
        const auto pts = det_points(scores, labels);
        REQUIRE(pts.front() == std::pair<double, double>{1.0, 0.0});
        REQUIRE(pts.back() == std::pair<double, double>{0.0, 1.0});
        for (std::size_t i = 1; i < pts.size(); ++i) {
            REQUIRE(pts[i].first <= pts[i - 1].first);    // P_fa non-increasing
            REQUIRE(pts[i].second >= pts[i - 1].second);  // P_miss non-decreasing
        }
    }
}

TEST_CASE("evaluate produces the full report", "[metrics]") {
    const std::vector<double> scores = {0.9, 0.8, 0.1, 0.2};
    const std::vector<bool> labels = {true, true, false, false};
    const auto rep = evaluate(scores, labels, {{0.01, 1.0, 1.0}, {0.001, 1.0, 1.0}});
    REQUIRE(rep.eer == 0.0);
    REQUIRE(rep.n_target == 2);
    REQUIRE(rep.n_nontarget == 2);
    REQUIRE(rep.min_dcf.size() == 2);
    const auto j = rep.to_json();
    REQUIRE(j["eer"] == 0.0);
    REQUIRE(j["min_dcf"].size() == 2);
    REQUIRE(j["min_dcf"][0]["p_target"] == 0.01);
}

TEST_CASE("trial and score files", "[metrics]") {
    const auto dir = std::filesystem::temp_directory_path() / "dnsv_metrics_test";
    std::filesystem::create_directories(dir);

    TrialList trials = {{"a", "b", true}, {"a", "c", false}, {"b", "c", false}};
    const auto tpath = (dir / "trials.txt").string();
    save_trials(tpath, trials);
    const auto tback = load_trials(tpath);
    REQUIRE(tback.size() == 3);
    REQUIRE(tback[0].target);
    REQUIRE_FALSE(tback[1].target);
    REQUIRE(tback[2].utt_b == "c");

    std::vector<ScoredTrial> scores = {{"a", "b", 1.25}, {"a", "c", -0.5}, {"b", "c", 0.0}};
    const auto spath = (dir / "scores.txt").string();
    save_scores(spath, scores);
    const auto sback = load_scores(spath);
    REQUIRE(sback.size() == 3);
    REQUIRE(sback[0].score == 1.25);

    SECTION("align joins by pair and rejects gaps") {
        const auto [vals, labels] = align_scores(trials, scores);
        REQUIRE(vals == std::vector<double>{1.25, -0.5, 0.0});
        REQUIRE(labels == std::vector<bool>{true, false, false});
        TrialList extra = trials;
        extra.push_back({"x", "y", false});
        REQUIRE_THROWS_AS(align_scores(extra, scores), IoError);
    }
    SECTION("malformed trial line is rejected") {
        const auto bad = (dir / "bad_trials.txt").string();
        std::ofstream(bad) << "2 a b\n";
        REQUIRE_THROWS_AS(load_trials(bad), IoError);
    }
}
