#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dnsv/binio.hpp"
#include "dnsv/errors.hpp"

namespace dnsv {

struct Trial {
    std::string utt_a, utt_b;
    bool target = false;
};

using TrialList = std::vector<Trial>;

struct ScoredTrial {
    std::string utt_a, utt_b;
    double score = 0.0;
};

struct DcfParams {
    double p_target = 0.01;
    double c_miss = 1.0;
    double c_fa = 1.0;

    void validate() const {
        if (!(p_target > 0.0 && p_target < 1.0)) throw DomainError("p_target must be in (0,1)");
        if (!(c_miss > 0.0 && c_fa > 0.0)) throw DomainError("detection costs must be > 0");
    }
};

namespace detail {

// Threshold sweep support. Candidates are the distinct scores in ascending
// order plus a virtual +inf (reject everything). At threshold t,
//   P_miss(t) = fraction of targets with score <  t
//   P_fa(t)   = fraction of nontargets with score >= t
// so P_miss - P_fa is non-decreasing from -1 to +1 along the sweep.
struct SweepPoint {
    double threshold;  // +inf for the final all-reject point
    double p_miss;
    double p_fa;
};

inline std::vector<SweepPoint> sweep_points(const std::vector<double>& scores,
                                            const std::vector<bool>& labels) {
    if (scores.size() != labels.size()) throw ConfigError("scores/labels length mismatch");
    std::size_t n_target = 0, n_nontarget = 0;
    for (const bool l : labels) (l ? n_target : n_nontarget)++;
    if (n_target == 0 || n_nontarget == 0)
        throw MetricUndefined("need at least one target and one nontarget trial");
    for (const double s : scores)
        if (!std::isfinite(s)) throw MetricUndefined("non-finite score");

    std::map<double, std::pair<std::size_t, std::size_t>> counts;  // score -> (targets, nontargets)
    for (std::size_t i = 0; i < scores.size(); ++i) {
        auto& c = counts[scores[i]];
        (labels[i] ? c.first : c.second)++;
    }

    std::vector<SweepPoint> pts;
    pts.reserve(counts.size() + 1);
    std::size_t targets_below = 0, nontargets_below = 0;
    for (const auto& [s, c] : counts) {
        pts.push_back({s, static_cast<double>(targets_below) / static_cast<double>(n_target),
                       static_cast<double>(n_nontarget - nontargets_below) /
                           static_cast<double>(n_nontarget)});
        targets_below += c.first;
        nontargets_below += c.second;
    }
    pts.push_back({std::numeric_limits<double>::infinity(), 1.0, 0.0});
    return pts;
}

}  // namespace detail

struct EerResult {
    double eer = 0.0;
    double threshold = 0.0;
};

// EER at the crossing of P_miss and P_fa, linearly interpolated between the
// two adjacent sweep points that bracket the sign change. An exact tie at a
// candidate threshold is returned as-is.
inline EerResult compute_eer(const std::vector<double>& scores, const std::vector<bool>& labels) {
    const auto pts = detail::sweep_points(scores, labels);
    for (std::size_t k = 0; k < pts.size(); ++k) {
        const double diff = pts[k].p_miss - pts[k].p_fa;
        if (diff < 0.0) continue;
        if (diff == 0.0) return {pts[k].p_miss, pts[k].threshold};
        // First point with p_miss > p_fa; k >= 1 because diff = -1 at k = 0.
        const auto& lo = pts[k - 1];
        const auto& hi = pts[k];
        const double denom = (hi.p_miss - lo.p_miss) + (lo.p_fa - hi.p_fa);
        const double frac = (lo.p_fa - lo.p_miss) / denom;
        const double eer = lo.p_miss + frac * (hi.p_miss - lo.p_miss);
        const double thr = std::isinf(hi.threshold) ? lo.threshold
                                                    : 0.5 * (lo.threshold + hi.threshold);
        return {eer, thr};
    }
    throw MetricUndefined("EER crossing not found");  // unreachable for valid input
}

struct DcfResult {
    double value = 0.0;
    double threshold = 0.0;  // +inf means "reject everything"
};

// Minimum over the threshold sweep of the normalized detection cost
//   [c_miss * P_miss * p + c_fa * P_fa * (1-p)] / min(c_miss * p, c_fa * (1-p)).
// Ties go to the smallest threshold.
inline DcfResult compute_min_dcf(const std::vector<double>& scores,
                                 const std::vector<bool>& labels, const DcfParams& params) {
    params.validate();
    const auto pts = detail::sweep_points(scores, labels);
    const double norm =
        std::min(params.c_miss * params.p_target, params.c_fa * (1.0 - params.p_target));
    DcfResult best{std::numeric_limits<double>::infinity(), 0.0};
    for (const auto& pt : pts) {
        const double cost = (params.c_miss * pt.p_miss * params.p_target +
                             params.c_fa * pt.p_fa * (1.0 - params.p_target)) /
                            norm;
        if (cost < best.value) best = {cost, pt.threshold};
    }
    return best;
}

// DCF at one specific threshold, same counting rules as the sweep.
inline double dcf_at_threshold(const std::vector<double>& scores, const std::vector<bool>& labels,
                               const DcfParams& params, double threshold) {
    params.validate();
    std::size_t n_target = 0, n_nontarget = 0, miss = 0, fa = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i]) {
            ++n_target;
            if (scores[i] < threshold) ++miss;
        } else {
            ++n_nontarget;
            if (scores[i] >= threshold) ++fa;
        }
    }
    if (n_target == 0 || n_nontarget == 0) throw MetricUndefined("degenerate labels");
    const double p_miss = static_cast<double>(miss) / static_cast<double>(n_target);
    const double p_fa = static_cast<double>(fa) / static_cast<double>(n_nontarget);
    const double norm =
        std::min(params.c_miss * params.p_target, params.c_fa * (1.0 - params.p_target));
    return (params.c_miss * p_miss * params.p_target + params.c_fa * p_fa * (1.0 - params.p_target)) /
           norm;
}

// DET staircase from (P_fa, P_miss) = (1, 0) to (0, 1).
inline std::vector<std::pair<double, double>> det_points(const std::vector<double>& scores,
                                                         const std::vector<bool>& labels) {
    const auto pts = detail::sweep_points(scores, labels);
    std::vector<std::pair<double, double>> out;
    out.reserve(pts.size());
    for (const auto& pt : pts) out.emplace_back(pt.p_fa, pt.p_miss);
    return out;
}

// Smallest scale for which a C-way softmax over sphere-bound embeddings can
// still reach classification probability p: ln(p (C-2) / (1-p)). Undefined
// for C < 3, where the argument is <= 0.
inline double alpha_lower_bound(double p, int num_classes) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("p must be in (0,1)");
    if (num_classes < 3) throw DomainError("alpha bound needs C >= 3");
    return std::log(p * static_cast<double>(num_classes - 2) / (1.0 - p));
}

struct EvalReport {
    double eer = 0.0;
    double eer_threshold = 0.0;
    struct DcfRow {
        DcfParams params;
        double value = 0.0;
        double threshold = 0.0;
    };
    std::vector<DcfRow> min_dcf;
    std::size_t n_target = 0;
    std::size_t n_nontarget = 0;

    nlohmann::json to_json() const {
        nlohmann::json dcfs = nlohmann::json::array();
        for (const auto& d : min_dcf)
            dcfs.push_back({{"p_target", d.params.p_target},
                            {"c_miss", d.params.c_miss},
                            {"c_fa", d.params.c_fa},
                            {"value", d.value},
                            {"threshold", std::isinf(d.threshold)
                                              ? nlohmann::json(nullptr)
                                              : nlohmann::json(d.threshold)}});
        return {{"eer", eer},
                {"eer_threshold", eer_threshold},
                {"min_dcf", dcfs},
                {"n_target", n_target},
                {"n_nontarget", n_nontarget}};
    }
};

inline EvalReport evaluate(const std::vector<double>& scores, const std::vector<bool>& labels,
                           const std::vector<DcfParams>& dcf_params) {
    EvalReport r;
    for (const bool l : labels) (l ? r.n_target : r.n_nontarget)++;
    const auto eer = compute_eer(scores, labels);
    r.eer = eer.eer;
    r.eer_threshold = eer.threshold;
    for (const auto& p : dcf_params) {
        const auto d = compute_min_dcf(scores, labels, p);
        r.min_dcf.push_back({p, d.value, d.threshold});
    }
    return r;
}

// Trial list file: "<label 0|1> <utt_a> <utt_b>" per line, 1 = target.
inline TrialList load_trials(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open trial list: " + path);
    TrialList trials;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        int label;
        Trial t;
        if (!(ls >> label >> t.utt_a >> t.utt_b) || (label != 0 && label != 1))
            throw IoError("bad trial line: " + line);
        t.target = label == 1;
        trials.push_back(std::move(t));
    }
    if (trials.empty()) throw IoError("empty trial list: " + path);
    return trials;
}

inline void save_trials(const std::string& path, const TrialList& trials) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write trial list: " + path);
    for (const auto& t : trials)
        os << (t.target ? 1 : 0) << ' ' << t.utt_a << ' ' << t.utt_b << '\n';
    if (!os) throw IoError("failed writing trial list: " + path);
}

// Score file: "<utt_a> <utt_b> <score>" per line.
inline std::vector<ScoredTrial> load_scores(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open score file: " + path);
    std::vector<ScoredTrial> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        ScoredTrial s;
        if (!(ls >> s.utt_a >> s.utt_b >> s.score)) throw IoError("bad score line: " + line);
        out.push_back(std::move(s));
    }
    return out;
}

inline void save_scores(const std::string& path, const std::vector<ScoredTrial>& scores) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write score file: " + path);
    for (const auto& s : scores)
        os << s.utt_a << ' ' << s.utt_b << ' ' << format_double(s.score) << '\n';
    if (!os) throw IoError("failed writing score file: " + path);
}

// Joins a score file with a trial list: one score per trial, matched by the
// (utt_a, utt_b) pair. Missing scores are an error; surplus scores are ignored.
inline std::pair<std::vector<double>, std::vector<bool>> align_scores(
    const TrialList& trials, const std::vector<ScoredTrial>& scores) {
    std::map<std::pair<std::string, std::string>, double> by_pair;
    for (const auto& s : scores) by_pair[{s.utt_a, s.utt_b}] = s.score;
    std::vector<double> vals;
    std::vector<bool> labels;
    vals.reserve(trials.size());
    labels.reserve(trials.size());
    for (const auto& t : trials) {
        const auto it = by_pair.find({t.utt_a, t.utt_b});
        if (it == by_pair.end())
            throw IoError("no score for trial " + t.utt_a + " " + t.utt_b);
        vals.push_back(it->second);
        labels.push_back(t.target);
    }
    return {std::move(vals), std::move(labels)};
}

inline void save_det_points(const std::string& path,
                            const std::vector<std::pair<double, double>>& pts) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write DET file: " + path);
    for (const auto& [p_fa, p_miss] : pts)
        os << format_double(p_fa) << ' ' << format_double(p_miss) << '\n';
    if (!os) throw IoError("failed writing DET file: " + path);
}

}  // namespace dnsv
