#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <nlohmann/json.hpp>

#include "dnsv/binio.hpp"
#include "dnsv/embedding.hpp"
#include "dnsv/errors.hpp"

namespace dnsv {

inline std::vector<double> length_normalize(const std::vector<double>& v) {
    double n2 = 0.0;
    for (const double x : v) n2 += x * x;
    const double n = std::sqrt(n2);
    if (!(n > 1e-12)) throw DegenerateNorm("cannot length-normalize a near-zero vector");
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
    return out;
}

inline double inner_product(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ConfigError("inner_product: dim mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Length-normalized inner product, clamped to [-1, 1] against rounding.
inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    const double s = inner_product(length_normalize(a), length_normalize(b));
    return std::clamp(s, -1.0, 1.0);
}

// Two-covariance generative model: speaker mean y ~ N(mu, B), observation
// x | y ~ N(y, W). B is PSD, W is PD (floored during training).
struct PldaModel {
    Eigen::VectorXd mean;
    Eigen::MatrixXd between;
    Eigen::MatrixXd within;

    std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
};

struct PldaTrainResult {
    PldaModel model;
    std::vector<double> loglik;  // total marginal log-likelihood after each EM iteration
    int floor_events = 0;
};

namespace detail {

struct SpeakerGroup {
    Eigen::MatrixXd x;     // n x D observations
    Eigen::VectorXd mean;  // sample mean
    std::size_t n = 0;
};

// min-eigenvalue floor: W += 1e-8 * trace(W)/D * I when the smallest
// eigenvalue drops under 1e-10. A zero-trace W falls back to an absolute
// 1e-10 * I so the matrix stays invertible.
inline bool floor_within(Eigen::MatrixXd& w) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(w);
    if (es.eigenvalues().minCoeff() >= 1e-10) return false;
    const double d = static_cast<double>(w.rows());
    const double bump = std::max(1e-8 * w.trace() / d, 1e-10);
    w += bump * Eigen::MatrixXd::Identity(w.rows(), w.cols());
    return true;
}

inline double log_det_llt(const Eigen::LLT<Eigen::MatrixXd>& llt) {
    return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

// log N(x; mu, C) via a prefactored Cholesky of C.
inline double log_gaussian(const Eigen::VectorXd& x, const Eigen::VectorXd& mu,
                           const Eigen::LLT<Eigen::MatrixXd>& llt, double logdet) {
    const Eigen::VectorXd d = x - mu;
    const double quad = d.dot(llt.solve(d));
    const double dim = static_cast<double>(x.size());
    return -0.5 * (dim * std::log(2.0 * std::numbers::pi) + logdet + quad);
}

// Total marginal log-likelihood of all speaker groups under (mu, B, W),
// using the sufficient-statistic factorization
//   log p(x_1..x_n) = log N(xbar; mu, B + W/n) - (n-1)/2 log|W|
//                     - (n-1)D/2 log(2pi) - D/2 log n - 1/2 tr(W^-1 S)
inline double marginal_loglik(const std::vector<SpeakerGroup>& groups, const Eigen::VectorXd& mu,
                              const Eigen::MatrixXd& b, const Eigen::MatrixXd& w) {
    const double D = static_cast<double>(mu.size());
    Eigen::LLT<Eigen::MatrixXd> llt_w(w);
    if (llt_w.info() != Eigen::Success) throw ModelDegenerate("within covariance not PD");
    const double logdet_w = log_det_llt(llt_w);
    double total = 0.0;
    for (const auto& g : groups) {
        const double n = static_cast<double>(g.n);
        const Eigen::MatrixXd marg = b + w / n;
        Eigen::LLT<Eigen::MatrixXd> llt_m(marg);
        if (llt_m.info() != Eigen::Success) throw ModelDegenerate("marginal covariance not PD");
        total += log_gaussian(g.mean, mu, llt_m, log_det_llt(llt_m));
        if (g.n > 1) {
            Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(mu.size(), mu.size());
            for (std::size_t i = 0; i < g.n; ++i) {
                const Eigen::VectorXd d = g.x.row(static_cast<Eigen::Index>(i)).transpose() - g.mean;
                scatter.noalias() += d * d.transpose();
            }
            total += -0.5 * (n - 1.0) * (D * std::log(2.0 * std::numbers::pi) + logdet_w);
            total += -0.5 * D * std::log(n);
            total += -0.5 * llt_w.solve(scatter).trace();
        }
    }
    return total;
}

}  // namespace detail

// EM for the two-covariance model. Handles unbalanced per-speaker counts
// exactly through the posterior of each speaker mean. Initialization is the
// between/within scatter decomposition; each iteration reports the total
// marginal log-likelihood of the updated model.
inline PldaTrainResult plda_train(const EmbeddingSet& embeddings,
                                  const std::map<std::string, std::string>& utt2spk, int iters) {
    std::map<std::string, std::vector<const std::vector<double>*>> by_spk;
    for (const auto& [utt, vec] : embeddings.entries) {
        const auto it = utt2spk.find(utt);
        if (it == utt2spk.end()) throw TrainingDataError("no speaker label for " + utt);
        by_spk[it->second].push_back(&vec);
    }
    if (by_spk.size() < 2) throw TrainingDataError("PLDA needs >= 2 speakers");
    bool any_multi = false;
    for (const auto& [spk, vs] : by_spk) any_multi = any_multi || vs.size() >= 2;
    if (!any_multi)
        throw TrainingDataError("PLDA needs at least one speaker with >= 2 utterances");

    const Eigen::Index D = static_cast<Eigen::Index>(embeddings.dim);
    std::vector<detail::SpeakerGroup> groups;
    groups.reserve(by_spk.size());
    std::size_t total_n = 0;
    for (const auto& [spk, vs] : by_spk) {
        detail::SpeakerGroup g;
        g.n = vs.size();
        g.x.resize(static_cast<Eigen::Index>(g.n), D);
        for (std::size_t i = 0; i < g.n; ++i)
            g.x.row(static_cast<Eigen::Index>(i)) =
                Eigen::Map<const Eigen::VectorXd>(vs[i]->data(), D).transpose();
        g.mean = g.x.colwise().mean().transpose();
        groups.push_back(std::move(g));
        total_n += vs.size();
    }

    PldaTrainResult result;
    const double S = static_cast<double>(groups.size());
    const double N = static_cast<double>(total_n);

    // Moment initialization.
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(D);
    for (const auto& g : groups) mu += g.mean;
    mu /= S;
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(D, D);
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(D, D);
    for (const auto& g : groups) {
        const Eigen::VectorXd d = g.mean - mu;
        b.noalias() += d * d.transpose();
        for (std::size_t i = 0; i < g.n; ++i) {
            const Eigen::VectorXd r = g.x.row(static_cast<Eigen::Index>(i)).transpose() - g.mean;
            w.noalias() += r * r.transpose();
        }
    }
    b /= S;
    w /= N;
    if (detail::floor_within(w)) ++result.floor_events;

    for (int it = 0; it < iters; ++it) {
        // E-step: posterior of each speaker mean given its observations.
        std::vector<Eigen::VectorXd> post_mean(groups.size());
        std::vector<Eigen::MatrixXd> post_cov(groups.size());
        for (std::size_t s = 0; s < groups.size(); ++s) {
            const double n = static_cast<double>(groups[s].n);
            const Eigen::MatrixXd marg = b + w / n;
            Eigen::LLT<Eigen::MatrixXd> llt(marg);
            if (llt.info() != Eigen::Success) throw ModelDegenerate("marginal covariance not PD");
            const Eigen::MatrixXd gain = llt.solve(b).transpose();  // B (B + W/n)^-1
            post_mean[s] = mu + gain * (groups[s].mean - mu);
            post_cov[s] = b - gain * b;
        }

        // M-step.
        Eigen::VectorXd mu_new = Eigen::VectorXd::Zero(D);
        for (const auto& m : post_mean) mu_new += m;
        mu_new /= S;

        Eigen::MatrixXd b_new = Eigen::MatrixXd::Zero(D, D);
        for (std::size_t s = 0; s < groups.size(); ++s) {
            const Eigen::VectorXd d = post_mean[s] - mu_new;
            b_new.noalias() += post_cov[s] + d * d.transpose();
        }
        b_new /= S;

        Eigen::MatrixXd w_new = Eigen::MatrixXd::Zero(D, D);
        for (std::size_t s = 0; s < groups.size(); ++s) {
            for (std::size_t i = 0; i < groups[s].n; ++i) {
                const Eigen::VectorXd r =
                    groups[s].x.row(static_cast<Eigen::Index>(i)).transpose() - post_mean[s];
                w_new.noalias() += r * r.transpose();
            }
            w_new.noalias() += static_cast<double>(groups[s].n) * post_cov[s];
        }
        w_new /= N;

        mu = mu_new;
        b = 0.5 * (b_new + b_new.transpose());
        w = 0.5 * (w_new + w_new.transpose());
        if (detail::floor_within(w)) ++result.floor_events;
        result.loglik.push_back(detail::marginal_loglik(groups, mu, b, w));
    }

    result.model.mean = mu;
    result.model.between = b;
    result.model.within = w;
    return result;
}

// Same/different-speaker log-likelihood ratio
//   LLR = log N([a;b]; [mu;mu], [[T, B],[B, T]]) - log N([a;b]; [mu;mu], [[T, 0],[0, T]])
// with T = B + W. Evaluated through the orthogonal split u = (a+b-2mu)/sqrt(2),
// v = (a-b)/sqrt(2), which block-diagonalizes both hypotheses; the score is
// symmetric in (a, b) to the last bit.
class PldaScorer {
public:
    explicit PldaScorer(const PldaModel& model) : mean_(model.mean) {
        const Eigen::MatrixXd total = model.between + model.within;
        sum_llt_.compute(total + model.between);   // T + B = W + 2B
        diff_llt_.compute(model.within);           // T - B = W
        total_llt_.compute(total);
        if (sum_llt_.info() != Eigen::Success || diff_llt_.info() != Eigen::Success ||
            total_llt_.info() != Eigen::Success)
            throw ModelDegenerate("joint PLDA covariance is not positive definite");
        logdet_sum_ = detail::log_det_llt(sum_llt_);
        logdet_diff_ = detail::log_det_llt(diff_llt_);
        logdet_total_ = detail::log_det_llt(total_llt_);
    }

    double score(const std::vector<double>& a, const std::vector<double>& b) const {
        const Eigen::Index D = mean_.size();
        if (static_cast<Eigen::Index>(a.size()) != D || static_cast<Eigen::Index>(b.size()) != D)
            throw ConfigError("plda_score: dim mismatch with model");
        Eigen::VectorXd u(D), v(D);
        const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
        for (Eigen::Index i = 0; i < D; ++i) {
            u[i] = (a[static_cast<std::size_t>(i)] + b[static_cast<std::size_t>(i)] -
                    2.0 * mean_[i]) * inv_sqrt2;
            v[i] = (a[static_cast<std::size_t>(i)] - b[static_cast<std::size_t>(i)]) * inv_sqrt2;
        }
        const double q_sum = u.dot(sum_llt_.solve(u));
        const double q_diff = v.dot(diff_llt_.solve(v));
        const double q_total_u = u.dot(total_llt_.solve(u));
        const double q_total_v = v.dot(total_llt_.solve(v));
        return -0.5 * ((logdet_sum_ + logdet_diff_) - 2.0 * logdet_total_) -
               0.5 * ((q_sum - q_total_u) + (q_diff - q_total_v));
    }

private:
    Eigen::VectorXd mean_;
    Eigen::LLT<Eigen::MatrixXd> sum_llt_, diff_llt_, total_llt_;
    double logdet_sum_ = 0.0, logdet_diff_ = 0.0, logdet_total_ = 0.0;
};

inline double plda_score(const PldaModel& model, const std::vector<double>& a,
                         const std::vector<double>& b) {
    return PldaScorer(model).score(a, b);
}

inline constexpr char kPldaMagic[] = "PLDA1";

// Binary: magic "PLDA1", u32 version, u32 D, then mu, B, W as float64.
// The sidecar JSON carries eigenvalue summaries of both covariances.
inline void save_plda(const std::string& path, const PldaModel& model) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write PLDA file: " + path);
    os.write(kPldaMagic, 5);
    write_u32(os, 1);
    const std::uint32_t D = static_cast<std::uint32_t>(model.dim());
    write_u32(os, D);
    for (std::uint32_t i = 0; i < D; ++i) write_f64(os, model.mean[i]);
    for (std::uint32_t i = 0; i < D; ++i)
        for (std::uint32_t j = 0; j < D; ++j) write_f64(os, model.between(i, j));
    for (std::uint32_t i = 0; i < D; ++i)
        for (std::uint32_t j = 0; j < D; ++j) write_f64(os, model.within(i, j));
    if (!os) throw IoError("failed writing PLDA file: " + path);

    auto eig_summary = [](const Eigen::MatrixXd& m) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
        return nlohmann::json{{"min", es.eigenvalues().minCoeff()},
                              {"max", es.eigenvalues().maxCoeff()},
                              {"trace", m.trace()}};
    };
    nlohmann::json side = {{"format", kPldaMagic},
                           {"dim", D},
                           {"between_eig", eig_summary(model.between)},
                           {"within_eig", eig_summary(model.within)}};
    std::ofstream js(path + ".json");
    if (!js) throw IoError("cannot write PLDA sidecar: " + path + ".json");
    js << side.dump(2) << '\n';
}

inline PldaModel load_plda(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open PLDA file: " + path);
    char magic[5];
    if (!is.read(magic, 5) || std::string(magic, 5) != kPldaMagic)
        throw IoError("not a PLDA model file: " + path);
    const std::uint32_t version = read_u32(is);
    if (version != 1) throw IoError("unsupported PLDA file version");
    const std::uint32_t D = read_u32(is);
    PldaModel m;
    m.mean.resize(D);
    m.between.resize(D, D);
    m.within.resize(D, D);
    for (std::uint32_t i = 0; i < D; ++i) m.mean[i] = read_f64(is);
    for (std::uint32_t i = 0; i < D; ++i)
        for (std::uint32_t j = 0; j < D; ++j) m.between(i, j) = read_f64(is);
    for (std::uint32_t i = 0; i < D; ++i)
        for (std::uint32_t j = 0; j < D; ++j) m.within(i, j) = read_f64(is);
    return m;
}

// Optional embedding pre-processing: subtract the set mean, then project to
// unit length. Applied consistently before PLDA training and scoring when
// the l2norm flag is set.
inline EmbeddingSet center_and_normalize(const EmbeddingSet& in) {
    if (in.entries.empty()) throw TrainingDataError("empty embedding set");
    std::vector<double> mean(in.dim, 0.0);
    for (const auto& [id, v] : in.entries)
        for (std::size_t d = 0; d < in.dim; ++d) mean[d] += v[d];
    for (auto& m : mean) m /= static_cast<double>(in.entries.size());
    EmbeddingSet out;
    out.dim = in.dim;
    out.tap_point = in.tap_point;
    out.model_fingerprint = in.model_fingerprint;
    for (const auto& [id, v] : in.entries) {
        std::vector<double> c(in.dim);
        for (std::size_t d = 0; d < in.dim; ++d) c[d] = v[d] - mean[d];
        out.entries[id] = length_normalize(c);
    }
    return out;
}

}  // namespace dnsv
