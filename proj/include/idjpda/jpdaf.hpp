#pragma once

// Probabilistic data association over multiple tracks with either a
// moment-form (classical JPDAF) or an influence-diagram (ID-JPDAF) backend.
// Association weights are normalized per track.

#include "idjpda/filters.hpp"
#include "idjpda/gaussian_id.hpp"

#include <Eigen/Dense>
#include <boost/math/special_functions/gamma.hpp>

#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace idjpda {

enum class Backend { jpdaf, id_jpdaf };

[[nodiscard]] inline std::string to_string(Backend b) { return b == Backend::jpdaf ? "jpdaf" : "id-jpdaf"; }

/// P(chi^2_dof <= x).
[[nodiscard]] inline double chi2_cdf(double x, int dof) {
    if (x <= 0.0) return 0.0;
    return boost::math::gamma_p(0.5 * dof, 0.5 * x);
}

/// Gate threshold whose chi^2_dof probability mass is p.
[[nodiscard]] inline double chi2_quantile(double p, int dof) {
    return 2.0 * boost::math::gamma_p_inv(0.5 * dof, p);
}

struct AssociationConfig {
    double p_d = 1.0;
    double p_g = 0.99;
    double lambda = 0.0;  // clutter density per unit area
    double gate_gamma = 9.21;

    void validate() const {
        if (!(p_d > 0.0 && p_d <= 1.0)) throw std::invalid_argument("AssociationConfig: p_d must be in (0, 1]");
        if (!(p_g > 0.0 && p_g <= 1.0)) throw std::invalid_argument("AssociationConfig: p_g must be in (0, 1]");
        if (!(lambda >= 0.0)) throw std::invalid_argument("AssociationConfig: lambda must be >= 0");
        if (!(gate_gamma > 0.0)) throw std::invalid_argument("AssociationConfig: gate_gamma must be > 0");
    }

    /// Gate chosen so that a true measurement falls inside with probability p_g.
    [[nodiscard]] static AssociationConfig from_gate_probability(double p_d, double lambda, int meas_dim,
                                                                 double p_g = 0.99) {
        AssociationConfig c{p_d, p_g, lambda, chi2_quantile(p_g, meas_dim)};
        c.validate();
        return c;
    }

    /// Gate threshold given directly; P_G follows from the chi^2 CDF.
    [[nodiscard]] static AssociationConfig from_gate_threshold(double p_d, double lambda, int meas_dim,
                                                               double gate_gamma) {
        AssociationConfig c{p_d, chi2_cdf(gate_gamma, meas_dim), lambda, gate_gamma};
        c.validate();
        return c;
    }
};

struct Track {
    int id = 0;
    StateEstimate estimate;
    std::shared_ptr<const LinearGaussianModel> model;
    bool exists = true;
    std::vector<Eigen::VectorXd> history;

    [[nodiscard]] Backend backend() const noexcept { return estimate.is_id() ? Backend::id_jpdaf : Backend::jpdaf; }
};

[[nodiscard]] inline Track make_track(int id, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                                      std::shared_ptr<const LinearGaussianModel> model, Backend backend) {
    Track t;
    t.id = id;
    t.estimate = backend == Backend::jpdaf ? make_moment_estimate(mean, cov) : make_id_estimate(mean, cov);
    t.model = std::move(model);
    return t;
}

/// A track propagated to the current step together with its innovation
/// statistics in the backend's own representation.
struct PredictedTrack {
    StateEstimate predicted;
    std::variant<MomentInnovation, IdInnovation> innovation;

    [[nodiscard]] const Eigen::VectorXd& predicted_measurement() const {
        return std::visit([](const auto& i) -> const Eigen::VectorXd& { return i.predicted; }, innovation);
    }
    [[nodiscard]] double mahalanobis(const Eigen::VectorXd& y, const Tolerances& tol = {}) const {
        if (const auto* m = std::get_if<MomentInnovation>(&innovation)) return m->mahalanobis(y);
        return std::get<IdInnovation>(innovation).mahalanobis(y, tol);
    }
    [[nodiscard]] double log_det_s() const {
        if (const auto* m = std::get_if<MomentInnovation>(&innovation)) return m->log_det;
        return std::get<IdInnovation>(innovation).log_det();
    }
    /// Directions in which S is exactly zero (only the ID form can have them).
    [[nodiscard]] int degenerate_dims() const {
        const auto* i = std::get_if<IdInnovation>(&innovation);
        return i ? static_cast<int>((i->s_form.cond_vars().array() == 0.0).count()) : 0;
    }
    /// log det of S restricted to its support.
    [[nodiscard]] double log_det_support() const {
        const auto* i = std::get_if<IdInnovation>(&innovation);
        if (!i) return log_det_s();
        double sum = 0.0;
        for (double v : i->s_form.cond_vars()) sum += v > 0.0 ? std::log(v) : 0.0;
        return sum;
    }
};

[[nodiscard]] inline PredictedTrack predict_track(const Track& track, const FilterOptions& opts = {}) {
    const LinearGaussianModel& model = *track.model;
    if (track.backend() == Backend::jpdaf) {
        StateEstimate pred = kf_predict(track.estimate, model);
        MomentInnovation inn = moment_innovation(pred.moment(), model, opts);
        return {std::move(pred), std::move(inn)};
    }
    StateEstimate pred = id_predict(track.estimate, model, opts);
    IdInnovation inn = id_innovation(pred.id(), model, opts);
    return {std::move(pred), std::move(inn)};
}

struct GatedMeasurement {
    std::size_t index;
    double d2;
};

/// Measurements with d^2 <= gate_gamma. The ID backend evaluates d^2 from
/// the (B, V) form of S; a measurement off the support of a degenerate S is
/// never gated.
[[nodiscard]] inline std::vector<GatedMeasurement> gate(const PredictedTrack& track,
                                                        std::span<const Eigen::VectorXd> measurements,
                                                        const AssociationConfig& cfg, const FilterOptions& opts = {}) {
    std::vector<GatedMeasurement> out;
    const Eigen::VectorXd& zhat = track.predicted_measurement();
    for (std::size_t j = 0; j < measurements.size(); ++j) {
        const Eigen::VectorXd y = measurements[j] - zhat;
        double d2 = 0.0;
        try {
            d2 = track.mahalanobis(y, opts.tol);
        } catch (const DeterministicDirection&) {
            continue;
        }
        if (d2 <= cfg.gate_gamma) out.push_back({j, d2});
    }
    return out;
}

struct AssociationWeights {
    /// beta[0] is the miss hypothesis; beta[j] pairs with gated[j - 1].
    std::vector<double> beta;
    bool underflow = false;
};

/// Log-likelihood below which every detection hypothesis is considered
/// underflowed.
inline constexpr double kLogLikelihoodFloor = -700.0;

/// beta_j ~ N(z_j; Hx, S) P_D P_G / lambda, beta_0 ~ 1 - P_D P_G, evaluated
/// after multiplying through by lambda and in the log domain. When S has
/// exactly deterministic directions every gated measurement lies on its
/// support, the density there is a delta and the miss hypothesis gets zero
/// weight; detections are then weighed on the support alone.
[[nodiscard]] inline AssociationWeights association_probabilities(const PredictedTrack& track,
                                                                   std::span<const GatedMeasurement> gated,
                                                                   const AssociationConfig& cfg) {
    AssociationWeights w;
    w.beta.assign(gated.size() + 1, 0.0);
    if (gated.empty()) {
        w.beta[0] = 1.0;
        return w;
    }
    const int degenerate = track.degenerate_dims();
    const double m = static_cast<double>(track.predicted_measurement().size() - degenerate);
    const double log_det = degenerate > 0 ? track.log_det_support() : track.log_det_s();
    if (!std::isfinite(log_det)) throw GaussianIdError("association_probabilities: degenerate innovation covariance");
    const double log_norm = -0.5 * (log_det + m * std::log(2.0 * std::numbers::pi));
    const double pdpg = cfg.p_d * cfg.p_g;
    const double neg_inf = -std::numeric_limits<double>::infinity();

    std::vector<double> logw(gated.size() + 1);
    bool all_under = true;
    for (std::size_t j = 0; j < gated.size(); ++j) {
        const double ll = log_norm - 0.5 * gated[j].d2;
        if (ll >= kLogLikelihoodFloor) all_under = false;
        logw[j + 1] = ll + std::log(pdpg);
    }
    if (all_under) {
        w.beta[0] = 1.0;
        w.underflow = true;
        return w;
    }
    const double miss = degenerate > 0 ? 0.0 : (1.0 - pdpg) * cfg.lambda;
    logw[0] = miss > 0.0 ? std::log(miss) : neg_inf;
    double top = neg_inf;
    for (double l : logw) top = std::max(top, l);
    double total = 0.0;
    for (std::size_t j = 0; j < logw.size(); ++j) {
        w.beta[j] = logw[j] == neg_inf ? 0.0 : std::exp(logw[j] - top);
        total += w.beta[j];
    }
    for (double& b : w.beta) b /= total;
    return w;
}

/// Mixture update: x = x^- + K sum_j beta_j y_j and
/// P = beta_0 P^- + (1 - beta_0) P~ + sum_j beta_j e_j e_j^T - e e^T.
/// The ID backend takes K and P~ from evidence entry in (B, V) form, forms
/// the mixture in moment form and converts back.
[[nodiscard]] inline Track jpdaf_track_update(const Track& track, const PredictedTrack& pred,
                                              std::span<const Eigen::VectorXd> measurements,
                                              std::span<const GatedMeasurement> gated, const AssociationWeights& w,
                                              const FilterOptions& opts = {}) {
    Track out = track;
    if (gated.empty() || w.beta[0] == 1.0) {
        out.estimate = pred.predicted;
        out.history.push_back(out.estimate.mean());
        return out;
    }
    const LinearGaussianModel& model = *track.model;
    const Eigen::VectorXd& zhat = pred.predicted_measurement();
    const Index n = pred.predicted.dim();
    const Index m = zhat.size();

    Eigen::MatrixXd ys(m, static_cast<Index>(gated.size()));
    Eigen::VectorXd ybar = Eigen::VectorXd::Zero(m);
    for (std::size_t j = 0; j < gated.size(); ++j) {
        ys.col(static_cast<Index>(j)) = measurements[gated[j].index] - zhat;
        ybar += w.beta[j + 1] * ys.col(static_cast<Index>(j));
    }
    const double beta0 = w.beta[0];

    Eigen::MatrixXd prior_cov, post_cov, gain;
    Eigen::VectorXd mean;
    if (const auto* inn = std::get_if<MomentInnovation>(&pred.innovation)) {
        const MomentGaussian& g = pred.predicted.moment();
        gain = inn->gain;
        prior_cov = g.cov();
        post_cov = (Eigen::MatrixXd::Identity(n, n) - gain * model.H) * prior_cov;
        mean = g.mean() + gain * ybar;
    } else {
        const IdInnovation& idi = std::get<IdInnovation>(pred.innovation);
        const auto obs = idi.observations(zhat + ybar);
        ConditionedID post = condition_on(idi.joint, obs, opts.tol);
        gain = std::move(post.gain);
        prior_cov = id_to_cov(pred.predicted.id()).cov();
        post_cov = id_to_cov(post.posterior).cov();
        mean = post.posterior.mean();
    }
    const Eigen::MatrixXd es = gain * ys;
    const Eigen::VectorXd e = gain * ybar;
    Eigen::MatrixXd spread = -e * e.transpose();
    for (std::size_t j = 0; j < gated.size(); ++j) {
        const auto ej = es.col(static_cast<Index>(j));
        spread.noalias() += w.beta[j + 1] * ej * ej.transpose();
    }
    Eigen::MatrixXd cov = detail::symmetrized(beta0 * prior_cov + (1.0 - beta0) * post_cov + spread);
    if (track.backend() == Backend::jpdaf) {
        out.estimate = {MomentGaussian(mean, std::move(cov)), pred.predicted.step};
    } else {
        out.estimate = {cov_to_id(MomentGaussian(mean, cov), label_block(kStateLabelBase, n), opts.tol),
                        pred.predicted.step};
    }
    out.history.push_back(out.estimate.mean());
    return out;
}

struct StepStats {
    std::size_t underflow_fallbacks = 0;
    std::size_t gated_total = 0;
};

/// predict -> gate -> associate -> update for every track. A classical
/// backend that cannot factor S throws IllConditioned.
[[nodiscard]] inline std::vector<Track> jpdaf_step(const std::vector<Track>& tracks,
                                                   std::span<const Eigen::VectorXd> measurements,
                                                   const AssociationConfig& cfg, const FilterOptions& opts = {},
                                                   StepStats* stats = nullptr) {
    std::vector<Track> out;
    out.reserve(tracks.size());
    for (const Track& t : tracks) {
        const PredictedTrack pred = predict_track(t, opts);
        const auto gated = gate(pred, measurements, cfg, opts);
        const auto w = association_probabilities(pred, gated, cfg);
        if (stats) {
            stats->gated_total += gated.size();
            if (w.underflow) ++stats->underflow_fallbacks;
        }
        out.push_back(jpdaf_track_update(t, pred, measurements, gated, w, opts));
    }
    return out;
}

}  // namespace idjpda
