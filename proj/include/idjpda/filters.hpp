#pragma once

// Single-track filtering in moment form (classical Kalman) and in
// influence-diagram form, plus AR(1) colored-noise state augmentation.

#include "idjpda/gaussian_id.hpp"

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace idjpda {

struct LinearGaussianModel {
    Eigen::MatrixXd F;
    Eigen::MatrixXd Q;
    Eigen::MatrixXd H;
    Eigen::MatrixXd R;
    double tau = 1.0;

    [[nodiscard]] Index state_dim() const noexcept { return F.rows(); }
    [[nodiscard]] Index meas_dim() const noexcept { return H.rows(); }

    void validate() const {
        const Index n = F.rows();
        const Index m = H.rows();
        if (F.cols() != n || Q.rows() != n || Q.cols() != n || H.cols() != n || R.rows() != m ||
            R.cols() != m)
            throw std::invalid_argument("LinearGaussianModel: inconsistent dimensions");
        auto symmetric = [](const Eigen::MatrixXd& a) {
            const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
            return (a - a.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale;
        };
        if (!symmetric(Q) || !symmetric(R))
            throw std::invalid_argument("LinearGaussianModel: Q and R must be symmetric");
    }
};

/// AR(1) measurement noise v_k = rho v_{k-1} + xi_k, xi_k ~ N(0, sigma^2 I).
struct ColoredNoiseSpec {
    double rho = 0.0;
    double sigma = 0.0;

    void validate() const {
        if (!(std::abs(rho) < 1.0)) throw std::invalid_argument("ColoredNoiseSpec: |rho| must be < 1");
        if (!(sigma >= 0.0)) throw std::invalid_argument("ColoredNoiseSpec: sigma must be >= 0");
    }

    [[nodiscard]] double stationary_variance() const noexcept { return sigma * sigma / (1.0 - rho * rho); }
};

struct FilterOptions {
    /// Replaces an all-zero R in the classical update.
    double r_regularization = 1e-9;
    /// Largest admissible LDL^T pivot ratio of S in the classical update.
    double condition_limit = 1e14;
    Tolerances tol{};
};

/// The classical update could not factor the innovation covariance.
class IllConditioned : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct StateEstimate {
    std::variant<MomentGaussian, GaussianID> belief;
    int step = 0;

    [[nodiscard]] bool is_id() const noexcept { return std::holds_alternative<GaussianID>(belief); }
    [[nodiscard]] const MomentGaussian& moment() const { return std::get<MomentGaussian>(belief); }
    [[nodiscard]] const GaussianID& id() const { return std::get<GaussianID>(belief); }

    [[nodiscard]] Index dim() const {
        return std::visit([](const auto& b) { return b.size(); }, belief);
    }
    [[nodiscard]] const Eigen::VectorXd& mean() const {
        return std::visit([](const auto& b) -> const Eigen::VectorXd& { return b.mean(); }, belief);
    }
    /// Covariance regardless of representation.
    [[nodiscard]] Eigen::MatrixXd covariance() const {
        return is_id() ? id_to_cov(id()).cov() : moment().cov();
    }
};

// Label blocks used when state, noise and measurement nodes share a diagram.
inline constexpr std::int32_t kStateLabelBase = 0;
inline constexpr std::int32_t kNoiseLabelBase = 1 << 20;
inline constexpr std::int32_t kPriorLabelBase = 2 << 20;
inline constexpr std::int32_t kMeasLabelBase = 3 << 20;

[[nodiscard]] inline std::vector<NodeLabel> label_block(std::int32_t base, Index n) {
    std::vector<NodeLabel> out(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = label(base + static_cast<std::int32_t>(i));
    return out;
}

[[nodiscard]] inline StateEstimate make_moment_estimate(Eigen::VectorXd mean, Eigen::MatrixXd cov, int step = 0) {
    return {MomentGaussian(std::move(mean), std::move(cov)), step};
}

[[nodiscard]] inline StateEstimate make_id_estimate(Eigen::VectorXd mean, const Eigen::MatrixXd& cov, int step = 0,
                                                    const Tolerances& tol = {}) {
    const Index n = mean.size();
    return {cov_to_id(MomentGaussian(std::move(mean), cov), label_block(kStateLabelBase, n), tol), step};
}

namespace detail {

inline void check_dims(const StateEstimate& est, const LinearGaussianModel& model) {
    if (est.dim() != model.state_dim()) throw std::invalid_argument("filter: estimate/model dimension mismatch");
}

inline Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& a) { return 0.5 * (a + a.transpose()); }

inline const GaussianID& require_canonical(const StateEstimate& est) {
    const GaussianID& g = est.id();
    for (Index i = 0; i < g.size(); ++i)
        if (to_int(g.labels()[static_cast<std::size_t>(i)]) != kStateLabelBase + i)
            throw std::invalid_argument("filter: state diagram nodes are not in canonical order");
    return g;
}

}  // namespace detail

// ---- Classical (moment form) ----

[[nodiscard]] inline StateEstimate kf_predict(const StateEstimate& est, const LinearGaussianModel& model) {
    detail::check_dims(est, model);
    const MomentGaussian& g = est.moment();
    Eigen::VectorXd mean = model.F * g.mean();
    Eigen::MatrixXd cov = detail::symmetrized(model.F * g.cov() * model.F.transpose() + model.Q);
    return {MomentGaussian(std::move(mean), std::move(cov)), est.step + 1};
}

/// Innovation statistics of a predicted moment-form estimate.
struct MomentInnovation {
    Eigen::VectorXd predicted;  // H x
    Eigen::MatrixXd S;
    Eigen::LDLT<Eigen::MatrixXd> ldlt;
    Eigen::MatrixXd gain;  // K = P H^T S^-1
    double log_det = 0.0;
    double pivot_ratio = 1.0;

    [[nodiscard]] double mahalanobis(const Eigen::VectorXd& y) const { return y.dot(ldlt.solve(y)); }
};

[[nodiscard]] inline Eigen::MatrixXd effective_r(const LinearGaussianModel& model, const FilterOptions& opts) {
    if (model.R.isZero(0.0))
        return opts.r_regularization * Eigen::MatrixXd::Identity(model.meas_dim(), model.meas_dim());
    return model.R;
}

/// Factor S = H P H^T + R. Throws IllConditioned when S is not positive
/// definite or its pivot ratio exceeds the configured limit.
[[nodiscard]] inline MomentInnovation moment_innovation(const MomentGaussian& pred, const LinearGaussianModel& model,
                                                        const FilterOptions& opts = {}) {
    MomentInnovation out;
    out.predicted = model.H * pred.mean();
    out.S = detail::symmetrized(model.H * pred.cov() * model.H.transpose() + effective_r(model, opts));
    out.ldlt.compute(out.S);
    const Eigen::VectorXd d = out.ldlt.vectorD();
    const double dmin = d.minCoeff();
    const double dmax = d.cwiseAbs().maxCoeff();
    if (out.ldlt.info() != Eigen::Success || !(dmin > 0.0))
        throw IllConditioned("kf_update: innovation covariance is not positive definite");
    out.pivot_ratio = dmax / dmin;
    if (out.pivot_ratio > opts.condition_limit)
        throw IllConditioned("kf_update: innovation covariance condition estimate " +
                             std::to_string(out.pivot_ratio) + " exceeds limit");
    out.log_det = d.array().log().sum();
    const Eigen::MatrixXd hp = model.H * pred.cov();
    out.gain = out.ldlt.solve(hp).transpose();
    return out;
}

struct KalmanUpdate {
    StateEstimate posterior;
    Eigen::VectorXd innovation;
    Eigen::MatrixXd S;
    Eigen::MatrixXd gain;
};

[[nodiscard]] inline KalmanUpdate kf_update(const StateEstimate& est, const Eigen::VectorXd& z,
                                            const LinearGaussianModel& model, const FilterOptions& opts = {}) {
    detail::check_dims(est, model);
    if (z.size() != model.meas_dim()) throw std::invalid_argument("kf_update: measurement dimension mismatch");
    const MomentGaussian& g = est.moment();
    MomentInnovation inn = moment_innovation(g, model, opts);
    Eigen::VectorXd y = z - inn.predicted;
    Eigen::VectorXd mean = g.mean() + inn.gain * y;
    const Index n = g.size();
    Eigen::MatrixXd cov =
        detail::symmetrized((Eigen::MatrixXd::Identity(n, n) - inn.gain * model.H) * g.cov());
    return {{MomentGaussian(std::move(mean), std::move(cov)), est.step}, std::move(y), std::move(inn.S),
            std::move(inn.gain)};
}

// ---- Influence-diagram form ----

/// Time update: convert Q to (B_q, V_q), stack [noise, prior state, new
/// state] with arcs I and F^T into the new state, then remove the noise and
/// prior-state nodes.
[[nodiscard]] inline StateEstimate id_predict(const StateEstimate& est, const LinearGaussianModel& model,
                                              const FilterOptions& opts = {}) {
    detail::check_dims(est, model);
    const GaussianID& prior = detail::require_canonical(est);
    const Index n = prior.size();
    GaussianID noise = cov_to_id(MomentGaussian(Eigen::VectorXd::Zero(n), model.Q),
                                 label_block(kNoiseLabelBase, n), opts.tol);
    GaussianID prev(prior.mean(), prior.arcs(), prior.cond_vars(), label_block(kPriorLabelBase, n));
    GaussianID next(model.F * prior.mean(), Eigen::MatrixXd::Zero(n, n), Eigen::VectorXd::Zero(n),
                    label_block(kStateLabelBase, n));
    Eigen::MatrixXd cross(2 * n, n);
    cross.topRows(n) = Eigen::MatrixXd::Identity(n, n);
    cross.bottomRows(n) = model.F.transpose();
    GaussianID joint = stack(stack(noise, prev, Eigen::MatrixXd::Zero(n, n)), next, cross);
    std::vector<Index> drop(static_cast<std::size_t>(2 * n));
    for (Index i = 0; i < 2 * n; ++i) drop[static_cast<std::size_t>(i)] = i;
    return {remove_nodes(joint, drop), est.step + 1};
}

/// Joint diagram of a predicted state and its measurement nodes.
struct IdInnovation {
    GaussianID joint;            // [state nodes..., measurement nodes...]
    GaussianID s_form;           // marginal of the measurement nodes (S in (B, V) form)
    Eigen::VectorXd predicted;   // H u
    Index state_dim = 0;

    [[nodiscard]] double mahalanobis(const Eigen::VectorXd& y, const Tolerances& tol = {}) const {
        return quad_form_inverse(s_form, y, tol);
    }
    [[nodiscard]] double log_det() const { return idjpda::log_det(s_form); }

    [[nodiscard]] std::vector<Observation> observations(const Eigen::VectorXd& z) const {
        std::vector<Observation> obs;
        for (Index i = 0; i < z.size(); ++i) obs.push_back({state_dim + i, z(i)});
        return obs;
    }
};

/// Measurement nodes z = H x + v are appended to the state nodes, with v in
/// (B, V) form (V = diag(R) when R is diagonal).
[[nodiscard]] inline IdInnovation id_innovation(const GaussianID& pred, const LinearGaussianModel& model,
                                                const FilterOptions& opts = {}) {
    const Index n = pred.size();
    const Index m = model.meas_dim();
    Eigen::VectorXd zhat = model.H * pred.mean();
    GaussianID meas;
    const Eigen::MatrixXd off_diag = model.R - Eigen::MatrixXd(model.R.diagonal().asDiagonal());
    if (off_diag.isZero(0.0))
        meas = GaussianID(zhat, Eigen::MatrixXd::Zero(m, m), model.R.diagonal(), label_block(kMeasLabelBase, m));
    else
        meas = cov_to_id(MomentGaussian(zhat, model.R), label_block(kMeasLabelBase, m), opts.tol);
    IdInnovation out;
    out.joint = stack(pred, meas, model.H.transpose());
    std::vector<Index> drop(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) drop[static_cast<std::size_t>(i)] = i;
    out.s_form = remove_nodes(out.joint, drop);
    out.predicted = std::move(zhat);
    out.state_dim = n;
    return out;
}

struct IdUpdate {
    StateEstimate posterior;
    GaussianID s_form;
    Eigen::VectorXd predicted;
    Eigen::MatrixXd gain;
};

/// Measurement update by evidence entry on the measurement nodes.
[[nodiscard]] inline IdUpdate id_update(const StateEstimate& est, const Eigen::VectorXd& z,
                                        const LinearGaussianModel& model, const FilterOptions& opts = {}) {
    detail::check_dims(est, model);
    if (z.size() != model.meas_dim()) throw std::invalid_argument("id_update: measurement dimension mismatch");
    IdInnovation inn = id_innovation(detail::require_canonical(est), model, opts);
    const auto obs = inn.observations(z);
    ConditionedID post = condition_on(inn.joint, obs, opts.tol);
    return {{std::move(post.posterior), est.step}, std::move(inn.s_form), std::move(inn.predicted),
            std::move(post.gain)};
}

// ---- Models ----

/// Appends one AR(1) noise state per measurement component:
/// F~ = blkdiag(F, rho I), Q~ = blkdiag(Q, sigma^2 I), H~ = [H, I], R~ = 0.
[[nodiscard]] inline LinearGaussianModel augment_colored(const LinearGaussianModel& base,
                                                         const ColoredNoiseSpec& spec) {
    base.validate();
    spec.validate();
    const Index n = base.state_dim();
    const Index m = base.meas_dim();
    LinearGaussianModel out;
    out.tau = base.tau;
    out.F = Eigen::MatrixXd::Zero(n + m, n + m);
    out.F.topLeftCorner(n, n) = base.F;
    out.F.bottomRightCorner(m, m) = spec.rho * Eigen::MatrixXd::Identity(m, m);
    out.Q = Eigen::MatrixXd::Zero(n + m, n + m);
    out.Q.topLeftCorner(n, n) = base.Q;
    out.Q.bottomRightCorner(m, m) = spec.sigma * spec.sigma * Eigen::MatrixXd::Identity(m, m);
    out.H = Eigen::MatrixXd::Zero(m, n + m);
    out.H.leftCols(n) = base.H;
    out.H.rightCols(m) = Eigen::MatrixXd::Identity(m, m);
    out.R = Eigen::MatrixXd::Zero(m, m);
    return out;
}

/// Nearly-constant-velocity model with state [x1, x2, v1, v2], continuous
/// white-acceleration process noise of intensity sigma_u2 and position
/// measurements with noise sigma_v.
[[nodiscard]] inline LinearGaussianModel ncv_model(double T, double sigma_u2, double sigma_v) {
    LinearGaussianModel m;
    m.tau = T;
    m.F = Eigen::MatrixXd::Identity(4, 4);
    m.F(0, 2) = T;
    m.F(1, 3) = T;
    const double t3 = T * T * T / 3.0;
    const double t2 = T * T / 2.0;
    m.Q = Eigen::MatrixXd::Zero(4, 4);
    m.Q(0, 0) = m.Q(1, 1) = t3;
    m.Q(0, 2) = m.Q(2, 0) = m.Q(1, 3) = m.Q(3, 1) = t2;
    m.Q(2, 2) = m.Q(3, 3) = T;
    m.Q *= sigma_u2;
    m.H = Eigen::MatrixXd::Zero(2, 4);
    m.H(0, 0) = m.H(1, 1) = 1.0;
    m.R = sigma_v * sigma_v * Eigen::MatrixXd::Identity(2, 2);
    return m;
}

/// Kinematic model with state [x, v_x, y, v_y], diagonal process noise
/// diag(q_p, q_v, q_p, q_v) and noiseless position measurements.
[[nodiscard]] inline LinearGaussianModel interleaved_cv_model(double tau, double q_p, double q_v) {
    LinearGaussianModel m;
    m.tau = tau;
    m.F = Eigen::MatrixXd::Identity(4, 4);
    m.F(0, 1) = tau;
    m.F(2, 3) = tau;
    m.Q = Eigen::Vector4d(q_p, q_v, q_p, q_v).asDiagonal();
    m.H = Eigen::MatrixXd::Zero(2, 4);
    m.H(0, 0) = m.H(1, 2) = 1.0;
    m.R = Eigen::MatrixXd::Zero(2, 2);
    return m;
}

}  // namespace idjpda
