#pragma once

// Ground truth and measurement generation for the tracking experiments.

#include "idjpda/filters.hpp"
#include "idjpda/gaussian_id.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <random>
#include <stdexcept>
#include <vector>

namespace idjpda {

/// Random source with platform-independent output. The engine is the
/// standard 64-bit Mersenne Twister (its sequence is fixed by the standard);
/// the distributions are written out here because the standard library's
/// are implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

    /// Trial i of an experiment seeded with `base` uses base XOR i.
    [[nodiscard]] static Rng for_trial(std::uint64_t base, std::uint64_t trial) { return Rng(base ^ trial); }

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::size_t uniform_index(std::size_t n) {
        return static_cast<std::size_t>(uniform() * static_cast<double>(n));
    }

    bool bernoulli(double p) { return uniform() < p; }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Poisson by sequential inversion.
    std::size_t poisson(double mean) {
        if (!(mean >= 0.0) || mean > 700.0) throw std::invalid_argument("Rng::poisson: mean out of range");
        if (mean == 0.0) return 0;
        const double u = uniform();
        double p = std::exp(-mean);
        double cdf = p;
        std::size_t k = 0;
        while (u >= cdf && k < 100000) {
            ++k;
            p *= mean / static_cast<double>(k);
            cdf += p;
        }
        return k;
    }

    /// Sample N(0, cov) for a cov given in (B, V) form, handling singular
    /// covariances.
    Eigen::VectorXd gaussian(const GaussianID& cov_form) {
        const Index n = cov_form.size();
        Eigen::VectorXd x(n);
        for (Index j = 0; j < n; ++j) {
            double v = std::sqrt(cov_form.cond_vars()(j)) * normal();
            for (Index k = 0; k < j; ++k) v += cov_form.arcs()(k, j) * x(k);
            x(j) = v;
        }
        return x;
    }

private:
    static std::uint64_t splitmix64(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

enum class NoiseVariant { white, colored };

/// Kinematic process noise used for the colored-variant truth.
/// `diagonal` drives it with diag(q_p, q_v, q_p, q_v); `ncvm` uses the
/// sigma_u2 white-acceleration block instead.
enum class TruthKinematics { diagonal, ncvm };

struct Roi {
    double x_min = -1000.0;
    double x_max = 1000.0;
    double y_min = -1000.0;
    double y_max = 1000.0;

    [[nodiscard]] double area() const noexcept { return (x_max - x_min) * (y_max - y_min); }
    [[nodiscard]] bool contains(double x, double y) const noexcept {
        return x >= x_min && x <= x_max && y >= y_min && y <= y_max;
    }
};

struct ScenarioConfig {
    NoiseVariant variant = NoiseVariant::white;
    std::vector<Eigen::VectorXd> initial_states;
    /// Diagonal of the filters' initial covariance.
    Eigen::VectorXd prior_cov_diag;
    int steps = 100;
    double tau = 1.0;
    // white variant: NCVM with state [x, y, v_x, v_y]
    double sigma_u2 = 0.01;
    double sigma_v = 10.0;
    // colored variant: state [x, v_x, y, v_y, n_x, n_y]
    ColoredNoiseSpec colored{0.9, 3.0};
    double q_p = 100.0;
    double q_v = 10.0;
    double q_n = 25.0;
    TruthKinematics truth_kinematics = TruthKinematics::diagonal;
    Roi roi{};
    double p_d = 0.5;
    double p_s = 0.995;
    double clutter_mean = 5.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (steps < 1) throw std::invalid_argument("ScenarioConfig: steps must be >= 1");
        if (!(roi.x_max > roi.x_min && roi.y_max > roi.y_min))
            throw std::invalid_argument("ScenarioConfig: degenerate region of interest");
        if (!(p_d > 0.0 && p_d <= 1.0) || !(p_s > 0.0 && p_s <= 1.0))
            throw std::invalid_argument("ScenarioConfig: probabilities must be in (0, 1]");
        if (!(clutter_mean >= 0.0)) throw std::invalid_argument("ScenarioConfig: clutter mean must be >= 0");
        if (!(tau > 0.0)) throw std::invalid_argument("ScenarioConfig: tau must be > 0");
        if (initial_states.empty()) throw std::invalid_argument("ScenarioConfig: no targets");
        const Index n = state_dim();
        for (const auto& s : initial_states)
            if (s.size() != n) throw std::invalid_argument("ScenarioConfig: initial state has wrong dimension");
        if (prior_cov_diag.size() != n || (prior_cov_diag.array() < 0.0).any())
            throw std::invalid_argument("ScenarioConfig: prior covariance diagonal has wrong size or sign");
        if (variant == NoiseVariant::colored) colored.validate();
    }

    [[nodiscard]] Index state_dim() const noexcept { return variant == NoiseVariant::white ? 4 : 6; }

    /// Indices of (x, y) in the truth state.
    [[nodiscard]] std::array<Index, 2> position_indices() const noexcept {
        return variant == NoiseVariant::white ? std::array<Index, 2>{0, 1} : std::array<Index, 2>{0, 2};
    }

    /// Motion model used to generate the truth.
    [[nodiscard]] LinearGaussianModel truth_model() const {
        if (variant == NoiseVariant::white) return ncv_model(tau, sigma_u2, sigma_v);
        LinearGaussianModel m = augment_colored(interleaved_cv_model(tau, q_p, q_v), colored);
        if (truth_kinematics == TruthKinematics::ncvm) {
            Eigen::Matrix2d blk;
            blk << tau * tau * tau / 3.0, tau * tau / 2.0, tau * tau / 2.0, tau;
            blk *= sigma_u2;
            m.Q.block(0, 0, 2, 2) = blk;
            m.Q.block(2, 2, 2, 2) = blk;
        }
        return m;
    }

    /// Two-target white-noise scenario with NCVM dynamics, clutter and
    /// missed detections.
    [[nodiscard]] static ScenarioConfig white_default() {
        ScenarioConfig c;
        c.variant = NoiseVariant::white;
        c.initial_states = {(Eigen::VectorXd(4) << -400.0, -200.0, 1.0, 0.2).finished(),
                            (Eigen::VectorXd(4) << -400.0, 200.0, 1.0, -0.2).finished()};
        c.prior_cov_diag = Eigen::VectorXd::Constant(4, 0.01);
        c.steps = 100;
        c.tau = 1.0;
        c.sigma_u2 = 0.01;
        c.sigma_v = 10.0;
        c.p_d = 0.5;
        c.p_s = 0.995;
        c.clutter_mean = 5.0;
        return c;
    }

    /// Two-target AR(1) colored-noise scenario.
    [[nodiscard]] static ScenarioConfig colored_default() {
        ScenarioConfig c;
        c.variant = NoiseVariant::colored;
        c.initial_states = {(Eigen::VectorXd(6) << 0.0, 1.0, 0.0, 1.0, 0.0, 0.0).finished(),
                            (Eigen::VectorXd(6) << 20.0, -1.0, 10.0, -1.0, 0.0, 0.0).finished()};
        c.prior_cov_diag = (Eigen::VectorXd(6) << 100.0, 10.0, 100.0, 10.0, 25.0, 25.0).finished();
        c.steps = 2000;
        c.tau = 0.05;
        c.colored = {0.9, 3.0};
        c.q_p = 100.0;
        c.q_v = 10.0;
        c.q_n = 25.0;
        c.p_d = 1.0;
        c.p_s = 1.0;
        c.clutter_mean = 0.0;
        return c;
    }
};

struct GroundTruth {
    /// states[t][k] for k = 0 (initial) .. steps.
    std::vector<std::vector<Eigen::VectorXd>> states;
    std::vector<std::vector<bool>> alive;
    std::array<Index, 2> position{0, 1};

    [[nodiscard]] std::size_t targets() const noexcept { return states.size(); }
    [[nodiscard]] int steps() const noexcept {
        return states.empty() ? 0 : static_cast<int>(states.front().size()) - 1;
    }
    [[nodiscard]] Eigen::Vector2d position_of(std::size_t t, int k) const {
        const auto& s = states[t][static_cast<std::size_t>(k)];
        return {s(position[0]), s(position[1])};
    }
};

/// Detections at one step. `origin` holds the target index or -1 for
/// clutter and is for diagnostics only.
struct MeasurementSet {
    int step = 0;
    std::vector<Eigen::VectorXd> positions;
    std::vector<int> origin;
};

inline constexpr int kClutterOrigin = -1;

[[nodiscard]] inline GroundTruth generate_truth(const ScenarioConfig& cfg, Rng& rng) {
    cfg.validate();
    const LinearGaussianModel model = cfg.truth_model();
    const GaussianID q_form = cov_to_id(MomentGaussian(Eigen::VectorXd::Zero(model.state_dim()), model.Q));
    GroundTruth truth;
    truth.position = cfg.position_indices();
    const auto steps = static_cast<std::size_t>(cfg.steps);
    for (const auto& x0 : cfg.initial_states) {
        std::vector<Eigen::VectorXd> xs;
        std::vector<bool> alive;
        xs.reserve(steps + 1);
        xs.push_back(x0);
        alive.push_back(true);
        for (std::size_t k = 1; k <= steps; ++k) {
            const bool lives = alive.back() && (cfg.p_s >= 1.0 || rng.bernoulli(cfg.p_s));
            if (lives) {
                xs.push_back(model.F * xs.back() + rng.gaussian(q_form));
            } else {
                xs.push_back(xs.back());
            }
            alive.push_back(lives);
        }
        truth.states.push_back(std::move(xs));
        truth.alive.push_back(std::move(alive));
    }
    return truth;
}

/// One MeasurementSet per step 1..steps, in shuffled order.
[[nodiscard]] inline std::vector<MeasurementSet> generate_measurements(const GroundTruth& truth,
                                                                       const ScenarioConfig& cfg, Rng& rng) {
    std::vector<MeasurementSet> out;
    const int steps = truth.steps();
    out.reserve(static_cast<std::size_t>(steps));
    for (int k = 1; k <= steps; ++k) {
        MeasurementSet set;
        set.step = k;
        for (std::size_t t = 0; t < truth.targets(); ++t) {
            if (!truth.alive[t][static_cast<std::size_t>(k)]) continue;
            if (cfg.p_d < 1.0 && !rng.bernoulli(cfg.p_d)) continue;
            const auto& s = truth.states[t][static_cast<std::size_t>(k)];
            Eigen::VectorXd z(2);
            if (cfg.variant == NoiseVariant::white) {
                z << s(0) + cfg.sigma_v * rng.normal(), s(1) + cfg.sigma_v * rng.normal();
            } else {
                z << s(0) + s(4), s(2) + s(5);
            }
            set.positions.push_back(std::move(z));
            set.origin.push_back(static_cast<int>(t));
        }
        const std::size_t clutter = rng.poisson(cfg.clutter_mean);
        for (std::size_t c = 0; c < clutter; ++c) {
            Eigen::VectorXd z(2);
            z << rng.uniform(cfg.roi.x_min, cfg.roi.x_max), rng.uniform(cfg.roi.y_min, cfg.roi.y_max);
            set.positions.push_back(std::move(z));
            set.origin.push_back(kClutterOrigin);
        }
        // Fisher-Yates
        for (std::size_t i = set.positions.size(); i > 1; --i) {
            const std::size_t j = rng.uniform_index(i);
            std::swap(set.positions[i - 1], set.positions[j]);
            std::swap(set.origin[i - 1], set.origin[j]);
        }
        out.push_back(std::move(set));
    }
    return out;
}

/// CSV: step,target_id,alive,x,y,vx,vy[,nx,ny]
inline void write_truth_csv(std::ostream& os, const GroundTruth& truth, NoiseVariant variant) {
    const bool colored = variant == NoiseVariant::colored;
    os << "step,target_id,alive,x,y,vx,vy" << (colored ? ",nx,ny" : "") << '\n';
    os.precision(17);
    for (int k = 0; k <= truth.steps(); ++k)
        for (std::size_t t = 0; t < truth.targets(); ++t) {
            const auto& s = truth.states[t][static_cast<std::size_t>(k)];
            os << k << ',' << t << ',' << (truth.alive[t][static_cast<std::size_t>(k)] ? 1 : 0) << ',';
            if (colored)
                os << s(0) << ',' << s(2) << ',' << s(1) << ',' << s(3) << ',' << s(4) << ',' << s(5);
            else
                os << s(0) << ',' << s(1) << ',' << s(2) << ',' << s(3);
            os << '\n';
        }
}

/// CSV: step,origin,x,y with origin a target id or "clutter".
inline void write_measurements_csv(std::ostream& os, const std::vector<MeasurementSet>& sets) {
    os << "step,origin,x,y\n";
    os.precision(17);
    for (const auto& set : sets)
        for (std::size_t i = 0; i < set.positions.size(); ++i) {
            os << set.step << ',';
            if (set.origin[i] == kClutterOrigin)
                os << "clutter";
            else
                os << set.origin[i];
            os << ',' << set.positions[i](0) << ',' << set.positions[i](1) << '\n';
        }
}

}  // namespace idjpda
