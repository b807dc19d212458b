#pragma once

// Monte Carlo experiment runner: trial simulation, RMSE aggregation, the
// five experiment kinds, acceptance checks and CSV/JSON output.

#include "idjpda/filters.hpp"
#include "idjpda/gaussian_id.hpp"
#include "idjpda/jpdaf.hpp"
#include "idjpda/scenario.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace idjpda {

enum class ExperimentKind { equivalence, rho_sweep, mismatch, sigma_sweep, single_run };
enum class BackendSelection { jpdaf, id_jpdaf, both };

/// Model given to the classical filter on colored scenarios. `white` drops
/// the noise states and uses R = sigma^2 / (1 - rho^2) I instead.
enum class BaselineModel { augmented, white };

[[nodiscard]] inline std::string to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::equivalence: return "equivalence";
        case ExperimentKind::rho_sweep: return "rho_sweep";
        case ExperimentKind::mismatch: return "mismatch";
        case ExperimentKind::sigma_sweep: return "sigma_sweep";
        case ExperimentKind::single_run: return "single_run";
    }
    return "?";
}

[[nodiscard]] inline std::vector<Backend> backends_of(BackendSelection s) {
    switch (s) {
        case BackendSelection::jpdaf: return {Backend::jpdaf};
        case BackendSelection::id_jpdaf: return {Backend::id_jpdaf};
        case BackendSelection::both: break;
    }
    return {Backend::jpdaf, Backend::id_jpdaf};
}

struct FilterConfig {
    /// Noise parameters the filter assumes; empty means the truth's.
    std::optional<ColoredNoiseSpec> assumed;
    /// Added to every diagonal entry of the filter's Q.
    double q_perturbation = 0.0;
};

struct MismatchCase {
    ColoredNoiseSpec truth;
    ColoredNoiseSpec assumed;
};

struct ExperimentSpec {
    ExperimentKind kind = ExperimentKind::equivalence;
    ScenarioConfig scenario = ScenarioConfig::white_default();
    FilterConfig jpdaf_filter;
    FilterConfig id_filter;
    std::vector<double> grid;
    std::vector<MismatchCase> mismatch_cases;
    int trials = 50;
    std::uint64_t base_seed = 1;
    std::string output_dir = "out";
    BackendSelection backends = BackendSelection::both;
    unsigned threads = 0;  // 0: hardware concurrency
    double p_g = 0.99;
    BaselineModel baseline = BaselineModel::augmented;
    double equivalence_threshold = 1e-6;
    FilterOptions options;

    void validate() const {
        scenario.validate();
        if (trials < 1) throw std::invalid_argument("ExperimentSpec: trials must be >= 1");
        if (!(p_g > 0.0 && p_g < 1.0)) throw std::invalid_argument("ExperimentSpec: p_g must be in (0, 1)");
        const bool sweep = kind == ExperimentKind::rho_sweep || kind == ExperimentKind::sigma_sweep;
        if (sweep) {
            if (grid.empty()) throw std::invalid_argument("ExperimentSpec: sweep grid is empty");
            if (!std::is_sorted(grid.begin(), grid.end()))
                throw std::invalid_argument("ExperimentSpec: sweep grid must be sorted");
        }
        if (kind != ExperimentKind::equivalence && kind != ExperimentKind::single_run &&
            scenario.variant != NoiseVariant::colored)
            throw std::invalid_argument("ExperimentSpec: " + to_string(kind) + " needs the colored scenario");
        if (kind == ExperimentKind::mismatch) {
            if (mismatch_cases.empty()) throw std::invalid_argument("ExperimentSpec: no mismatch cases");
            for (const auto& c : mismatch_cases) {
                c.truth.validate();
                c.assumed.validate();
            }
        }
        if (kind == ExperimentKind::rho_sweep)
            for (double r : grid) ColoredNoiseSpec{r, scenario.colored.sigma}.validate();
        if (kind == ExperimentKind::sigma_sweep)
            for (double s : grid) ColoredNoiseSpec{scenario.colored.rho, s}.validate();
    }

    [[nodiscard]] AssociationConfig association() const {
        return AssociationConfig::from_gate_probability(scenario.p_d, scenario.clutter_mean / scenario.roi.area(), 2,
                                                        p_g);
    }
};

/// n log-spaced points from lo to hi inclusive.
[[nodiscard]] inline std::vector<double> log_grid(double lo, double hi, int n) {
    std::vector<double> g;
    for (int i = 0; i < n; ++i) {
        const double t = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
        g.push_back(std::exp(std::log(lo) + t * (std::log(hi) - std::log(lo))));
    }
    g.front() = lo;
    g.back() = hi;
    return g;
}

/// Built-in experiment definitions. `paper_scale` restores the published
/// trial and step counts.
[[nodiscard]] inline ExperimentSpec default_spec(ExperimentKind kind, bool paper_scale = false) {
    ExperimentSpec s;
    s.kind = kind;
    switch (kind) {
        case ExperimentKind::equivalence:
            s.scenario = ScenarioConfig::white_default();
            s.scenario.steps = paper_scale ? 500 : 100;
            s.trials = paper_scale ? 1000 : 50;
            break;
        case ExperimentKind::rho_sweep:
            s.scenario = ScenarioConfig::colored_default();
            s.grid = {0.0, 0.2, 0.5, 0.8, 0.9};
            s.trials = paper_scale ? 200 : 20;
            break;
        case ExperimentKind::mismatch:
            s.scenario = ScenarioConfig::colored_default();
            s.scenario.steps = 200;
            s.mismatch_cases = {{{0.95, 1.5}, {0.9, 0.5}}, {{0.9, 0.5}, {0.95, 1.5}}};
            s.trials = paper_scale ? 200 : 20;
            break;
        case ExperimentKind::sigma_sweep:
            s.scenario = ScenarioConfig::colored_default();
            s.scenario.colored.rho = 0.8;
            s.grid = log_grid(0.5, 200.0, 9);
            s.trials = paper_scale ? 200 : 20;
            break;
        case ExperimentKind::single_run:
            s.scenario = ScenarioConfig::colored_default();
            s.trials = 1;
            break;
    }
    return s;
}

// ---- per-trial simulation ----

struct FilterSetup {
    std::shared_ptr<const LinearGaussianModel> model;
    Eigen::MatrixXd prior_cov;
    std::vector<Eigen::VectorXd> initial_means;
    std::array<Index, 2> position{0, 1};
};

[[nodiscard]] inline FilterSetup make_filter_setup(const ScenarioConfig& sc, const FilterConfig& fc, Backend backend,
                                                   BaselineModel baseline) {
    FilterSetup out;
    LinearGaussianModel model;
    Eigen::VectorXd prior = sc.prior_cov_diag;
    out.initial_means = sc.initial_states;
    if (sc.variant == NoiseVariant::white) {
        model = ncv_model(sc.tau, sc.sigma_u2, sc.sigma_v);
        out.position = {0, 1};
    } else {
        const ColoredNoiseSpec assumed = fc.assumed.value_or(sc.colored);
        out.position = {0, 2};
        if (backend == Backend::jpdaf && baseline == BaselineModel::white) {
            model = interleaved_cv_model(sc.tau, sc.q_p, sc.q_v);
            model.R = assumed.stationary_variance() * Eigen::MatrixXd::Identity(2, 2);
            prior = prior.head(4).eval();
            for (auto& m : out.initial_means) m = m.head(4).eval();
        } else {
            model = augment_colored(interleaved_cv_model(sc.tau, sc.q_p, sc.q_v), assumed);
        }
    }
    model.Q.diagonal().array() += fc.q_perturbation;
    out.prior_cov = prior.asDiagonal();
    out.model = std::make_shared<const LinearGaussianModel>(std::move(model));
    return out;
}

struct TrialData {
    GroundTruth truth;
    std::vector<MeasurementSet> measurements;
};

[[nodiscard]] inline TrialData simulate_trial(const ScenarioConfig& sc, std::uint64_t base_seed, std::uint64_t trial) {
    Rng rng = Rng::for_trial(base_seed, trial);
    TrialData d;
    d.truth = generate_truth(sc, rng);
    d.measurements = generate_measurements(d.truth, sc, rng);
    return d;
}

struct BackendTrial {
    Backend backend = Backend::jpdaf;
    bool diverged = false;
    int divergence_step = 0;
    std::string diagnostic;
    /// Per step 1..steps; NaN where no target is alive.
    std::vector<double> rmse;
    /// [track][step]; NaN where the target is dead.
    std::vector<std::vector<double>> sq_err;
    /// [track][step] estimated positions, filled only when recording.
    std::vector<std::vector<Eigen::Vector2d>> positions;
    std::size_t underflow_fallbacks = 0;
};

struct TrialResult {
    std::vector<BackendTrial> backends;
    /// Running maxima over steps where both of the first two backends are
    /// still alive; NaN when fewer than two backends ran.
    double max_rmse_deviation = std::numeric_limits<double>::quiet_NaN();
    double sum_rmse_deviation = 0.0;
    std::size_t count_rmse_deviation = 0;
    double max_cov_deviation = std::numeric_limits<double>::quiet_NaN();
    int first_offending_step = 0;  // 0: none
};

struct TrialSettings {
    ScenarioConfig scenario;
    FilterConfig jpdaf_filter;
    FilterConfig id_filter;
    std::vector<Backend> backends;
    BaselineModel baseline = BaselineModel::augmented;
    AssociationConfig association;
    FilterOptions options;
    double threshold = 1e-6;
    bool record_means = false;
};

/// Squared position error per track and the per-step RMSE (mean over alive
/// targets, then square root).
inline void score_step(const std::vector<Track>& tracks, const GroundTruth& truth, const std::array<Index, 2>& pos,
                       int k, BackendTrial& out) {
    double total = 0.0;
    int alive = 0;
    for (std::size_t t = 0; t < tracks.size(); ++t) {
        double se = std::numeric_limits<double>::quiet_NaN();
        if (t < truth.targets() && truth.alive[t][static_cast<std::size_t>(k)]) {
            const Eigen::VectorXd& m = tracks[t].estimate.mean();
            const Eigen::Vector2d p = truth.position_of(t, k);
            const double dx = m(pos[0]) - p(0);
            const double dy = m(pos[1]) - p(1);
            se = dx * dx + dy * dy;
            total += se;
            ++alive;
        }
        out.sq_err[t].push_back(se);
    }
    out.rmse.push_back(alive > 0 ? std::sqrt(total / alive) : std::numeric_limits<double>::quiet_NaN());
}

[[nodiscard]] inline TrialResult run_trial(const TrialSettings& s, const TrialData& data) {
    const std::size_t nb = s.backends.size();
    const int steps = data.truth.steps();
    std::vector<FilterSetup> setups;
    std::vector<std::vector<Track>> tracks(nb);
    TrialResult res;
    res.backends.resize(nb);
    for (std::size_t b = 0; b < nb; ++b) {
        const Backend be = s.backends[b];
        setups.push_back(make_filter_setup(s.scenario, be == Backend::jpdaf ? s.jpdaf_filter : s.id_filter, be,
                                           s.baseline));
        BackendTrial& bt = res.backends[b];
        bt.backend = be;
        bt.sq_err.resize(setups[b].initial_means.size());
        if (s.record_means) bt.positions.resize(setups[b].initial_means.size());
        for (std::size_t t = 0; t < setups[b].initial_means.size(); ++t)
            tracks[b].push_back(make_track(static_cast<int>(t), setups[b].initial_means[t], setups[b].prior_cov,
                                           setups[b].model, be));
    }
    const bool compare = nb >= 2 && setups[0].model->state_dim() == setups[1].model->state_dim();
    if (compare) res.max_rmse_deviation = res.max_cov_deviation = 0.0;

    for (int k = 1; k <= steps; ++k) {
        const auto& z = data.measurements[static_cast<std::size_t>(k - 1)].positions;
        for (std::size_t b = 0; b < nb; ++b) {
            BackendTrial& bt = res.backends[b];
            if (bt.diverged) continue;
            try {
                StepStats stats;
                tracks[b] = jpdaf_step(tracks[b], z, s.association, s.options, &stats);
                bt.underflow_fallbacks += stats.underflow_fallbacks;
                for (const Track& t : tracks[b])
                    if (!t.estimate.mean().allFinite()) throw std::runtime_error("non-finite state estimate");
            } catch (const std::exception& e) {
                bt.diverged = true;
                bt.divergence_step = k;
                bt.diagnostic = e.what();
                continue;
            }
            score_step(tracks[b], data.truth, setups[b].position, k, bt);
            if (s.record_means)
                for (std::size_t t = 0; t < tracks[b].size(); ++t) {
                    const Eigen::VectorXd& m = tracks[b][t].estimate.mean();
                    bt.positions[t].emplace_back(m(setups[b].position[0]), m(setups[b].position[1]));
                }
        }
        if (compare && !res.backends[0].diverged && !res.backends[1].diverged) {
            const double r0 = res.backends[0].rmse.back();
            const double r1 = res.backends[1].rmse.back();
            bool offending = false;
            if (std::isfinite(r0) && std::isfinite(r1)) {
                const double d = std::abs(r0 - r1);
                res.max_rmse_deviation = std::max(res.max_rmse_deviation, d);
                res.sum_rmse_deviation += d;
                ++res.count_rmse_deviation;
                offending = d >= s.threshold;
            }
            for (std::size_t t = 0; t < tracks[0].size(); ++t) {
                const double d = (tracks[0][t].estimate.covariance() - tracks[1][t].estimate.covariance())
                                     .cwiseAbs()
                                     .maxCoeff();
                res.max_cov_deviation = std::max(res.max_cov_deviation, d);
                offending = offending || d >= s.threshold;
            }
            if (offending && res.first_offending_step == 0) res.first_offending_step = k;
        }
    }
    return res;
}

/// Runs body(i) for i in [0, n) on a pool of `threads` workers. The first
/// exception is rethrown after all workers stop.
template <class Body>
void parallel_for(std::size_t n, unsigned threads, Body&& body) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                body(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next = n;
                return;
            }
        }
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    if (error) std::rethrow_exception(error);
}

// ---- aggregation ----

struct MeanStderr {
    double mean = std::numeric_limits<double>::quiet_NaN();
    double stderr_ = 0.0;
    std::size_t n = 0;
};

/// Mean and sample-stddev / sqrt(N) of the finite values.
[[nodiscard]] inline MeanStderr mean_stderr(const std::vector<double>& xs) {
    MeanStderr r;
    double sum = 0.0;
    for (double x : xs)
        if (std::isfinite(x)) {
            sum += x;
            ++r.n;
        }
    if (r.n == 0) return r;
    r.mean = sum / static_cast<double>(r.n);
    if (r.n > 1) {
        double ss = 0.0;
        for (double x : xs)
            if (std::isfinite(x)) ss += (x - r.mean) * (x - r.mean);
        r.stderr_ = std::sqrt(ss / static_cast<double>(r.n - 1)) / std::sqrt(static_cast<double>(r.n));
    }
    return r;
}

struct BackendSeries {
    Backend backend = Backend::jpdaf;
    std::vector<double> rmse;         // per step, mean over valid trials
    std::vector<double> rmse_stderr;  // per step
    /// [track][step]: root of the mean over valid trials of squared error.
    std::vector<std::vector<double>> track_rmse;
    double mean_rmse = std::numeric_limits<double>::quiet_NaN();
    double stderr_rmse = 0.0;
    std::vector<double> trial_rmse;  // per valid trial: mean of per-step RMSE
    std::size_t divergences = 0;
    std::size_t valid_trials = 0;
    std::size_t underflow_fallbacks = 0;
    std::string first_diagnostic;

    [[nodiscard]] double final_rmse() const { return rmse.empty() ? std::numeric_limits<double>::quiet_NaN() : rmse.back(); }
};

/// Scalar series RMSE for one trial: the mean of the finite per-step values.
[[nodiscard]] inline double trial_scalar(const std::vector<double>& per_step) {
    return mean_stderr(per_step).mean;
}

[[nodiscard]] inline BackendSeries aggregate(const std::vector<TrialResult>& trials, std::size_t b, int steps) {
    BackendSeries s;
    s.backend = trials.front().backends[b].backend;
    const std::size_t ntracks = trials.front().backends[b].sq_err.size();
    std::vector<const BackendTrial*> valid;
    for (const auto& t : trials) {
        const BackendTrial& bt = t.backends[b];
        s.underflow_fallbacks += bt.underflow_fallbacks;
        if (bt.diverged) {
            ++s.divergences;
            if (s.first_diagnostic.empty())
                s.first_diagnostic = "step " + std::to_string(bt.divergence_step) + ": " + bt.diagnostic;
            continue;
        }
        valid.push_back(&bt);
    }
    s.valid_trials = valid.size();
    const auto us = static_cast<std::size_t>(steps);
    s.rmse.assign(us, std::numeric_limits<double>::quiet_NaN());
    s.rmse_stderr.assign(us, 0.0);
    s.track_rmse.assign(ntracks, std::vector<double>(us, std::numeric_limits<double>::quiet_NaN()));
    std::vector<double> col;
    for (std::size_t k = 0; k < us; ++k) {
        col.clear();
        for (const auto* v : valid) col.push_back(v->rmse[k]);
        const MeanStderr m = mean_stderr(col);
        s.rmse[k] = m.mean;
        s.rmse_stderr[k] = m.stderr_;
        for (std::size_t t = 0; t < ntracks; ++t) {
            col.clear();
            for (const auto* v : valid) col.push_back(v->sq_err[t][k]);
            const MeanStderr mt = mean_stderr(col);
            s.track_rmse[t][k] = mt.n > 0 ? std::sqrt(mt.mean) : std::numeric_limits<double>::quiet_NaN();
        }
    }
    for (const auto* v : valid) s.trial_rmse.push_back(trial_scalar(v->rmse));
    const MeanStderr tot = mean_stderr(s.trial_rmse);
    s.mean_rmse = tot.mean;
    s.stderr_rmse = tot.stderr_;
    return s;
}

struct RunResult {
    std::string label;
    double grid_value = std::numeric_limits<double>::quiet_NaN();
    int steps = 0;
    int trials = 0;
    std::vector<BackendSeries> backends;
    double max_rmse_deviation = std::numeric_limits<double>::quiet_NaN();
    double mean_rmse_deviation = std::numeric_limits<double>::quiet_NaN();
    double max_cov_deviation = std::numeric_limits<double>::quiet_NaN();
    int first_offending_step = 0;
    double wall_seconds = 0.0;
    std::uint64_t seed = 0;
    std::string config_hash;

    [[nodiscard]] const BackendSeries* find(Backend b) const {
        for (const auto& s : backends)
            if (s.backend == b) return &s;
        return nullptr;
    }
};

/// Runs `trials` trials of one configuration and aggregates them in trial
/// order, independent of worker scheduling.
[[nodiscard]] inline RunResult run_monte_carlo(const TrialSettings& settings, int trials, std::uint64_t base_seed,
                                               unsigned threads) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<TrialResult> results(static_cast<std::size_t>(trials));
    parallel_for(results.size(), threads, [&](std::size_t i) {
        const TrialData data = simulate_trial(settings.scenario, base_seed, i);
        results[i] = run_trial(settings, data);
    });
    RunResult r;
    r.steps = settings.scenario.steps;
    r.trials = trials;
    r.seed = base_seed;
    for (std::size_t b = 0; b < settings.backends.size(); ++b) r.backends.push_back(aggregate(results, b, r.steps));
    if (settings.backends.size() >= 2) {
        double mx = 0.0, mc = 0.0, sum = 0.0;
        std::size_t count = 0;
        bool any = false;
        for (const auto& tr : results) {
            if (!std::isfinite(tr.max_cov_deviation)) continue;
            any = true;
            mx = std::max(mx, tr.max_rmse_deviation);
            mc = std::max(mc, tr.max_cov_deviation);
            sum += tr.sum_rmse_deviation;
            count += tr.count_rmse_deviation;
            if (tr.first_offending_step > 0 &&
                (r.first_offending_step == 0 || tr.first_offending_step < r.first_offending_step))
                r.first_offending_step = tr.first_offending_step;
        }
        if (any) {
            r.max_rmse_deviation = mx;
            r.max_cov_deviation = mc;
            r.mean_rmse_deviation = count > 0 ? sum / static_cast<double>(count) : 0.0;
        }
    }
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

// ---- configuration I/O ----

using Json = nlohmann::json;

namespace detail {

inline Json vec_to_json(const Eigen::VectorXd& v) {
    Json a = Json::array();
    for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

inline Eigen::VectorXd vec_from_json(const Json& j) {
    const auto xs = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(xs.data(), static_cast<Index>(xs.size()));
}

template <class E>
E enum_from(const Json& j, std::initializer_list<std::pair<const char*, E>> names, const char* what) {
    const auto s = j.get<std::string>();
    for (const auto& [n, e] : names)
        if (s == n) return e;
    throw std::invalid_argument(std::string("config: unknown ") + what + " '" + s + "'");
}

inline void reject_unknown(const Json& j, std::initializer_list<const char*> known, const char* where) {
    for (const auto& [k, _] : j.items()) {
        bool ok = false;
        for (const char* n : known) ok = ok || k == n;
        if (!ok) throw std::invalid_argument(std::string("config: unknown key '") + k + "' in " + where);
    }
}

}  // namespace detail

[[nodiscard]] inline Json to_json(const ScenarioConfig& c) {
    Json j;
    j["variant"] = c.variant == NoiseVariant::white ? "white" : "colored";
    Json states = Json::array();
    for (const auto& s : c.initial_states) states.push_back(detail::vec_to_json(s));
    j["initial_states"] = states;
    j["prior_cov_diag"] = detail::vec_to_json(c.prior_cov_diag);
    j["steps"] = c.steps;
    j["tau"] = c.tau;
    j["sigma_u2"] = c.sigma_u2;
    j["sigma_v"] = c.sigma_v;
    j["rho"] = c.colored.rho;
    j["sigma"] = c.colored.sigma;
    j["q_p"] = c.q_p;
    j["q_v"] = c.q_v;
    j["q_n"] = c.q_n;
    j["truth_kinematics"] = c.truth_kinematics == TruthKinematics::diagonal ? "diagonal" : "ncvm";
    j["roi"] = {c.roi.x_min, c.roi.x_max, c.roi.y_min, c.roi.y_max};
    j["p_d"] = c.p_d;
    j["p_s"] = c.p_s;
    j["clutter_mean"] = c.clutter_mean;
    return j;
}

/// Overlays the keys present in `j` onto `c`.
inline void apply_json(const Json& j, ScenarioConfig& c) {
    detail::reject_unknown(j,
                           {"variant", "initial_states", "prior_cov_diag", "steps", "tau", "sigma_u2", "sigma_v", "rho",
                            "sigma", "q_p", "q_v", "q_n", "truth_kinematics", "roi", "p_d", "p_s", "clutter_mean"},
                           "scenario");
    if (j.contains("variant"))
        c.variant = detail::enum_from<NoiseVariant>(
            j["variant"], {{"white", NoiseVariant::white}, {"colored", NoiseVariant::colored}}, "variant");
    if (j.contains("initial_states")) {
        c.initial_states.clear();
        for (const auto& s : j["initial_states"]) c.initial_states.push_back(detail::vec_from_json(s));
    }
    if (j.contains("prior_cov_diag")) c.prior_cov_diag = detail::vec_from_json(j["prior_cov_diag"]);
    if (j.contains("steps")) c.steps = j["steps"].get<int>();
    if (j.contains("tau")) c.tau = j["tau"].get<double>();
    if (j.contains("sigma_u2")) c.sigma_u2 = j["sigma_u2"].get<double>();
    if (j.contains("sigma_v")) c.sigma_v = j["sigma_v"].get<double>();
    if (j.contains("rho")) c.colored.rho = j["rho"].get<double>();
    if (j.contains("sigma")) c.colored.sigma = j["sigma"].get<double>();
    if (j.contains("q_p")) c.q_p = j["q_p"].get<double>();
    if (j.contains("q_v")) c.q_v = j["q_v"].get<double>();
    if (j.contains("q_n")) c.q_n = j["q_n"].get<double>();
    if (j.contains("truth_kinematics"))
        c.truth_kinematics = detail::enum_from<TruthKinematics>(
            j["truth_kinematics"], {{"diagonal", TruthKinematics::diagonal}, {"ncvm", TruthKinematics::ncvm}},
            "truth_kinematics");
    if (j.contains("roi")) {
        const auto r = j["roi"].get<std::vector<double>>();
        if (r.size() != 4) throw std::invalid_argument("config: roi needs [x_min, x_max, y_min, y_max]");
        c.roi = {r[0], r[1], r[2], r[3]};
    }
    if (j.contains("p_d")) c.p_d = j["p_d"].get<double>();
    if (j.contains("p_s")) c.p_s = j["p_s"].get<double>();
    if (j.contains("clutter_mean")) c.clutter_mean = j["clutter_mean"].get<double>();
}

[[nodiscard]] inline Json to_json(const ExperimentSpec& s) {
    Json j;
    j["experiment"] = to_string(s.kind);
    j["scenario"] = to_json(s.scenario);
    j["grid"] = s.grid;
    Json cases = Json::array();
    for (const auto& c : s.mismatch_cases)
        cases.push_back({{"rho_true", c.truth.rho},
                         {"sigma_true", c.truth.sigma},
                         {"rho_filter", c.assumed.rho},
                         {"sigma_filter", c.assumed.sigma}});
    j["mismatch_cases"] = cases;
    j["trials"] = s.trials;
    j["seed"] = s.base_seed;
    j["backend"] = s.backends == BackendSelection::both ? "both"
                   : s.backends == BackendSelection::jpdaf ? "jpdaf"
                                                           : "id-jpdaf";
    j["p_g"] = s.p_g;
    j["baseline_model"] = s.baseline == BaselineModel::augmented ? "augmented" : "white";
    j["equivalence_threshold"] = s.equivalence_threshold;
    j["jpdaf_q_perturbation"] = s.jpdaf_filter.q_perturbation;
    j["id_q_perturbation"] = s.id_filter.q_perturbation;
    j["r_regularization"] = s.options.r_regularization;
    j["condition_limit"] = s.options.condition_limit;
    return j;
}

/// Overlays a JSON config onto `s`. Keys mirror to_json; `threads` and
/// `output_dir` are accepted but never enter the config hash.
inline void apply_json(const Json& j, ExperimentSpec& s) {
    detail::reject_unknown(j,
                           {"experiment", "scenario", "grid", "mismatch_cases", "trials", "seed", "backend", "p_g",
                            "baseline_model", "equivalence_threshold", "jpdaf_q_perturbation", "id_q_perturbation",
                            "r_regularization", "condition_limit", "threads", "output_dir"},
                           "experiment config");
    if (j.contains("experiment") && j["experiment"].get<std::string>() != to_string(s.kind))
        throw std::invalid_argument("config: file describes '" + j["experiment"].get<std::string>() +
                                    "' but '" + to_string(s.kind) + "' was requested");
    if (j.contains("scenario")) apply_json(j["scenario"], s.scenario);
    if (j.contains("grid")) s.grid = j["grid"].get<std::vector<double>>();
    if (j.contains("mismatch_cases")) {
        s.mismatch_cases.clear();
        for (const auto& c : j["mismatch_cases"]) {
            detail::reject_unknown(c, {"rho_true", "sigma_true", "rho_filter", "sigma_filter"}, "mismatch case");
            s.mismatch_cases.push_back({{c.at("rho_true").get<double>(), c.at("sigma_true").get<double>()},
                                        {c.at("rho_filter").get<double>(), c.at("sigma_filter").get<double>()}});
        }
    }
    if (j.contains("trials")) s.trials = j["trials"].get<int>();
    if (j.contains("seed")) s.base_seed = j["seed"].get<std::uint64_t>();
    if (j.contains("backend"))
        s.backends = detail::enum_from<BackendSelection>(
            j["backend"],
            {{"jpdaf", BackendSelection::jpdaf}, {"id-jpdaf", BackendSelection::id_jpdaf}, {"both", BackendSelection::both}},
            "backend");
    if (j.contains("p_g")) s.p_g = j["p_g"].get<double>();
    if (j.contains("baseline_model"))
        s.baseline = detail::enum_from<BaselineModel>(
            j["baseline_model"], {{"augmented", BaselineModel::augmented}, {"white", BaselineModel::white}},
            "baseline_model");
    if (j.contains("equivalence_threshold")) s.equivalence_threshold = j["equivalence_threshold"].get<double>();
    if (j.contains("jpdaf_q_perturbation")) s.jpdaf_filter.q_perturbation = j["jpdaf_q_perturbation"].get<double>();
    if (j.contains("id_q_perturbation")) s.id_filter.q_perturbation = j["id_q_perturbation"].get<double>();
    if (j.contains("r_regularization")) s.options.r_regularization = j["r_regularization"].get<double>();
    if (j.contains("condition_limit")) s.options.condition_limit = j["condition_limit"].get<double>();
    if (j.contains("threads")) s.threads = j["threads"].get<unsigned>();
    if (j.contains("output_dir")) s.output_dir = j["output_dir"].get<std::string>();
}

inline void load_config_file(const std::filesystem::path& path, ExperimentSpec& s) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path.string());
    Json j;
    try {
        in >> j;
    } catch (const Json::parse_error& e) {
        throw std::runtime_error("config file " + path.string() + ": " + e.what());
    }
    apply_json(j, s);
}

/// FNV-1a of the canonical (key-sorted) JSON form.
[[nodiscard]] inline std::string config_hash(const ExperimentSpec& s) {
    const std::string text = to_json(s).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---- experiments ----

struct Check {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct ExperimentReport {
    ExperimentKind kind = ExperimentKind::equivalence;
    std::vector<RunResult> runs;
    /// Single-run only: the simulated trial and per-backend estimates.
    std::optional<TrialData> trial;
    std::optional<TrialResult> trial_result;
    std::vector<Check> checks;
    std::vector<std::string> files;
    std::string config_hash;
    double wall_seconds = 0.0;

    [[nodiscard]] bool passed() const {
        return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
    }
};

[[nodiscard]] inline TrialSettings trial_settings(const ExperimentSpec& spec, const ScenarioConfig& scenario) {
    TrialSettings t;
    t.scenario = scenario;
    t.jpdaf_filter = spec.jpdaf_filter;
    t.id_filter = spec.id_filter;
    t.backends = backends_of(spec.backends);
    t.baseline = spec.baseline;
    t.options = spec.options;
    t.threshold = spec.equivalence_threshold;
    ExperimentSpec tmp = spec;
    tmp.scenario = scenario;
    t.association = tmp.association();
    return t;
}

namespace detail {

inline std::string fmt(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline std::string fmt_short(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4g", x);
    return buf;
}

inline bool near(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(b)); }

}  // namespace detail

/// Ordering check: ID mean + 2 se below JPDAF mean - 2 se.
[[nodiscard]] inline bool separated_below(const BackendSeries& id, const BackendSeries& jp) {
    return id.mean_rmse + 2.0 * id.stderr_rmse < jp.mean_rmse - 2.0 * jp.stderr_rmse;
}

[[nodiscard]] inline std::vector<Check> evaluate(const ExperimentSpec& spec, const std::vector<RunResult>& runs) {
    std::vector<Check> out;
    if (spec.backends != BackendSelection::both) return out;
    using detail::fmt_short;
    switch (spec.kind) {
        case ExperimentKind::equivalence: {
            const RunResult& r = runs.front();
            const double thr = spec.equivalence_threshold;
            Check c{"equivalence", r.max_rmse_deviation < thr && r.max_cov_deviation < thr &&
                                       r.find(Backend::jpdaf)->divergences == 0 &&
                                       r.find(Backend::id_jpdaf)->divergences == 0,
                    "max |dRMSE| " + fmt_short(r.max_rmse_deviation) + ", max |dP| " +
                        fmt_short(r.max_cov_deviation) + ", threshold " + fmt_short(thr)};
            if (r.first_offending_step > 0) c.detail += ", first offending step " + std::to_string(r.first_offending_step);
            out.push_back(c);
            break;
        }
        case ExperimentKind::rho_sweep:
            for (const RunResult& r : runs) {
                const auto* jp = r.find(Backend::jpdaf);
                const auto* id = r.find(Backend::id_jpdaf);
                const std::string stats = "ID " + fmt_short(id->mean_rmse) + "+-" + fmt_short(2 * id->stderr_rmse) +
                                          " vs JPDAF " + fmt_short(jp->mean_rmse) + "+-" +
                                          fmt_short(2 * jp->stderr_rmse);
                for (double rho : {0.5, 0.8, 0.9})
                    if (detail::near(r.grid_value, rho))
                        out.push_back({"rho=" + fmt_short(rho) + " ordering", separated_below(*id, *jp), stats});
                if (detail::near(r.grid_value, 0.9)) {
                    const double ratio = id->mean_rmse / jp->mean_rmse;
                    out.push_back({"rho=0.9 ratio", ratio <= 0.7, "ID/JPDAF " + fmt_short(ratio) + " (limit 0.7)"});
                }
            }
            break;
        case ExperimentKind::mismatch:
            for (const RunResult& r : runs) {
                const double ratio = r.find(Backend::jpdaf)->final_rmse() / r.find(Backend::id_jpdaf)->final_rmse();
                out.push_back({r.label + " final-step ratio", ratio >= 1.5,
                               "JPDAF/ID " + fmt_short(ratio) + " (limit 1.5)"});
            }
            break;
        case ExperimentKind::sigma_sweep:
            for (const RunResult& r : runs) {
                const auto* jp = r.find(Backend::jpdaf);
                const auto* id = r.find(Backend::id_jpdaf);
                const std::string stats = "ID " + fmt_short(id->mean_rmse) + "+-" + fmt_short(2 * id->stderr_rmse) +
                                          " vs JPDAF " + fmt_short(jp->mean_rmse) + "+-" +
                                          fmt_short(2 * jp->stderr_rmse);
                if (r.grid_value >= 30.0 - 1e-9)
                    out.push_back({"sigma=" + fmt_short(r.grid_value) + " ID <= JPDAF", id->mean_rmse <= jp->mean_rmse,
                                   stats});
                if (detail::near(r.grid_value, 200.0))
                    out.push_back({"sigma=200 separation", separated_below(*id, *jp), stats});
            }
            break;
        case ExperimentKind::single_run: break;
    }
    return out;
}

[[nodiscard]] inline ExperimentReport run_experiment(const ExperimentSpec& spec) {
    spec.validate();
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentReport rep;
    rep.kind = spec.kind;
    rep.config_hash = config_hash(spec);
    auto run_at = [&](const ScenarioConfig& sc, const FilterConfig& jp, const FilterConfig& id, std::string label,
                      double value) {
        ExperimentSpec local = spec;
        local.jpdaf_filter = jp;
        local.id_filter = id;
        RunResult r = run_monte_carlo(trial_settings(local, sc), spec.trials, spec.base_seed, spec.threads);
        r.label = std::move(label);
        r.grid_value = value;
        r.config_hash = rep.config_hash;
        rep.runs.push_back(std::move(r));
    };
    switch (spec.kind) {
        case ExperimentKind::equivalence:
            run_at(spec.scenario, spec.jpdaf_filter, spec.id_filter, "equivalence", 0.0);
            break;
        case ExperimentKind::rho_sweep:
            for (double rho : spec.grid) {
                ScenarioConfig sc = spec.scenario;
                sc.colored.rho = rho;
                run_at(sc, spec.jpdaf_filter, spec.id_filter, "rho=" + detail::fmt_short(rho), rho);
            }
            break;
        case ExperimentKind::sigma_sweep:
            for (double sigma : spec.grid) {
                ScenarioConfig sc = spec.scenario;
                sc.colored.sigma = sigma;
                run_at(sc, spec.jpdaf_filter, spec.id_filter, "sigma=" + detail::fmt_short(sigma), sigma);
            }
            break;
        case ExperimentKind::mismatch:
            for (std::size_t i = 0; i < spec.mismatch_cases.size(); ++i) {
                const MismatchCase& mc = spec.mismatch_cases[i];
                ScenarioConfig sc = spec.scenario;
                sc.colored = mc.truth;
                FilterConfig jp = spec.jpdaf_filter;
                FilterConfig id = spec.id_filter;
                jp.assumed = id.assumed = mc.assumed;
                run_at(sc, jp, id, "case" + std::to_string(i + 1), static_cast<double>(i + 1));
            }
            break;
        case ExperimentKind::single_run: {
            TrialSettings ts = trial_settings(spec, spec.scenario);
            ts.record_means = true;
            TrialData data = simulate_trial(spec.scenario, spec.base_seed, 0);
            TrialResult tr = run_trial(ts, data);
            RunResult r;
            r.label = "single_run";
            r.steps = spec.scenario.steps;
            r.trials = 1;
            r.seed = spec.base_seed;
            r.config_hash = rep.config_hash;
            for (std::size_t b = 0; b < tr.backends.size(); ++b) r.backends.push_back(aggregate({tr}, b, r.steps));
            r.max_rmse_deviation = tr.max_rmse_deviation;
            r.max_cov_deviation = tr.max_cov_deviation;
            r.first_offending_step = tr.first_offending_step;
            rep.runs.push_back(std::move(r));
            rep.trial = std::move(data);
            rep.trial_result = std::move(tr);
            break;
        }
    }
    rep.checks = evaluate(spec, rep.runs);
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

// ---- output ----

inline constexpr const char* kRmseSchemaNote =
    "# rmse: per trial and step, squared position error is averaged over tracks whose target is alive and then "
    "square-rooted; step columns average that over trials; summary columns average it over steps, then over "
    "trials; stderr = sample stddev / sqrt(valid trials)";

namespace detail {

inline std::vector<std::string> backend_names(const RunResult& r) {
    std::vector<std::string> out;
    for (const auto& b : r.backends) out.push_back(b.backend == Backend::jpdaf ? "jpdaf" : "id");
    return out;
}

inline void write_step_series(std::ostream& os, const RunResult& r) {
    os << kRmseSchemaNote << '\n' << "step";
    const auto names = backend_names(r);
    for (const auto& n : names) os << ",rmse_" << n << ",stderr_" << n;
    for (std::size_t b = 0; b < r.backends.size(); ++b)
        for (std::size_t t = 0; t < r.backends[b].track_rmse.size(); ++t) os << ",track" << t << "_rmse_" << names[b];
    os << '\n';
    for (int k = 0; k < r.steps; ++k) {
        const auto uk = static_cast<std::size_t>(k);
        os << (k + 1);
        for (const auto& b : r.backends) os << ',' << fmt(b.rmse[uk]) << ',' << fmt(b.rmse_stderr[uk]);
        for (const auto& b : r.backends)
            for (const auto& tr : b.track_rmse) os << ',' << fmt(tr[uk]);
        os << '\n';
    }
}

inline void write_sweep(std::ostream& os, const std::vector<RunResult>& runs, const char* column) {
    os << kRmseSchemaNote << '\n' << column;
    const auto names = backend_names(runs.front());
    for (const auto& n : names) os << ",rmse_" << n << ",stderr_" << n;
    for (const auto& n : names) os << ",divergences_" << n;
    os << '\n';
    for (const auto& r : runs) {
        os << fmt(r.grid_value);
        for (const auto& b : r.backends) os << ',' << fmt(b.mean_rmse) << ',' << fmt(b.stderr_rmse);
        for (const auto& b : r.backends) os << ',' << b.divergences;
        os << '\n';
    }
}

inline void write_estimates(std::ostream& os, const TrialResult& tr) {
    os << "step,backend,track_id,x,y\n";
    for (const auto& b : tr.backends)
        for (std::size_t t = 0; t < b.positions.size(); ++t)
            for (std::size_t k = 0; k < b.positions[t].size(); ++k)
                os << (k + 1) << ',' << to_string(b.backend) << ',' << t << ',' << fmt(b.positions[t][k](0)) << ','
                   << fmt(b.positions[t][k](1)) << '\n';
}

inline Json run_metadata(const RunResult& r) {
    Json j;
    j["label"] = r.label;
    j["steps"] = r.steps;
    j["trials"] = r.trials;
    j["seed"] = r.seed;
    j["config_hash"] = r.config_hash;
    j["wall_seconds"] = r.wall_seconds;
    auto num = [](double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); };
    j["max_rmse_deviation"] = num(r.max_rmse_deviation);
    j["mean_rmse_deviation"] = num(r.mean_rmse_deviation);
    j["max_cov_deviation"] = num(r.max_cov_deviation);
    j["first_offending_step"] = r.first_offending_step;
    Json bs = Json::array();
    for (const auto& b : r.backends)
        bs.push_back({{"backend", to_string(b.backend)},
                      {"mean_rmse", num(b.mean_rmse)},
                      {"stderr_rmse", num(b.stderr_rmse)},
                      {"divergences", b.divergences},
                      {"valid_trials", b.valid_trials},
                      {"underflow_fallbacks", b.underflow_fallbacks},
                      {"first_divergence", b.first_diagnostic}});
    j["backends"] = bs;
    return j;
}

}  // namespace detail

/// Writes the experiment's CSV files and a `<experiment>.meta.json`
/// sidecar into spec.output_dir. Returns the written paths.
inline std::vector<std::string> write_report(const ExperimentSpec& spec, ExperimentReport& rep) {
    namespace fs = std::filesystem;
    const fs::path dir(spec.output_dir);
    fs::create_directories(dir);
    std::vector<std::string> files;
    auto open = [&](const std::string& name) {
        const fs::path p = dir / name;
        std::ofstream os(p, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write " + p.string());
        files.push_back(p.string());
        return os;
    };
    const std::string base = to_string(spec.kind);
    switch (spec.kind) {
        case ExperimentKind::equivalence: {
            auto os = open(base + ".csv");
            detail::write_step_series(os, rep.runs.front());
            break;
        }
        case ExperimentKind::rho_sweep:
        case ExperimentKind::sigma_sweep: {
            const char* col = spec.kind == ExperimentKind::rho_sweep ? "rho" : "sigma";
            {
                auto os = open(base + ".csv");
                detail::write_sweep(os, rep.runs, col);
            }
            for (std::size_t i = 0; i < rep.runs.size(); ++i) {
                auto os = open(base + "_series_" + std::to_string(i) + ".csv");
                detail::write_step_series(os, rep.runs[i]);
            }
            break;
        }
        case ExperimentKind::mismatch:
            for (const auto& r : rep.runs) {
                auto os = open(base + "_" + r.label + ".csv");
                detail::write_step_series(os, r);
            }
            break;
        case ExperimentKind::single_run: {
            {
                auto os = open("truth.csv");
                write_truth_csv(os, rep.trial->truth, spec.scenario.variant);
            }
            {
                auto os = open("measurements.csv");
                write_measurements_csv(os, rep.trial->measurements);
            }
            {
                auto os = open("estimates.csv");
                detail::write_estimates(os, *rep.trial_result);
            }
            auto os = open(base + ".csv");
            detail::write_step_series(os, rep.runs.front());
            break;
        }
    }
    Json meta;
    meta["experiment"] = base;
    meta["config"] = to_json(spec);
    meta["config_hash"] = rep.config_hash;
    meta["wall_seconds"] = rep.wall_seconds;
    Json runs = Json::array();
    for (const auto& r : rep.runs) runs.push_back(detail::run_metadata(r));
    meta["runs"] = runs;
    Json checks = Json::array();
    for (const auto& c : rep.checks) checks.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
    meta["checks"] = checks;
    {
        auto os = open(base + ".meta.json");
        os << meta.dump(2) << '\n';
    }
    rep.files = files;
    return files;
}

}  // namespace idjpda
