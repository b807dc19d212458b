#include "idjpda/jpdaf.hpp"
#include "idjpda/scenario.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace idjpda;
using Eigen::VectorXd;

namespace {

ScenarioConfig clean_white() {
    ScenarioConfig c = ScenarioConfig::white_default();
    c.sigma_u2 = 0.0;
    c.sigma_v = 0.0;
    c.p_d = 1.0;
    c.p_s = 1.0;
    c.clutter_mean = 0.0;
    return c;
}

double lag1_autocorrelation(const std::vector<double>& x) {
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        den += (x[i] - mean) * (x[i] - mean);
        if (i + 1 < x.size()) num += (x[i] - mean) * (x[i + 1] - mean);
    }
    return num / den;
}

}  // namespace

TEST(Rng, FixedSeedIsReproducible) {
    Rng a(7), b(7), c(8);
    for (int i = 0; i < 100; ++i) {
        const double x = a.normal();
        EXPECT_EQ(x, b.normal());
        if (i == 0) {
            EXPECT_NE(x, c.normal());
        }
    }
    EXPECT_EQ(Rng::for_trial(5, 3).uniform(), Rng(5 ^ 3).uniform());
}

TEST(Rng, NormalMoments) {
    Rng r(9);
    double s = 0.0, s2 = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        s += x;
        s2 += x * x;
    }
    EXPECT_NEAR(s / n, 0.0, 4.0 / std::sqrt(n));
    EXPECT_NEAR(s2 / n, 1.0, 4.0 * std::sqrt(2.0 / n));
}

TEST(Rng, PoissonMean) {
    Rng r(10);
    double s = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) s += static_cast<double>(r.poisson(5.0));
    EXPECT_NEAR(s / n, 5.0, 4.0 * std::sqrt(5.0 / n));
    EXPECT_EQ(r.poisson(0.0), 0u);
    EXPECT_THROW((void)r.poisson(-1.0), std::invalid_argument);
}

TEST(GenerateTruth, StraightLineWithoutProcessNoise) {
    const ScenarioConfig c = clean_white();
    Rng rng(1);
    const GroundTruth t = generate_truth(c, rng);
    ASSERT_EQ(t.targets(), 2u);
    ASSERT_EQ(t.steps(), c.steps);
    for (std::size_t i = 0; i < t.targets(); ++i) {
        const VectorXd& x0 = c.initial_states[i];
        for (int k = 0; k <= c.steps; ++k) {
            const Eigen::Vector2d p = t.position_of(i, k);
            EXPECT_NEAR(p(0), x0(0) + k * x0(2), 1e-9);
            EXPECT_NEAR(p(1), x0(1) + k * x0(3), 1e-9);
            EXPECT_TRUE(t.alive[i][static_cast<std::size_t>(k)]);
        }
    }
}

TEST(GenerateTruth, ColoredInitialStates) {
    const ScenarioConfig c = ScenarioConfig::colored_default();
    ASSERT_EQ(c.initial_states.size(), 2u);
    EXPECT_EQ(c.initial_states[0], (VectorXd(6) << 0, 1, 0, 1, 0, 0).finished());
    EXPECT_EQ(c.initial_states[1], (VectorXd(6) << 20, -1, 10, -1, 0, 0).finished());
    EXPECT_DOUBLE_EQ(c.tau, 0.05);
    EXPECT_DOUBLE_EQ(c.colored.rho, 0.9);
    EXPECT_DOUBLE_EQ(c.colored.sigma, 3.0);
    Rng rng(2);
    const GroundTruth t = generate_truth(c, rng);
    EXPECT_EQ(t.states[1][0], c.initial_states[1]);
    EXPECT_EQ(t.position_of(1, 0), Eigen::Vector2d(20, 10));
}

TEST(GenerateTruth, ColoredNoiseLagOneAutocorrelation) {
    ScenarioConfig c = ScenarioConfig::colored_default();
    c.steps = 2000;
    Rng rng(3);
    const GroundTruth t = generate_truth(c, rng);
    std::vector<double> nx;
    for (int k = 1; k <= c.steps; ++k) nx.push_back(t.states[0][static_cast<std::size_t>(k)](4));
    EXPECT_NEAR(lag1_autocorrelation(nx), 0.9, 0.05);
}

TEST(GenerateTruth, ColoredNoiseStationaryVariance) {
    ScenarioConfig c = ScenarioConfig::colored_default();
    c.steps = 100000;
    c.initial_states.resize(1);
    Rng rng(4);
    const GroundTruth t = generate_truth(c, rng);
    double s = 0.0, s2 = 0.0;
    for (int k = 1; k <= c.steps; ++k) {
        const double v = t.states[0][static_cast<std::size_t>(k)](4);
        s += v;
        s2 += v * v;
    }
    const double n = c.steps;
    const double var = s2 / n - (s / n) * (s / n);
    const double expect = 9.0 / (1.0 - 0.81);
    EXPECT_NEAR(var, expect, 0.1 * expect);
}

TEST(GenerateTruth, AliveFlagsArePrefix) {
    ScenarioConfig c = ScenarioConfig::white_default();
    c.p_s = 0.95;
    c.initial_states.assign(20, c.initial_states[0]);
    Rng rng(5);
    const GroundTruth t = generate_truth(c, rng);
    int died = 0;
    for (std::size_t i = 0; i < t.targets(); ++i) {
        bool dead = false;
        for (int k = 0; k <= c.steps; ++k) {
            const bool a = t.alive[i][static_cast<std::size_t>(k)];
            if (dead) {
                EXPECT_FALSE(a);
            }
            if (!a && !dead) {
                dead = true;
                ++died;
                EXPECT_EQ(t.states[i][static_cast<std::size_t>(k)], t.states[i][static_cast<std::size_t>(k - 1)]);
            }
        }
    }
    EXPECT_GT(died, 0);
}

TEST(GenerateTruth, InvalidConfig) {
    ScenarioConfig c = ScenarioConfig::white_default();
    c.steps = 0;
    Rng rng(6);
    EXPECT_THROW((void)generate_truth(c, rng), std::invalid_argument);
    c = ScenarioConfig::white_default();
    c.roi.x_max = c.roi.x_min;
    EXPECT_THROW((void)generate_truth(c, rng), std::invalid_argument);
    c = ScenarioConfig::white_default();
    c.p_d = 0.0;
    EXPECT_THROW((void)generate_truth(c, rng), std::invalid_argument);
}

TEST(GenerateMeasurements, ExactWhenNoiseless) {
    const ScenarioConfig c = clean_white();
    Rng rng(7);
    const GroundTruth t = generate_truth(c, rng);
    const auto sets = generate_measurements(t, c, rng);
    ASSERT_EQ(sets.size(), static_cast<std::size_t>(c.steps));
    for (const auto& s : sets) {
        ASSERT_EQ(s.positions.size(), 2u);
        for (std::size_t i = 0; i < 2; ++i) {
            const auto origin = static_cast<std::size_t>(s.origin[i]);
            EXPECT_EQ(s.positions[i], VectorXd(t.position_of(origin, s.step)));
        }
    }
}

TEST(GenerateMeasurements, ColoredAddsTheNoiseStates) {
    ScenarioConfig c = ScenarioConfig::colored_default();
    c.steps = 50;
    Rng rng(8);
    const GroundTruth t = generate_truth(c, rng);
    const auto sets = generate_measurements(t, c, rng);
    for (const auto& s : sets) {
        for (std::size_t i = 0; i < s.positions.size(); ++i) {
            const auto& x = t.states[static_cast<std::size_t>(s.origin[i])][static_cast<std::size_t>(s.step)];
            EXPECT_EQ(s.positions[i](0), x(0) + x(4));
            EXPECT_EQ(s.positions[i](1), x(2) + x(5));
        }
    }
}

TEST(GenerateMeasurements, ClutterMean) {
    ScenarioConfig c = ScenarioConfig::white_default();
    c.steps = 1000;
    Rng rng(9);
    const GroundTruth t = generate_truth(c, rng);
    const auto sets = generate_measurements(t, c, rng);
    double clutter = 0.0;
    for (const auto& s : sets)
        for (int o : s.origin) clutter += o == kClutterOrigin ? 1.0 : 0.0;
    const double mean = clutter / static_cast<double>(sets.size());
    EXPECT_GE(mean, 4.7);
    EXPECT_LE(mean, 5.3);
}

TEST(GenerateMeasurements, DetectionRate) {
    ScenarioConfig c = ScenarioConfig::white_default();
    c.steps = 2000;
    c.p_s = 1.0;
    c.clutter_mean = 0.0;
    Rng rng(10);
    const GroundTruth t = generate_truth(c, rng);
    const auto sets = generate_measurements(t, c, rng);
    double detected = 0.0;
    for (const auto& s : sets) detected += static_cast<double>(s.positions.size());
    const double n = 2.0 * c.steps;
    const double rate = detected / n;
    EXPECT_NEAR(rate, 0.5, 3.0 * std::sqrt(0.25 / n));
}

TEST(GenerateMeasurements, ClutterIsUniformOverTheRegion) {
    ScenarioConfig c = ScenarioConfig::white_default();
    c.steps = 3000;
    c.p_d = 1e-9;
    Rng rng(11);
    const GroundTruth t = generate_truth(c, rng);
    const auto sets = generate_measurements(t, c, rng);
    std::vector<double> counts(100, 0.0);
    double total = 0.0;
    for (const auto& s : sets) {
        for (std::size_t i = 0; i < s.positions.size(); ++i) {
            if (s.origin[i] != kClutterOrigin) continue;
            const double x = s.positions[i](0), y = s.positions[i](1);
            ASSERT_TRUE(c.roi.contains(x, y));
            const int cx = std::min(9, static_cast<int>((x - c.roi.x_min) / (c.roi.x_max - c.roi.x_min) * 10));
            const int cy = std::min(9, static_cast<int>((y - c.roi.y_min) / (c.roi.y_max - c.roi.y_min) * 10));
            counts[static_cast<std::size_t>(cy * 10 + cx)] += 1.0;
            total += 1.0;
        }
    }
    ASSERT_GE(total, 1e4);
    const double expected = total / 100.0;
    double stat = 0.0;
    for (double n : counts) stat += (n - expected) * (n - expected) / expected;
    EXPECT_LT(stat, chi2_quantile(0.999, 99));
}

TEST(GenerateMeasurements, DeadTargetsAreSilent) {
    ScenarioConfig c = ScenarioConfig::white_default();
    c.p_s = 0.9;
    c.p_d = 1.0;
    c.clutter_mean = 0.0;
    Rng rng(12);
    const GroundTruth t = generate_truth(c, rng);
    const auto sets = generate_measurements(t, c, rng);
    for (const auto& s : sets)
        for (int o : s.origin) EXPECT_TRUE(t.alive[static_cast<std::size_t>(o)][static_cast<std::size_t>(s.step)]);
}

TEST(GenerateMeasurements, OrderIsShuffled) {
    ScenarioConfig c = clean_white();
    c.steps = 200;
    Rng rng(13);
    const GroundTruth t = generate_truth(c, rng);
    const auto sets = generate_measurements(t, c, rng);
    int first_is_zero = 0;
    for (const auto& s : sets) first_is_zero += s.origin[0] == 0 ? 1 : 0;
    EXPECT_GT(first_is_zero, 60);
    EXPECT_LT(first_is_zero, 140);
}

TEST(Scenario, IdenticalSeedsGiveIdenticalOutput) {
    const ScenarioConfig c = ScenarioConfig::white_default();
    auto render = [&](std::uint64_t seed) {
        Rng rng(seed);
        const GroundTruth t = generate_truth(c, rng);
        const auto sets = generate_measurements(t, c, rng);
        std::ostringstream os;
        write_truth_csv(os, t, c.variant);
        write_measurements_csv(os, sets);
        return os.str();
    };
    EXPECT_EQ(render(42), render(42));
    EXPECT_NE(render(42), render(43));
}

TEST(Scenario, CsvHeaders) {
    ScenarioConfig c = ScenarioConfig::colored_default();
    c.steps = 2;
    Rng rng(14);
    const GroundTruth t = generate_truth(c, rng);
    std::ostringstream a, b;
    write_truth_csv(a, t, c.variant);
    write_measurements_csv(b, generate_measurements(t, c, rng));
    EXPECT_EQ(a.str().substr(0, a.str().find('\n')), "step,target_id,alive,x,y,vx,vy,nx,ny");
    EXPECT_EQ(b.str().substr(0, b.str().find('\n')), "step,origin,x,y");
}
