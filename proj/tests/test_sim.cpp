/*
 * Copyright 2026 The gpmpc Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "gpmpc/lemniscate.hpp"
#include "gpmpc/sim.hpp"

using namespace gpmpc;

namespace {

LemniscateReference reference(double speed_scale, double ramp_fraction = 0.25) {
    LemniscateConfig c;
    c.speed_scale = speed_scale;
    c.ramp_fraction = ramp_fraction;
    return LemniscateReference(c, QuadParams{});
}

FlightLogRow offset_row(double t, const Eigen::Vector3d& offset) {
    FlightLogRow r;
    r.t = t;
    r.reference.p = {1.0, 2.0, 3.0};
    r.truth.p = r.reference.p + offset;
    return r;
}

FlightLog constant_offset_log(const Eigen::Vector3d& offset) {
    FlightLog log;
    log.eval_end = 1.0;
    for (int k = 0; k <= 50; ++k) log.rows.push_back(offset_row(0.02 * k, offset));
    return log;
}

void expect_same_log(const FlightLog& a, const FlightLog& b) {
    ASSERT_EQ(a.rows.size(), b.rows.size());
    for (std::size_t k = 0; k < a.rows.size(); ++k) {
        const FlightLogRow &x = a.rows[k], &y = b.rows[k];
        ASSERT_EQ(x.t, y.t);
        ASSERT_EQ(x.truth.to_vector(), y.truth.to_vector()) << "row " << k;
        ASSERT_EQ(x.measured.to_vector(), y.measured.to_vector()) << "row " << k;
        ASSERT_EQ(x.reference.to_vector(), y.reference.to_vector()) << "row " << k;
        ASSERT_EQ(x.input.thrusts, y.input.thrusts) << "row " << k;
        ASSERT_EQ(x.predicted_next_velocity, y.predicted_next_velocity) << "row " << k;
        ASSERT_EQ(x.cost, y.cost) << "row " << k;
        ASSERT_EQ(x.qp_iterations, y.qp_iterations) << "row " << k;
    }
}

} // namespace

TEST(Lemniscate, StartsAtRestAtOrigin) {
    const ReferencePoint r = reference(1.0).at(0.0);
    EXPECT_LT((r.state.p - Eigen::Vector3d(0, 0, 2.5)).norm(), 1e-15);
    EXPECT_LT(r.state.v.norm(), 1e-15);
    EXPECT_NEAR(reference(0.0).at(0.0).input.thrusts(0), QuadParams{}.hover_thrust(), 1e-12);
}

TEST(Lemniscate, FullRatePeriodReturnsToStart) {
    const LemniscateReference ref = reference(1.0, 0.0);
    const double period = 2.0 * std::numbers::pi / std::numbers::sqrt2;
    EXPECT_NEAR(period, 4.4429, 1e-4);
    const ReferencePoint r = ref.at(period);
    EXPECT_LT((r.state.p - Eigen::Vector3d(0, 0, 2.5)).norm(), 1e-12);
    EXPECT_GT((ref.at(0.5 * period).state.p - Eigen::Vector3d(0, 0, 2.5)).norm(), 9.0);
}

TEST(Lemniscate, PeakSpeedAtFullRateIsTenMetresPerSecond) {
    const LemniscateReference ref = reference(1.0, 0.0);
    double peak = 0.0;
    for (int i = 0; i <= 100000; ++i) peak = std::max(peak, ref.at(4.5 * i / 100000.0).state.v.norm());
    EXPECT_NEAR(peak, 10.0, 1e-6);
}

TEST(Lemniscate, SpeedScaleScalesPeakSpeed) {
    for (double s : {0.4, 0.8}) {
        const LemniscateReference ref = reference(s, 0.0);
        double peak = 0.0;
        for (int i = 0; i <= 20000; ++i) peak = std::max(peak, ref.at(12.0 * i / 20000.0).state.v.norm());
        EXPECT_NEAR(peak, 10.0 * s, 1e-4);
    }
}

TEST(Lemniscate, PhaseRateRampsUpAndDown) {
    const LemniscateReference ref = reference(1.0);
    EXPECT_EQ(ref.rate(0.0), 0.0);
    EXPECT_DOUBLE_EQ(ref.rate(3.125), 0.5);
    EXPECT_DOUBLE_EQ(ref.rate(6.25), 1.0);
    EXPECT_DOUBLE_EQ(ref.rate(12.0), 1.0);
    EXPECT_DOUBLE_EQ(ref.rate(21.875), 0.5);
    EXPECT_EQ(ref.rate(25.0), 0.0);
    EXPECT_EQ(ref.rate(30.0), 0.0);
    for (double corner : {6.25, 18.75, 25.0})
        EXPECT_NEAR(ref.phase(corner - 1e-9), ref.phase(corner + 1e-9), 1e-8) << corner;
    EXPECT_DOUBLE_EQ(ref.phase(25.0), 18.75);
}

TEST(Lemniscate, FeedForwardThrustMatchesAcceleration) {
    const LemniscateReference ref = reference(1.0);
    const QuadParams p;
    for (double t : {1.0, 7.3, 12.0, 20.5}) {
        const ReferencePoint r = ref.at(t);
        const double f = (r.acceleration - p.gravity_world()).norm();
        for (int i = 0; i < 4; ++i) EXPECT_NEAR(r.input.thrusts(i), p.mass * f / 4.0, 1e-12);
        const Eigen::Vector3d zb = quat_rotate(r.state.q, Eigen::Vector3d::UnitZ());
        EXPECT_LT((zb - (r.acceleration - p.gravity_world()).normalized()).norm(), 1e-12);
    }
}

TEST(Lemniscate, NoBodyRateSpikeAtRampCorners) {
    const LemniscateReference ref = reference(1.0);
    double worst = 0.0;
    for (int i = 0; i <= 2600; ++i) worst = std::max(worst, ref.at(0.01 * i).state.w.norm());
    for (double corner : {6.25, 18.75, 25.0})
        for (double eps : {-1e-4, -1e-7, 0.0, 1e-7, 1e-4}) {
            const double w = ref.at(corner + eps).state.w.norm();
            EXPECT_LT(w, 1.5 * worst) << corner << " " << eps;
        }
    EXPECT_LT(worst, 8.0);
}

TEST(Lemniscate, BodyRatesMatchAttitudeDerivative) {
    const LemniscateReference ref = reference(1.0);
    for (double t : {3.0, 10.0, 15.5}) {
        const ReferencePoint r = ref.at(t);
        const double h = 1e-3;
        const Eigen::Quaterniond q1 = align_hemisphere(ref.at(t + h).state.q, r.state.q);
        // q(t+h) ≈ q(t) ⊗ exp(ω h / 2)
        const Eigen::Vector3d w_fd = 2.0 * (r.state.q.conjugate() * q1).vec() / h;
        EXPECT_LT((w_fd - r.state.w).norm(), 5e-3 * std::max(1.0, r.state.w.norm())) << t;
    }
}

TEST(Lemniscate, WindowIsSampledAndSignAligned) {
    const LemniscateReference ref = reference(1.0);
    const ReferenceWindow w = ref.window(10.0, 10, 0.1);
    ASSERT_EQ(w.states.size(), 11U);
    ASSERT_EQ(w.inputs.size(), 10U);
    EXPECT_EQ(w.states[4].p, ref.at(10.0 + 4 * 0.1).state.p);
    for (std::size_t k = 1; k < w.states.size(); ++k) EXPECT_GE(w.states[k].q.dot(w.states[k - 1].q), 0.0);
}

TEST(Lemniscate, RejectsInvalidConfiguration) {
    LemniscateConfig c;
    c.ramp_fraction = 0.6;
    EXPECT_THROW(LemniscateReference(c, QuadParams{}), InvalidInput);
    c = {};
    c.duration = 0.0;
    EXPECT_THROW(LemniscateReference(c, QuadParams{}), InvalidInput);
}

TEST(PlantStep, NoDragIsBitwiseNominal) {
    SimConfig sim;
    sim.drag.setZero();
    const QuadParams p;
    SplitMix64 rng(3);
    for (int i = 0; i < 50; ++i) {
        State x;
        x.p = {rng.normal(), rng.normal(), rng.normal()};
        x.v = {rng.normal(5.0), rng.normal(5.0), rng.normal(5.0)};
        x.w = {rng.normal(), rng.normal(), rng.normal()};
        x.q = axis_angle({rng.normal(), rng.normal(), rng.normal()}, rng.normal());
        const ControlInput u = ControlInput::uniform(1.0 + rng.uniform());
        EXPECT_EQ(plant_step(x, u, 1e-3, sim, p).to_vector(), rk4_step(x, u, 1e-3, p).to_vector());
    }
}

TEST(PlantStep, AtRestMatchesNominal) {
    const SimConfig sim;
    const QuadParams p;
    const State x = State::hover_at({0, 0, 1});
    const ControlInput u = ControlInput::uniform(p.hover_thrust());
    EXPECT_LT((plant_step(x, u, 1e-3, sim, p).to_vector() - rk4_step(x, u, 1e-3, p).to_vector()).norm(), 1e-15);
}

TEST(PlantStep, LevelFlightDragDeceleration) {
    const SimConfig sim;
    const QuadParams p;
    State x = State::hover_at({0, 0, 1});
    x.v = {5.0, 0.0, 0.0};
    const ControlInput u = ControlInput::uniform(p.hover_thrust());
    const double dt = 1e-3;
    const double extra = (plant_step(x, u, dt, sim, p).v.x() - rk4_step(x, u, dt, p).v.x()) / dt;
    EXPECT_NEAR(extra, -1.5, 1e-3);
}

TEST(PlantStep, DragActsInBodyFrame) {
    SimConfig sim;
    sim.drag = {0.0, 0.0, 0.5};
    const QuadParams p;
    State x;
    x.q = axis_angle({1, 0, 0}, std::numbers::pi / 2); // body z along world -y
    x.v = {0.0, 2.0, 0.0};
    const double dt = 1e-4;
    const Eigen::Vector3d dv =
        (plant_step(x, ControlInput{}, dt, sim, p).v - rk4_step(x, ControlInput{}, dt, p).v) / dt;
    EXPECT_NEAR(dv.y(), -1.0, 1e-3);
    EXPECT_NEAR(dv.x(), 0.0, 1e-9);
}

TEST(Sense, ZeroNoiseReturnsTruth) {
    SimConfig sim;
    SplitMix64 rng(1);
    State x;
    x.p = {1, 2, 3};
    x.q = axis_angle({0, 1, 0}, 0.3);
    const State m = sense(x, sim, rng);
    EXPECT_EQ(m.to_vector(), x.to_vector());
}

TEST(Sense, NoiseStatistics) {
    SimConfig sim;
    sim.noise = NoiseConfig::standard();
    SplitMix64 rng(2);
    State x;
    x.q = axis_angle({1, 1, 1}, 0.7);
    const int n = 100000;
    double sp = 0.0, sv = 0.0, sw = 0.0, sa = 0.0, max_norm_err = 0.0;
    for (int i = 0; i < n; ++i) {
        const State m = sense(x, sim, rng);
        sp += (m.p - x.p).squaredNorm();
        sv += (m.v - x.v).squaredNorm();
        sw += (m.w - x.w).squaredNorm();
        const Eigen::Quaterniond err = x.q.conjugate() * m.q;
        const double angle = 2.0 * std::atan2(err.vec().norm(), std::abs(err.w()));
        sa += angle * angle;
        max_norm_err = std::max(max_norm_err, std::abs(m.q.norm() - 1.0));
    }
    constexpr double deg = std::numbers::pi / 180.0;
    EXPECT_NEAR(std::sqrt(sp / (3.0 * n)), 0.007, 0.02 * 0.007);
    EXPECT_NEAR(std::sqrt(sv / (3.0 * n)), 0.007, 0.02 * 0.007);
    EXPECT_NEAR(std::sqrt(sw / (3.0 * n)), 0.4 * deg, 0.02 * 0.4 * deg);
    EXPECT_NEAR(std::sqrt(sa / n), 0.4 * deg, 0.02 * 0.4 * deg);
    EXPECT_LE(max_norm_err, 1e-12);
}

TEST(SimConfig, Validation) {
    SimConfig s;
    EXPECT_NO_THROW(s.validate());
    s.sensor_rate = 30.0;
    EXPECT_THROW(s.validate(), InvalidInput);
    s = {};
    s.sensor_rate = 75.0;
    EXPECT_THROW(s.validate(), InvalidInput);
    s = {};
    s.noise.velocity = -1.0;
    EXPECT_THROW(s.validate(), InvalidInput);
    s = {};
    s.rng = "mt19937";
    EXPECT_THROW(s.validate(), InvalidInput);
    EXPECT_EQ(SimConfig{}.plant_steps_per_control(), 20);
    EXPECT_EQ(SimConfig{}.plant_steps_per_sensor(), 10);
}

TEST(ComputeMetrics, PerfectTrackingIsZero) {
    const Metrics m = compute_metrics(constant_offset_log(Eigen::Vector3d::Zero()));
    EXPECT_EQ(m.rmse_pos_mm, 0.0);
    EXPECT_EQ(m.rmse_xy_mm, 0.0);
    EXPECT_EQ(m.steps, 51U);
}

TEST(ComputeMetrics, ThreeFourFiveOffset) {
    const Metrics m = compute_metrics(constant_offset_log({0.003, 0.004, 0.0}));
    EXPECT_NEAR(m.rmse_pos_mm, 5.0, 1e-9);
    EXPECT_NEAR(m.rmse_xy_mm, 5.0, 1e-9);
}

TEST(ComputeMetrics, VerticalOffsetOnlyAffectsFullRmse) {
    const Metrics m = compute_metrics(constant_offset_log({0.0, 0.0, 0.002}));
    EXPECT_NEAR(m.rmse_pos_mm, 2.0, 1e-9);
    EXPECT_EQ(m.rmse_xy_mm, 0.0);
}

TEST(ComputeMetrics, WindowAndSolveTimeStatistics) {
    FlightLog log = constant_offset_log({0.001, 0.0, 0.0});
    log.eval_start = 0.1;
    log.eval_end = 0.2;
    for (std::size_t k = 0; k < log.rows.size(); ++k) log.rows[k].solve_time_ms = static_cast<double>(k);
    log.rows[7].truth.p.x() += 10.0; // inside the window
    log.rows[20].truth.p.x() += 99.0; // outside
    log.rows[8].truth.v = {3.0, 4.0, 0.0};
    const Metrics m = compute_metrics(log);
    EXPECT_EQ(m.steps, 6U); // t = 0.10 .. 0.20
    EXPECT_NEAR(m.rmse_pos_mm, 1e3 * std::sqrt((5 * 1e-6 + 10.001 * 10.001) / 6.0), 1e-9);
    EXPECT_DOUBLE_EQ(m.mean_solve_ms, 7.5);
    EXPECT_DOUBLE_EQ(m.median_solve_ms, 7.5);
    EXPECT_DOUBLE_EQ(m.p95_solve_ms, 10.0);
    EXPECT_DOUBLE_EQ(m.max_speed, 5.0);
}

TEST(ComputeMetrics, RejectsEmptyLog) {
    EXPECT_THROW(compute_metrics(FlightLog{}), InvalidInput);
}

TEST(ClosedLoop, HoverRegulationIsExact) {
    ClosedLoopInputs in;
    in.sim.drag.setZero();
    in.sim.speed_scale = 0.0;
    in.sim.duration = 5.0;
    const FlightLog log = run_closed_loop(in);
    ASSERT_FALSE(log.aborted);
    const Metrics m = compute_metrics(log);
    EXPECT_LE(m.rmse_pos_mm, 1.0);
    EXPECT_LE(m.rmse_xy_mm, m.rmse_pos_mm);
}

TEST(ClosedLoop, SlowLemniscateWithConsistentPlant) {
    ClosedLoopInputs in;
    in.sim.drag.setZero();
    in.sim.speed_scale = 0.3;
    const FlightLog log = run_closed_loop(in);
    ASSERT_FALSE(log.aborted);
    const Metrics m = compute_metrics(log);
    EXPECT_LE(m.rmse_pos_mm, 20.0);
    EXPECT_LE(m.rmse_xy_mm, m.rmse_pos_mm);
}

TEST(ClosedLoop, ControlRateAndTimestamps) {
    ClosedLoopInputs in;
    in.sim.duration = 4.0;
    in.sim.speed_scale = 0.5;
    const FlightLog log = run_closed_loop(in);
    ASSERT_EQ(log.rows.size(), 201U);
    for (std::size_t k = 0; k < log.rows.size(); ++k) EXPECT_EQ(log.rows[k].t, 0.02 * static_cast<double>(k));
    EXPECT_EQ(log.control_dt, 0.02);
    EXPECT_EQ(log.eval_end, 4.0);
    EXPECT_EQ(log.mode, "nominal");
}

TEST(ClosedLoop, SameSeedIsBitIdentical) {
    ClosedLoopInputs in;
    in.sim.noise = NoiseConfig::standard();
    in.sim.seed = 7;
    in.sim.duration = 6.0;
    const FlightLog a = run_closed_loop(in), b = run_closed_loop(in);
    expect_same_log(a, b);
    in.sim.seed = 8;
    const FlightLog c = run_closed_loop(in);
    EXPECT_NE(a.rows[5].measured.p, c.rows[5].measured.p);
}

TEST(ClosedLoop, StepwiseEqualsRunToCompletion) {
    ClosedLoopInputs in;
    in.sim.noise = NoiseConfig::standard();
    in.sim.duration = 2.0;
    ClosedLoop loop(in);
    int steps = 0;
    while (!loop.done()) {
        loop.step();
        ++steps;
    }
    EXPECT_EQ(steps, 101);
    expect_same_log(loop.log(), run_closed_loop(in));
}

TEST(ClosedLoop, GpModesRequireTheirInputs) {
    ClosedLoopInputs in;
    in.mpc.mode = MpcMode::direct;
    EXPECT_THROW(run_closed_loop(in), InvalidInput);
    in.mpc.mode = MpcMode::precomputed;
    const ResidualModel m;
    in.model = &m;
    EXPECT_THROW(run_closed_loop(in), InvalidInput);
}

TEST(ClosedLoop, DivergedPlantAbortsWithPartialLog) {
    ClosedLoopInputs in;
    in.sim.duration = 2.0;
    in.params.u_max = 0.5; // cannot hold altitude; keeps flying but falls
    in.sim.drag = {1e308, 1e308, 1e308};
    const FlightLog log = run_closed_loop(in);
    EXPECT_TRUE(log.aborted);
    EXPECT_FALSE(log.error.empty());
    EXPECT_LT(log.rows.size(), 101U);
}
