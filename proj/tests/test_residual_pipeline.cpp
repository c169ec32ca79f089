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

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gpmpc/residual_pipeline.hpp"
#include "gpmpc/sim.hpp"

using namespace gpmpc;

namespace {

class WarningCapture {
public:
    WarningCapture() : previous_(set_warning_sink([this](const std::string& m) { messages.push_back(m); })) {}
    ~WarningCapture() { set_warning_sink(previous_); }
    WarningCapture(const WarningCapture&) = delete;
    WarningCapture& operator=(const WarningCapture&) = delete;

    std::vector<std::string> messages;

private:
    WarningSink previous_;
};

FlightLog noise_free_run(const Eigen::Vector3d& drag, double speed_scale) {
    ClosedLoopInputs in;
    in.sim.drag = drag;
    in.sim.speed_scale = speed_scale;
    return run_closed_loop(in);
}

const FlightLog& drag_log() {
    static const FlightLog log = noise_free_run({0.3, 0.3, 0.15}, 0.8);
    return log;
}

const FlightLog& consistent_log() {
    static const FlightLog log = noise_free_run(Eigen::Vector3d::Zero(), 0.8);
    return log;
}

TrainingSample sample(double v, double a) {
    TrainingSample s;
    s.v_body = Eigen::Vector3d::Constant(v);
    s.a_e = Eigen::Vector3d::Constant(a);
    return s;
}

Dataset uniform_dataset(double lo, double hi, int n) {
    Dataset ds;
    for (int i = 0; i < n; ++i) {
        TrainingSample s = sample(lo + (hi - lo) * (i + 0.5) / n, 0.0);
        s.t = 0.02 * i;
        s.dt = 0.02;
        ds.samples.push_back(s);
    }
    return ds;
}

} // namespace

TEST(ComputeAccelError, Examples) {
    const Eigen::Vector3d v(0.3, -1.0, 2.0);
    EXPECT_TRUE(compute_accel_error(v, v, 0.02).isZero(0.0));
    const Eigen::Vector3d a = compute_accel_error({1.0, 0, 0}, {1.1, 0, 0}, 0.02);
    EXPECT_NEAR(a.x(), -5.0, 1e-12);
    EXPECT_EQ(a.y(), 0.0);
    EXPECT_EQ(a.z(), 0.0);
}

TEST(ComputeAccelError, LinearInDifference) {
    const Eigen::Vector3d pred(0.25, 0.5, -0.75);
    const Eigen::Vector3d d(0.125, -0.0625, 0.5);
    EXPECT_EQ(compute_accel_error(pred + 2.0 * d, pred, 0.02), 2.0 * compute_accel_error(pred + d, pred, 0.02));
}

TEST(ComputeAccelError, RejectsNonPositiveStep) {
    EXPECT_THROW(compute_accel_error({}, {}, 0.0), InvalidInput);
    EXPECT_THROW(compute_accel_error({}, {}, -0.02), InvalidInput);
}

TEST(Collect, ModelConsistentPlantHasNoError) {
    const Dataset ds = collect(consistent_log());
    ASSERT_FALSE(ds.empty());
    double worst = 0.0;
    for (const auto& s : ds.samples) worst = std::max(worst, s.a_e.cwiseAbs().maxCoeff());
    EXPECT_LE(worst, 1e-8);
}

TEST(Collect, OneSamplePerControlStep) {
    const FlightLog& log = drag_log();
    ASSERT_FALSE(log.aborted) << log.error;
    const Dataset ds = collect(log);
    EXPECT_EQ(ds.size(), log.rows.size() - 1);
    EXPECT_EQ(ds.size(), 1250U);
    for (std::size_t i = 1; i < ds.size(); ++i) EXPECT_GT(ds.samples[i].t, ds.samples[i - 1].t);
}

TEST(Collect, DragPlantMatchesLinearDragPointwise) {
    const Eigen::Vector3d D(0.3, 0.3, 0.15);
    const Dataset ds = collect(drag_log());
    double worst = 0.0;
    std::size_t checked = 0;
    for (const auto& s : ds.samples) {
        if (s.v_body.cwiseAbs().maxCoeff() > 8.0) continue;
        worst = std::max(worst, (s.a_e + D.cwiseProduct(s.v_body)).cwiseAbs().maxCoeff());
        ++checked;
    }
    EXPECT_GT(checked, 1000U);
    EXPECT_LE(worst, 0.05);
}

TEST(Collect, ConstantBodyDisturbanceRoundTrip) {
    // Plant = nominal model + constant body-frame acceleration; inputs from
    // a hover-tracking MPC. The mean recovered error equals the disturbance.
    const QuadParams p;
    const SimConfig sim;
    const Eigen::Vector3d a_star(0.4, -0.3, 0.2);
    MpcConfig mc;
    MpcController ctrl(mc, p, 0.2);
    ReferenceWindow w;
    w.states.assign(11, State::hover_at({0, 0, 2}));
    w.inputs.assign(10, ControlInput::uniform(p.hover_thrust()));

    FlightLog log;
    State x = State::hover_at({0, 0, 2});
    for (int k = 0; k <= 500; ++k) {
        FlightLogRow row;
        row.t = 0.02 * k;
        row.measured = row.truth = x;
        row.input = ctrl.solve(x, w).inputs.front();
        row.predicted_next_velocity = predict_next_velocity(x, row.input, sim, p);
        log.rows.push_back(row);
        for (int j = 0; j < 20; ++j) x = rk4_step(x, row.input, 1e-3, p, Correction{a_star}, x.q);
    }
    const Dataset ds = collect(log);
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto& s : ds.samples) mean += s.a_e;
    mean /= static_cast<double>(ds.size());
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(mean(i), a_star(i), 0.02 * std::abs(a_star(i))) << "axis " << i;
}

TEST(Collect, MissingPredictionIsDataError) {
    FlightLog log = consistent_log();
    log.rows[3].predicted_next_velocity.x() = NAN;
    EXPECT_THROW(collect(log), DataError);
}

TEST(Dataset, AppendRunKeepsTimeIncreasing) {
    Dataset a = uniform_dataset(-1, 1, 10), b = uniform_dataset(-1, 1, 10);
    a.append_run(b);
    ASSERT_EQ(a.size(), 20U);
    for (std::size_t i = 1; i < a.size(); ++i) EXPECT_GT(a.samples[i].t, a.samples[i - 1].t);
}

TEST(BinMedianSubsample, HandBuiltMedians) {
    Dataset ds;
    // Range [0, 10], two bins split at 5.
    for (auto [v, a] : std::vector<std::pair<double, double>>{{0.0, 1.0}, {1.0, 5.0}, {4.0, 3.0},
                                                              {6.0, -2.0}, {9.0, -8.0}, {10.0, -4.0}})
        ds.samples.push_back(sample(v, a));
    const BinnedData b = bin_median_subsample(ds, 0, 2);
    ASSERT_EQ(b.inputs.size(), 2U);
    EXPECT_DOUBLE_EQ(b.inputs[0], 1.0);
    EXPECT_DOUBLE_EQ(b.targets[0], 3.0);
    EXPECT_DOUBLE_EQ(b.inputs[1], 9.0);
    EXPECT_DOUBLE_EQ(b.targets[1], -4.0);
}

TEST(BinMedianSubsample, EvenCountUsesMidpoint) {
    Dataset ds;
    for (auto [v, a] : std::vector<std::pair<double, double>>{{0.0, 1.0}, {1.0, 2.0}, {2.0, 4.0}, {3.0, 8.0}})
        ds.samples.push_back(sample(v, a));
    const BinnedData b = bin_median_subsample(ds, 1, 1);
    ASSERT_EQ(b.inputs.size(), 1U);
    EXPECT_DOUBLE_EQ(b.inputs[0], 1.5);
    EXPECT_DOUBLE_EQ(b.targets[0], 3.0);
}

TEST(BinMedianSubsample, IdenticalSamplesGiveOnePoint) {
    Dataset ds;
    for (int i = 0; i < 10; ++i) ds.samples.push_back(sample(2.0, -0.6));
    const BinnedData b = bin_median_subsample(ds, 2, 400);
    ASSERT_EQ(b.inputs.size(), 1U);
    EXPECT_EQ(b.inputs[0], 2.0);
    EXPECT_EQ(b.targets[0], -0.6);
}

TEST(BinMedianSubsample, SizeAndRangeBounds) {
    const Dataset ds = collect(drag_log());
    for (int axis = 0; axis < 3; ++axis) {
        const std::vector<double> v = ds.velocities(axis);
        const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
        for (int n : {1, 7, 50, 400, 5000}) {
            const BinnedData b = bin_median_subsample(ds, axis, n);
            EXPECT_LE(b.inputs.size(), static_cast<std::size_t>(n));
            for (double z : b.inputs) {
                EXPECT_GE(z, *lo);
                EXPECT_LE(z, *hi);
            }
        }
    }
}

TEST(BinMedianSubsample, RejectsBadArguments) {
    EXPECT_THROW(bin_median_subsample(Dataset{}, 0, 10), InvalidInput);
    EXPECT_THROW(bin_median_subsample(uniform_dataset(0, 1, 5), 0, 0), InvalidInput);
}

TEST(SelectInducing, UniformDataGivesEvenSpacing) {
    const Dataset ds = uniform_dataset(-8.0, 8.0, 1600);
    WarningCapture w;
    const std::vector<double> z = select_inducing(ds, 0, 20);
    ASSERT_EQ(z.size(), 20U);
    for (std::size_t i = 0; i < z.size(); ++i) {
        EXPECT_NEAR(z[i], -7.6 + 0.8 * static_cast<double>(i), 0.01);
        if (i > 0) {
            EXPECT_NEAR(z[i] - z[i - 1], 0.8, 0.01);
        }
    }
    EXPECT_TRUE(w.messages.empty());
}

TEST(SelectInducing, SinglePointIsGlobalMean) {
    const Dataset ds = collect(drag_log());
    WarningCapture w;
    const std::vector<double> z = select_inducing(ds, 1, 1);
    const std::vector<double> v = ds.velocities(1);
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    ASSERT_EQ(z.size(), 1U);
    EXPECT_NEAR(z[0], mean, 1e-12);
}

TEST(SelectInducing, WarnsOutsideRecommendedRange) {
    const Dataset ds = uniform_dataset(-8.0, 8.0, 400);
    for (int m : {15, 20, 25}) {
        WarningCapture w;
        select_inducing(ds, 0, m);
        EXPECT_TRUE(w.messages.empty()) << m;
    }
    for (int m : {5, 14, 26, 40}) {
        WarningCapture w;
        select_inducing(ds, 0, m);
        EXPECT_EQ(w.messages.size(), 1U) << m;
    }
}

TEST(TrainResidualModel, RecoversDragAtFiveMetresPerSecond) {
    const ResidualTrainingResult r = train_residual_model_detailed(collect(drag_log()));
    EXPECT_NEAR(r.model.axes[0].mean(5.0), -0.3 * 5.0, 0.15);
    EXPECT_NEAR(r.model.axes[1].mean(5.0), -0.3 * 5.0, 0.15);
    for (const auto& rep : r.report) {
        EXPECT_FALSE(rep.degenerate);
        EXPECT_LE(rep.dense_points, 400U);
        EXPECT_LE(rep.inducing_points, 20U);
    }
    EXPECT_EQ(r.model.axes[0].target_kind(), Targets::noise_free);
}

TEST(TrainResidualModel, ModelConsistentPlantLearnsNothing) {
    const Dataset ds = collect(consistent_log());
    WarningCapture w;
    const ResidualModel m = train_residual_model(ds);
    for (int axis = 0; axis < 3; ++axis) {
        const std::vector<double> v = ds.velocities(axis);
        const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
        for (int i = 0; i <= 50; ++i) {
            const double z = *lo + (*hi - *lo) * i / 50.0;
            EXPECT_LE(std::abs(m.axes[static_cast<std::size_t>(axis)].mean(z)), 1e-6) << "axis " << axis;
        }
    }
}

TEST(TrainResidualModel, DegenerateAxisFallsBackToZeroMean) {
    Dataset ds = uniform_dataset(-4.0, 4.0, 200);
    for (auto& s : ds.samples) {
        s.v_body.z() = 0.0;
        s.a_e = -0.3 * s.v_body;
    }
    WarningCapture w;
    const ResidualTrainingResult r = train_residual_model_detailed(ds);
    EXPECT_TRUE(r.report[2].degenerate);
    EXPECT_FALSE(r.report[0].degenerate);
    EXPECT_EQ(r.model.axes[2].mean(3.0), 0.0);
    ASSERT_FALSE(w.messages.empty());
    EXPECT_NE(w.messages.front().find("axis 2"), std::string::npos);
}

TEST(TrainResidualModel, RejectsTinyDatasets) {
    EXPECT_THROW(train_residual_model(uniform_dataset(0, 1, 49)), InvalidInput);
}

TEST(TrainResidualModel, SameDataAndSeedIsBitIdentical) {
    const Dataset ds = collect(drag_log());
    ResidualTrainingConfig cfg;
    cfg.gp.seed = 7;
    const ResidualModel a = train_residual_model(ds, cfg), b = train_residual_model(ds, cfg);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(a.axes[i].inputs(), b.axes[i].inputs());
        EXPECT_EQ(a.axes[i].targets(), b.axes[i].targets());
        EXPECT_EQ(a.axes[i].hyper().lengthscale, b.axes[i].hyper().lengthscale);
        EXPECT_EQ(a.axes[i].hyper().sigma_f2, b.axes[i].hyper().sigma_f2);
        EXPECT_EQ(a.axes[i].hyper().sigma_n2, b.axes[i].hyper().sigma_n2);
    }
}

namespace {

const ResidualModel& drag_model() {
    static const ResidualModel m = train_residual_model(collect(drag_log()));
    return m;
}

LemniscateReference reference(double speed_scale) {
    LemniscateConfig c;
    c.speed_scale = speed_scale;
    return LemniscateReference(c, QuadParams{});
}

} // namespace

TEST(PrecomputeSchedule, MatchesDirectReevaluation) {
    const LemniscateReference ref = reference(0.8);
    const CorrectionSchedule s = precompute_schedule(drag_model(), ref, 0.0, 26.0, 0.02);
    EXPECT_EQ(s.size(), 1301U);
    for (std::size_t i = 0; i < s.size(); i += 37) {
        const ReferencePoint r = ref.at(s.time(i));
        const Eigen::Vector3d want = residual_predict(drag_model(), quat_rotate(r.state.q.conjugate(), r.state.v)).mean;
        EXPECT_LE((s.a_body[i] - want).norm(), 1e-9) << i;
        EXPECT_TRUE(s.attitude[i].coeffs().isApprox(r.state.q.coeffs(), 1e-15));
    }
}

TEST(PrecomputeSchedule, HoverSegmentIsModelAtZeroVelocity) {
    const LemniscateReference ref = reference(0.8);
    const CorrectionSchedule s = precompute_schedule(drag_model(), ref, 25.0, 26.0, 0.1);
    const Eigen::Vector3d at_rest = drag_model().mean(Eigen::Vector3d::Zero());
    for (const auto& a : s.a_body) EXPECT_LE((a - at_rest).norm(), 1e-12);
}

TEST(PrecomputeSchedule, ConstantVelocityGivesConstantCorrections) {
    // Speed scale 0 freezes the reference; then every sample is the same state.
    const LemniscateReference ref = reference(0.0);
    const CorrectionSchedule s = precompute_schedule(drag_model(), ref, 0.0, 5.0, 0.1);
    for (const auto& a : s.a_body) EXPECT_EQ(a, s.a_body.front());
}

TEST(PrecomputeSchedule, IsPure) {
    const LemniscateReference ref = reference(1.0);
    const CorrectionSchedule a = precompute_schedule(drag_model(), ref, 0.0, 10.0, 0.02);
    const CorrectionSchedule b = precompute_schedule(drag_model(), ref, 0.0, 10.0, 0.02);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a.a_body[i], b.a_body[i]);
        EXPECT_EQ(a.attitude[i].coeffs(), b.attitude[i].coeffs());
    }
}

TEST(PrecomputeSchedule, InterpolatesBetweenGridPointsAndRejectsGaps) {
    const LemniscateReference ref = reference(1.0);
    const CorrectionSchedule s = precompute_schedule(drag_model(), ref, 0.0, 2.0, 0.1);
    const auto [mid, q] = s.at(0.55);
    EXPECT_LE((mid.a_body - 0.5 * (s.a_body[5] + s.a_body[6])).norm(), 1e-12);
    EXPECT_NEAR(q.norm(), 1.0, 1e-12);
    EXPECT_EQ(s.at(0.3).first.a_body, s.a_body[3]);
    EXPECT_THROW(s.at(2.5), DataError);
    EXPECT_THROW(s.at(-0.1), DataError);
}

TEST(CorrectionsForStep, OnReferenceNodeZeroMatchesSchedule) {
    const LemniscateReference ref = reference(1.0);
    const CorrectionSchedule s = precompute_schedule(drag_model(), ref, 0.0, 26.0, 0.02);
    const CorrectionConfig cfg;
    for (double t : {1.0, 5.0, 8.0, 12.34, 20.0}) {
        const State x = ref.at(t).state;
        const CorrectionStep c = corrections_for_step(t, x, x.p, s, drag_model(), nullptr, cfg);
        EXPECT_EQ(c.source, CorrectionSource::schedule);
        ASSERT_EQ(c.set.size(), 10U);
        EXPECT_LE((c.set.corrections[0].a_body - s.at(t).first.a_body).norm(), 0.05) << t;
        for (int k = 1; k < 10; ++k) {
            const auto [want, q] = s.at(t + 0.1 * k);
            EXPECT_EQ(c.set.corrections[static_cast<std::size_t>(k)].a_body, want.a_body);
            EXPECT_EQ(c.set.attitudes[static_cast<std::size_t>(k)].coeffs(), q.coeffs());
        }
    }
}

TEST(CorrectionsForStep, NodeZeroUsesMeasuredBodyVelocity) {
    const LemniscateReference ref = reference(1.0);
    const CorrectionSchedule s = precompute_schedule(drag_model(), ref, 0.0, 26.0, 0.02);
    State x = ref.at(10.0).state;
    x.v += Eigen::Vector3d(0.7, -0.4, 0.2);
    const CorrectionStep c = corrections_for_step(10.0, x, x.p, s, drag_model(), nullptr, CorrectionConfig{});
    EXPECT_LE((c.set.corrections[0].a_body - drag_model().mean(quat_rotate(x.q.conjugate(), x.v))).norm(), 1e-9);
    EXPECT_EQ(c.set.attitudes[0].coeffs(), x.q.coeffs());
}

TEST(CorrectionsForStep, FarFromReferenceUsesPreviousSolution) {
    const QuadParams p;
    const LemniscateReference ref = reference(1.0);
    const CorrectionSchedule s = precompute_schedule(drag_model(), ref, 0.0, 26.0, 0.02);
    const MpcConfig mc;
    const State on = ref.at(10.0).state;
    const SolveResult prev = solve(on, ref.window(10.0, mc.nodes, mc.node_dt()), nullptr, nullptr, nullptr, mc, p);
    State off = on;
    off.p.x() += 1.0;
    WarningCapture w;
    const CorrectionStep c = corrections_for_step(10.02, off, on.p, s, drag_model(), &prev, CorrectionConfig{});
    EXPECT_EQ(c.source, CorrectionSource::previous_solution);
    EXPECT_TRUE(w.messages.empty());
    const State x1 = prev.states[1];
    const State x2 = prev.states[2];
    const Eigen::Vector3d v12 = 0.8 * x1.v + 0.2 * x2.v;
    Eigen::Quaterniond q12(0.8 * x1.q.coeffs() + 0.2 * align_hemisphere(x2.q, x1.q).coeffs());
    q12.normalize();
    EXPECT_LE((c.set.corrections[1].a_body - drag_model().mean(quat_rotate(q12.conjugate(), v12))).norm(), 1e-9);
}

TEST(CorrectionsForStep, FarFromReferenceWithoutPreviousWarnsAndUsesSchedule) {
    const LemniscateReference ref = reference(1.0);
    const CorrectionSchedule s = precompute_schedule(drag_model(), ref, 0.0, 26.0, 0.02);
    const State on = ref.at(10.0).state;
    State off = on;
    off.p.y() -= 1.0;
    WarningCapture w;
    const CorrectionStep c = corrections_for_step(10.0, off, on.p, s, drag_model(), nullptr, CorrectionConfig{});
    EXPECT_EQ(c.source, CorrectionSource::schedule_no_previous);
    EXPECT_EQ(w.messages.size(), 1U);
    EXPECT_EQ(c.set.corrections[3].a_body, s.at(10.3).first.a_body);
}

TEST(CorrectionsForStep, WithinThresholdKeepsSchedule) {
    const QuadParams p;
    const LemniscateReference ref = reference(1.0);
    const CorrectionSchedule s = precompute_schedule(drag_model(), ref, 0.0, 26.0, 0.02);
    const MpcConfig mc;
    const State on = ref.at(10.0).state;
    const SolveResult prev = solve(on, ref.window(10.0, mc.nodes, mc.node_dt()), nullptr, nullptr, nullptr, mc, p);
    State near = on;
    near.p.z() += 0.4;
    const CorrectionStep c = corrections_for_step(10.0, near, on.p, s, drag_model(), &prev, CorrectionConfig{});
    EXPECT_EQ(c.source, CorrectionSource::schedule);
}

TEST(CorrectionsForStep, ScheduleGapIsDataError) {
    const LemniscateReference ref = reference(1.0);
    const CorrectionSchedule s = precompute_schedule(drag_model(), ref, 0.0, 5.0, 0.02);
    const State x = ref.at(4.5).state;
    EXPECT_THROW(corrections_for_step(4.5, x, x.p, s, drag_model(), nullptr, CorrectionConfig{}), DataError);
}
