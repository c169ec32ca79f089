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

#ifndef GPMPC_SIM_HPP
#define GPMPC_SIM_HPP

/**
 * @file
 * @brief Closed-loop bench: drag plant, noisy sensing, the control loop and
 * tracking metrics.
 *
 * Rates are nested: each control period spans plant_rate / control_rate
 * plant steps and a measurement is taken every plant_rate / sensor_rate
 * plant steps. The controller always uses the newest measurement.
 */

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gpmpc/errors.hpp"
#include "gpmpc/flight_log.hpp"
#include "gpmpc/gp.hpp"
#include "gpmpc/lemniscate.hpp"
#include "gpmpc/nmpc.hpp"
#include "gpmpc/quad_model.hpp"
#include "gpmpc/residual_pipeline.hpp"
#include "gpmpc/rng.hpp"

namespace gpmpc {

/// Zero-mean Gaussian measurement noise standard deviations.
struct NoiseConfig {
    double position = 0.0;      ///< m
    double attitude_deg = 0.0;  ///< rotation angle about a random axis
    double velocity = 0.0;      ///< m/s
    double body_rate_deg = 0.0; ///< deg/s

    bool any() const { return position > 0 || attitude_deg > 0 || velocity > 0 || body_rate_deg > 0; }

    /// 7 mm, 0.4 deg, 7 mm/s, 0.4 deg/s.
    static NoiseConfig standard() { return {0.007, 0.4, 0.007, 0.4}; }
};

struct SimConfig {
    Eigen::Vector3d drag{0.30, 0.30, 0.15}; ///< body-frame linear drag, 1/s
    NoiseConfig noise;
    double control_rate = 50.0;
    double sensor_rate = 100.0;
    double plant_rate = 1000.0;
    std::uint64_t seed = 0;
    double duration = 25.0;
    double ramp_fraction = 0.25;
    double speed_scale = 1.0;
    std::string rng = SplitMix64::kName;

    int plant_steps_per_control() const { return static_cast<int>(std::lround(plant_rate / control_rate)); }
    int plant_steps_per_sensor() const { return static_cast<int>(std::lround(plant_rate / sensor_rate)); }

    void validate() const {
        if (!(plant_rate >= sensor_rate && sensor_rate >= control_rate && control_rate > 0.0))
            throw InvalidInput("SimConfig: need plant_rate >= sensor_rate >= control_rate > 0");
        auto divides = [](double fast, double slow) {
            const double r = fast / slow;
            return std::abs(r - std::round(r)) < 1e-9;
        };
        if (!divides(plant_rate, sensor_rate) || !divides(sensor_rate, control_rate))
            throw InvalidInput("SimConfig: rates must be integer multiples of each other");
        if (noise.position < 0 || noise.attitude_deg < 0 || noise.velocity < 0 || noise.body_rate_deg < 0)
            throw InvalidInput("SimConfig: noise standard deviations must be non-negative");
        if ((drag.array() < 0.0).any()) throw InvalidInput("SimConfig: drag must be non-negative");
        if (!(duration > 0.0) || !(speed_scale >= 0.0))
            throw InvalidInput("SimConfig: duration must be positive, speed_scale non-negative");
        if (rng != SplitMix64::kName) throw InvalidInput("SimConfig: unsupported rng '" + rng + "'");
    }

    LemniscateConfig reference() const { return {duration, ramp_fraction, speed_scale, 5.0, 2.5}; }
};

/// Truth model: nominal dynamics plus body-frame drag −D v_B, integrated with RK4.
inline State plant_step(const State& x, const ControlInput& u, double dt, const SimConfig& sim,
                        const QuadParams& params) {
    if (!(dt >= 0.0)) throw InvalidInput("plant_step: dt must be non-negative");
    if ((sim.drag.array() == 0.0).all()) return rk4_step(x, u, dt, params);
    if (dt == 0.0) return x;

    auto f = [&](const StateVector& s) {
        const Eigen::Vector4d qv = s.segment<4>(idx::q) / s.segment<4>(idx::q).norm();
        const Eigen::Matrix3d R = sandwich_matrix(qv(0), qv(1), qv(2), qv(3));
        const Eigen::Vector3d drag = -R * sim.drag.cwiseProduct(R.transpose() * s.segment<3>(idx::v));
        return detail::dynamics(s, u.thrusts, params, drag);
    };
    const StateVector x0 = x.to_vector();
    const StateVector k1 = f(x0);
    const StateVector k2 = f(x0 + 0.5 * dt * k1);
    const StateVector k3 = f(x0 + 0.5 * dt * k2);
    const StateVector k4 = f(x0 + dt * k3);
    StateVector next = x0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    detail::normalize_quaternion(next);
    return State::from_vector(next);
}

/// Noisy measurement. Draw order: position, velocity, body rates, attitude
/// axis (three normals, normalized), attitude angle.
inline State sense(const State& truth, const SimConfig& sim, SplitMix64& rng) {
    const NoiseConfig& n = sim.noise;
    if (!n.any()) return truth;
    constexpr double deg = std::numbers::pi / 180.0;
    State m = truth;
    for (int i = 0; i < 3; ++i) m.p(i) += rng.normal(n.position);
    for (int i = 0; i < 3; ++i) m.v(i) += rng.normal(n.velocity);
    for (int i = 0; i < 3; ++i) m.w(i) += rng.normal(n.body_rate_deg * deg);
    Eigen::Vector3d axis;
    for (int i = 0; i < 3; ++i) axis(i) = rng.normal();
    const double angle = rng.normal(n.attitude_deg * deg);
    if (axis.norm() > 0.0 && angle != 0.0) m.q = axis_angle(axis, angle) * truth.q;
    m.q.normalize();
    return m;
}

struct ClosedLoopInputs {
    QuadParams params;
    MpcConfig mpc;
    SimConfig sim;
    double fallback_threshold = 0.5;
    const ResidualModel* model = nullptr;         ///< precomputed and direct modes
    const CorrectionSchedule* schedule = nullptr; ///< precomputed mode
};

/// Nominal one-step prediction over a control period with the plant's step size.
inline Eigen::Vector3d predict_next_velocity(const State& x, const ControlInput& u,
                                             const SimConfig& sim, const QuadParams& params) {
    const double h = 1.0 / sim.plant_rate;
    StateVector s = x.to_vector();
    s.segment<4>(idx::q).normalize();
    for (int i = 0; i < sim.plant_steps_per_control(); ++i)
        s = detail::rk4(s, u.thrusts, h, params, Eigen::Vector3d::Zero());
    return s.segment<3>(idx::v);
}

/**
 * One closed-loop flight of the lemniscate, advanced a control step at a
 * time. A solver hard error or a diverged plant stops the run with
 * `aborted` set in the log.
 */
class ClosedLoop {
public:
    explicit ClosedLoop(const ClosedLoopInputs& in)
        : in_(validated(in)),
          reference_(in_.sim.reference(), in_.params),
          control_dt_(1.0 / in_.sim.control_rate),
          steps_(std::lround(in_.sim.duration * in_.sim.control_rate)),
          controller_(in_.mpc, in_.params, control_dt_ / in_.mpc.node_dt()),
          ccfg_{in_.mpc.nodes, in_.mpc.node_dt(), control_dt_ / in_.mpc.node_dt(), in_.fallback_threshold},
          rng_(in_.sim.seed) {
        log_.mode = std::string(to_string(in_.mpc.mode));
        log_.control_dt = control_dt_;
        log_.eval_start = 0.0;
        log_.eval_end = in_.sim.duration;
        log_.rows.reserve(static_cast<std::size_t>(steps_) + 1);
        truth_ = reference_.at(0.0).state;
        measured_ = sense(truth_, in_.sim, rng_);
    }

    bool done() const { return done_; }

    /// Solve, log and (except after the last row) integrate one control period.
    void step() {
        if (done_) return;
        const double t = static_cast<double>(k_) * control_dt_;
        const ReferenceWindow window = reference_.window(t, in_.mpc.nodes, in_.mpc.node_dt());

        FlightLogRow row;
        row.t = t;
        row.reference = window.states.front();
        row.measured = measured_;
        row.truth = truth_;
        try {
            solve_into(row, t, window);
        } catch (const NumericalError& e) {
            return abort(e.what());
        }
        row.predicted_next_velocity = predict_next_velocity(measured_, row.input, in_.sim, in_.params);
        log_.rows.push_back(row);
        if (k_ == steps_) {
            done_ = true;
            return;
        }

        const double plant_dt = 1.0 / in_.sim.plant_rate;
        const int per_sensor = in_.sim.plant_steps_per_sensor();
        State latest = measured_;
        for (int j = 1; j <= in_.sim.plant_steps_per_control(); ++j) {
            truth_ = plant_step(truth_, row.input, plant_dt, in_.sim, in_.params);
            if (j % per_sensor == 0) latest = sense(truth_, in_.sim, rng_);
        }
        if (!truth_.to_vector().allFinite()) return abort("plant state diverged");
        measured_ = latest;
        ++k_;
    }

    const FlightLog& log() const { return log_; }
    FlightLog take_log() { return std::move(log_); }

private:
    static const ClosedLoopInputs& validated(const ClosedLoopInputs& in) {
        in.params.validate();
        in.mpc.validate();
        in.sim.validate();
        if (in.mpc.mode != MpcMode::nominal && !in.model)
            throw InvalidInput("run_closed_loop: GP modes need a residual model");
        if (in.mpc.mode == MpcMode::precomputed && !in.schedule)
            throw InvalidInput("run_closed_loop: precomputed mode needs a correction schedule");
        return in;
    }

    void abort(const std::string& why) {
        log_.aborted = true;
        log_.error = why;
        done_ = true;
    }

    void solve_into(FlightLogRow& row, double t, const ReferenceWindow& window) {
        SolveResult res;
        switch (in_.mpc.mode) {
        case MpcMode::precomputed: {
            // The online node-0 evaluation belongs to the method's per-step cost.
            const auto t0 = std::chrono::steady_clock::now();
            const SolveResult* prev = controller_.previous() ? &*controller_.previous() : nullptr;
            const CorrectionStep cs =
                corrections_for_step(t, measured_, row.reference.p, *in_.schedule, *in_.model, prev, ccfg_);
            const double corr_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            res = controller_.solve(measured_, window, &cs.set, nullptr);
            res.solve_time_ms += corr_ms;
            row.source = cs.source;
            break;
        }
        case MpcMode::direct:
            res = controller_.solve(measured_, window, nullptr, in_.model);
            row.source = CorrectionSource::online_model;
            break;
        case MpcMode::nominal:
            res = controller_.solve(measured_, window);
            break;
        }
        row.input = res.inputs.front();
        row.sqp_iterations = res.sqp_iterations;
        row.qp_iterations = res.qp_iterations;
        row.rollouts = res.rollouts;
        row.kkt_residual = res.kkt_residual;
        row.cost = res.cost;
        row.status = res.status;
        row.solve_time_ms = res.solve_time_ms;
    }

    ClosedLoopInputs in_;
    LemniscateReference reference_;
    double control_dt_;
    long steps_;
    MpcController controller_;
    CorrectionConfig ccfg_;
    SplitMix64 rng_;
    State truth_;
    State measured_;
    long k_ = 0;
    bool done_ = false;
    FlightLog log_;
};

/// Fly the lemniscate once in the configured mode; every control step t = 0 .. duration is logged.
inline FlightLog run_closed_loop(const ClosedLoopInputs& in) {
    ClosedLoop loop(in);
    while (!loop.done()) loop.step();
    return loop.take_log();
}

// ---------------------------------------------------------------------------
// Metrics

struct Metrics {
    std::string mode;
    double rmse_pos_mm = 0.0;
    double rmse_xy_mm = 0.0;
    double max_speed = 0.0; ///< achieved, m/s
    double mean_solve_ms = 0.0;
    double median_solve_ms = 0.0;
    double p95_solve_ms = 0.0;
    std::size_t steps = 0;
    bool aborted = false;
};

/// RMSE of true position against the reference over [eval_start, eval_end].
inline Metrics compute_metrics(const FlightLog& log) {
    if (log.rows.empty()) throw InvalidInput("compute_metrics: empty flight log");
    Metrics m;
    m.mode = log.mode;
    m.aborted = log.aborted;
    double se = 0.0, se_xy = 0.0;
    std::vector<double> times;
    for (const auto& r : log.rows) {
        if (r.t < log.eval_start - 1e-9 || r.t > log.eval_end + 1e-9) continue;
        const Eigen::Vector3d e = r.truth.p - r.reference.p;
        se += e.squaredNorm();
        se_xy += e.head<2>().squaredNorm();
        m.max_speed = std::max(m.max_speed, r.truth.v.norm());
        times.push_back(r.solve_time_ms);
        ++m.steps;
    }
    if (m.steps == 0) throw InvalidInput("compute_metrics: no rows in the evaluation window");
    const double n = static_cast<double>(m.steps);
    m.rmse_pos_mm = 1e3 * std::sqrt(se / n);
    m.rmse_xy_mm = 1e3 * std::sqrt(se_xy / n);
    double sum = 0.0;
    for (double t : times) sum += t;
    m.mean_solve_ms = sum / n;
    std::sort(times.begin(), times.end());
    const std::size_t mid = times.size() / 2;
    m.median_solve_ms = times.size() % 2 ? times[mid] : 0.5 * (times[mid - 1] + times[mid]);
    const auto p95 = static_cast<std::size_t>(std::ceil(0.95 * n)) - 1;
    m.p95_solve_ms = times[std::min(p95, times.size() - 1)];
    return m;
}

} // namespace gpmpc

#endif // GPMPC_SIM_HPP
