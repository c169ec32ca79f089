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

#ifndef GPMPC_RESIDUAL_PIPELINE_HPP
#define GPMPC_RESIDUAL_PIPELINE_HPP

/**
 * @file
 * @brief From closed-loop logs to per-axis residual models and MPC corrections.
 *
 * collect() turns a flight log into acceleration-error samples, the training
 * stage bins them (medians for the dense GP, bin means for the inducing
 * inputs) and distills each axis into a small model. Corrections are then
 * either precomputed along the reference or evaluated online.
 */

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gpmpc/errors.hpp"
#include "gpmpc/flight_log.hpp"
#include "gpmpc/gp.hpp"
#include "gpmpc/lemniscate.hpp"
#include "gpmpc/log.hpp"
#include "gpmpc/nmpc.hpp"
#include "gpmpc/quad_model.hpp"

namespace gpmpc {

struct TrainingSample {
    double t = 0.0;
    double dt = 0.0;
    Eigen::Vector3d v_body = Eigen::Vector3d::Zero();
    Eigen::Vector3d v_body_next_meas = Eigen::Vector3d::Zero();
    Eigen::Vector3d v_body_next_pred = Eigen::Vector3d::Zero();
    Eigen::Vector3d a_e = Eigen::Vector3d::Zero();
};

struct Dataset {
    std::vector<TrainingSample> samples;
    std::string trajectory_id = "lemniscate";
    double noise_level = 0.0;
    std::uint64_t seed = 0;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }

    std::vector<double> velocities(int axis) const {
        std::vector<double> out;
        out.reserve(samples.size());
        for (const auto& s : samples) out.push_back(s.v_body(axis));
        return out;
    }
    std::vector<double> errors(int axis) const {
        std::vector<double> out;
        out.reserve(samples.size());
        for (const auto& s : samples) out.push_back(s.a_e(axis));
        return out;
    }

    /// Append another run, shifting its clock so t stays strictly increasing.
    void append_run(const Dataset& other) {
        if (other.empty()) return;
        const double offset =
            samples.empty() ? 0.0
                            : samples.back().t + samples.back().dt - other.samples.front().t;
        for (auto s : other.samples) {
            s.t += offset;
            samples.push_back(s);
        }
    }
};

/// (v_next_meas − v_next_pred) / dt.
inline Eigen::Vector3d compute_accel_error(const Eigen::Vector3d& v_next_meas,
                                           const Eigen::Vector3d& v_next_pred, double dt) {
    if (!(dt > 0.0)) throw InvalidInput("compute_accel_error: dt must be positive");
    return (v_next_meas - v_next_pred) / dt;
}

/**
 * One sample per consecutive pair of control steps. Both velocities at k+1
 * and the input velocity are expressed in the body frame of the measured
 * attitude at k.
 */
inline Dataset collect(const FlightLog& log) {
    Dataset ds;
    if (log.rows.size() < 2) return ds;
    for (std::size_t k = 0; k + 1 < log.rows.size(); ++k) {
        const FlightLogRow& row = log.rows[k];
        const FlightLogRow& next = log.rows[k + 1];
        if (!row.predicted_next_velocity.allFinite())
            throw DataError("collect: missing one-step prediction at t=" + std::to_string(row.t));
        const double dt = next.t - row.t;
        const Eigen::Matrix3d Rt = rotation_matrix(row.measured.q.normalized()).transpose();
        TrainingSample s;
        s.t = row.t;
        s.dt = dt;
        s.v_body = Rt * row.measured.v;
        s.v_body_next_meas = Rt * next.measured.v;
        s.v_body_next_pred = Rt * row.predicted_next_velocity;
        s.a_e = compute_accel_error(s.v_body_next_meas, s.v_body_next_pred, dt);
        ds.samples.push_back(s);
    }
    return ds;
}

namespace detail {

inline double median_of(std::vector<double>& v) {
    const std::size_t n = v.size();
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (n % 2 == 1) return *mid;
    const double upper = *mid;
    const double lower = *std::max_element(v.begin(), mid);
    return 0.5 * (lower + upper);
}

/// Equal-width bin index of each value over [min, max]; one bin if the range is empty.
inline std::vector<std::size_t> bin_indices(const std::vector<double>& values, int n_bins) {
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *lo_it, hi = *hi_it;
    const double width = (hi - lo) / n_bins;
    std::vector<std::size_t> idx(values.size(), 0);
    if (!(width > 0.0)) return idx;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto b = static_cast<long>(std::floor((values[i] - lo) / width));
        idx[i] = static_cast<std::size_t>(std::clamp(b, 0L, static_cast<long>(n_bins) - 1));
    }
    return idx;
}

} // namespace detail

struct BinnedData {
    std::vector<double> inputs;
    std::vector<double> targets;
};

/// Per non-empty equal-width bin: (median velocity, median error) on `axis`.
inline BinnedData bin_median_subsample(const Dataset& ds, int axis, int n_bins) {
    if (n_bins < 1) throw InvalidInput("bin_median_subsample: n_bins must be >= 1");
    if (ds.empty()) throw InvalidInput("bin_median_subsample: empty dataset");
    const std::vector<double> v = ds.velocities(axis);
    const std::vector<double> a = ds.errors(axis);
    const std::vector<std::size_t> idx = detail::bin_indices(v, n_bins);

    std::vector<std::vector<double>> bv(static_cast<std::size_t>(n_bins)), ba(static_cast<std::size_t>(n_bins));
    for (std::size_t i = 0; i < v.size(); ++i) {
        bv[idx[i]].push_back(v[i]);
        ba[idx[i]].push_back(a[i]);
    }
    BinnedData out;
    for (std::size_t b = 0; b < bv.size(); ++b) {
        if (bv[b].empty()) continue;
        out.inputs.push_back(detail::median_of(bv[b]));
        out.targets.push_back(detail::median_of(ba[b]));
    }
    return out;
}

/// Mean velocity of each non-empty bin among m equal-width bins on `axis`.
inline std::vector<double> select_inducing(const Dataset& ds, int axis, int m) {
    if (m < 1) throw InvalidInput("select_inducing: m must be >= 1");
    if (ds.empty()) throw InvalidInput("select_inducing: empty dataset");
    if (m < 15 || m > 25)
        warn("select_inducing: " + std::to_string(m) + " inducing points is outside [15, 25]");
    const std::vector<double> v = ds.velocities(axis);
    const std::vector<std::size_t> idx = detail::bin_indices(v, m);
    std::vector<double> sum(static_cast<std::size_t>(m), 0.0);
    std::vector<std::size_t> count(static_cast<std::size_t>(m), 0);
    for (std::size_t i = 0; i < v.size(); ++i) {
        sum[idx[i]] += v[i];
        ++count[idx[i]];
    }
    std::vector<double> out;
    for (std::size_t b = 0; b < sum.size(); ++b)
        if (count[b] > 0) out.push_back(sum[b] / static_cast<double>(count[b]));
    return out;
}

struct ResidualTrainingConfig {
    int n_bins = 400;
    int n_inducing = 20;
    GpTrainingConfig gp;
};

struct AxisTrainingReport {
    bool degenerate = false;
    std::size_t dense_points = 0;
    std::size_t inducing_points = 0;
    GpHyperparams hyper;
    double log_likelihood = 0.0;
};

struct ResidualTrainingResult {
    ResidualModel model;
    std::array<GpModel, 3> dense;
    std::array<AxisTrainingReport, 3> report;
};

namespace detail {

inline GpModel zero_mean_model() {
    return GpModel::fit(std::vector<double>{0.0}, std::vector<double>{0.0}, {1.0, 1e-6, 1e-6});
}

inline bool has_spread(const std::vector<double>& v) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    return *hi - *lo > 1e-9 * std::max(1.0, std::abs(*hi));
}

} // namespace detail

/**
 * Per axis: 400-bin medians -> dense GP with trained hyperparameters ->
 * 20 bin-mean inducing inputs -> effective-prior sparse model. An axis whose
 * velocities or errors are constant falls back to a zero-mean model.
 */
inline ResidualTrainingResult train_residual_model_detailed(const Dataset& ds,
                                                            const ResidualTrainingConfig& cfg = {}) {
    if (ds.size() < 50) throw InvalidInput("train_residual_model: need at least 50 samples");
    ResidualTrainingResult out;
    for (int axis = 0; axis < 3; ++axis) {
        const auto a = static_cast<std::size_t>(axis);
        AxisTrainingReport& rep = out.report[a];
        const BinnedData dense_data = bin_median_subsample(ds, axis, cfg.n_bins);
        rep.dense_points = dense_data.inputs.size();
        if (dense_data.inputs.size() < 2 || !detail::has_spread(dense_data.inputs) ||
            !detail::has_spread(ds.errors(axis))) {
            warn("train_residual_model: axis " + std::to_string(axis) +
                 " has degenerate data; using a zero-mean model");
            rep.degenerate = true;
            out.model.axes[a] = detail::zero_mean_model();
            out.dense[a] = out.model.axes[a];
            rep.hyper = out.model.axes[a].hyper();
            continue;
        }
        GpTrainingConfig gcfg = cfg.gp;
        gcfg.seed = cfg.gp.seed + static_cast<std::uint64_t>(axis);
        const GpHyperparams init = default_initial_hyperparams(dense_data.inputs, dense_data.targets);
        const GpTrainingResult tr =
            train_hyperparams_detailed(dense_data.inputs, dense_data.targets, init, gcfg);
        rep.hyper = tr.hyper;
        rep.log_likelihood = tr.log_likelihood;
        out.dense[a] = GpModel::fit(dense_data.inputs, dense_data.targets, tr.hyper);
        const std::vector<double> inducing = select_inducing(ds, axis, cfg.n_inducing);
        rep.inducing_points = inducing.size();
        out.model.axes[a] = sparsify(out.dense[a], inducing);
    }
    return out;
}

inline ResidualModel train_residual_model(const Dataset& ds, const ResidualTrainingConfig& cfg = {}) {
    return train_residual_model_detailed(ds, cfg).model;
}

// ---------------------------------------------------------------------------
// Corrections

/// Body-frame corrections and reference attitudes on a uniform time grid.
struct CorrectionSchedule {
    double t0 = 0.0;
    double dt = 0.02;
    std::vector<Eigen::Vector3d> a_body;
    std::vector<Eigen::Quaterniond> attitude;

    std::size_t size() const { return a_body.size(); }
    double time(std::size_t i) const { return t0 + static_cast<double>(i) * dt; }
    double t_end() const { return size() ? time(size() - 1) : t0; }

    /// Sample at time t; grid points are returned exactly, in-between values
    /// are interpolated (linear for a, normalized-linear for the attitude).
    std::pair<Correction, Eigen::Quaterniond> at(double t) const {
        if (size() == 0) throw DataError("CorrectionSchedule: empty schedule");
        const double pos = (t - t0) / dt;
        const double last = static_cast<double>(size() - 1);
        if (pos < -1e-6 || pos > last + 1e-6)
            throw DataError("CorrectionSchedule: no coverage at t=" + std::to_string(t));
        const double nearest = std::round(pos);
        if (std::abs(pos - nearest) <= 1e-6) {
            const auto i = static_cast<std::size_t>(std::clamp(nearest, 0.0, last));
            return {Correction{a_body[i]}, attitude[i]};
        }
        const auto i = static_cast<std::size_t>(std::floor(pos));
        const double f = pos - static_cast<double>(i);
        const Eigen::Quaterniond qb = align_hemisphere(attitude[i + 1], attitude[i]);
        Eigen::Quaterniond q(attitude[i].coeffs() * (1.0 - f) + qb.coeffs() * f);
        q.normalize();
        return {Correction{(1.0 - f) * a_body[i] + f * a_body[i + 1]}, q};
    }
};

/// Residual mean at the reference body velocity of every grid sample in [t0, t_end].
inline CorrectionSchedule precompute_schedule(const ResidualModel& model,
                                              const LemniscateReference& reference, double t0,
                                              double t_end, double dt) {
    if (!(dt > 0.0) || t_end < t0) throw InvalidInput("precompute_schedule: invalid time grid");
    CorrectionSchedule s;
    s.t0 = t0;
    s.dt = dt;
    const auto n = static_cast<std::size_t>(std::ceil((t_end - t0) / dt - 1e-9)) + 1;
    s.a_body.reserve(n);
    s.attitude.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const ReferencePoint r = reference.at(s.time(i));
        const Eigen::Vector3d vb = rotation_matrix(r.state.q).transpose() * r.state.v;
        s.a_body.push_back(model.mean(vb));
        s.attitude.push_back(r.state.q);
    }
    return s;
}

struct CorrectionConfig {
    int nodes = 10;
    double node_dt = 0.1;
    double shift_nodes = 0.2;          ///< control period / node spacing
    double fallback_threshold = 0.5;   ///< m
};

struct CorrectionStep {
    CorrectionSet set;
    CorrectionSource source = CorrectionSource::schedule;
};

namespace detail {

/// Previous-solution state at fractional node `pos` (clamped to the horizon).
inline State interpolate_state(const std::vector<State>& xs, double pos) {
    const double last = static_cast<double>(xs.size() - 1);
    pos = std::clamp(pos, 0.0, last);
    const auto i = static_cast<std::size_t>(std::floor(pos));
    const double f = pos - static_cast<double>(i);
    if (f == 0.0 || i + 1 >= xs.size()) return xs[std::min(i, xs.size() - 1)];
    const State& a = xs[i];
    const State& b = xs[i + 1];
    State s;
    s.p = (1.0 - f) * a.p + f * b.p;
    s.v = (1.0 - f) * a.v + f * b.v;
    s.w = (1.0 - f) * a.w + f * b.w;
    const Eigen::Quaterniond qb = align_hemisphere(b.q, a.q);
    s.q = Eigen::Quaterniond(a.q.coeffs() * (1.0 - f) + qb.coeffs() * f);
    s.q.normalize();
    return s;
}

inline Correction online_correction(const ResidualModel& model, const State& x) {
    return {model.mean(rotation_matrix(x.q).transpose() * x.v)};
}

} // namespace detail

/**
 * Node 0 is corrected online at the measured body velocity. Nodes 1..N-1
 * come from the schedule at t + k dt, unless the vehicle is farther than
 * the fallback threshold from the reference and a previous solution exists;
 * then they are evaluated on that solution, advanced by one control period.
 */
inline CorrectionStep corrections_for_step(double t, const State& x_meas,
                                           const Eigen::Vector3d& reference_position,
                                           const CorrectionSchedule& schedule,
                                           const ResidualModel& model, const SolveResult* prev,
                                           const CorrectionConfig& cfg) {
    const auto N = static_cast<std::size_t>(cfg.nodes);
    CorrectionStep out;
    out.set.corrections.resize(N);
    out.set.attitudes.resize(N);
    out.set.corrections[0] = detail::online_correction(model, x_meas);
    out.set.attitudes[0] = x_meas.q;

    const bool off_track = (x_meas.p - reference_position).norm() > cfg.fallback_threshold;
    if (off_track && prev && prev->states.size() >= 2) {
        out.source = CorrectionSource::previous_solution;
        for (std::size_t k = 1; k < N; ++k) {
            const State xs = detail::interpolate_state(prev->states, static_cast<double>(k) + cfg.shift_nodes);
            out.set.corrections[k] = detail::online_correction(model, xs);
            out.set.attitudes[k] = xs.q;
        }
        return out;
    }
    if (off_track) {
        warn("corrections_for_step: off reference at t=" + std::to_string(t) +
             " but no previous solution; using the schedule");
        out.source = CorrectionSource::schedule_no_previous;
    }
    for (std::size_t k = 1; k < N; ++k) {
        auto [c, q] = schedule.at(t + static_cast<double>(k) * cfg.node_dt);
        out.set.corrections[k] = c;
        out.set.attitudes[k] = q;
    }
    return out;
}

} // namespace gpmpc

#endif // GPMPC_RESIDUAL_PIPELINE_HPP
