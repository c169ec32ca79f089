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

#ifndef GPMPC_EXPERIMENT_HPP
#define GPMPC_EXPERIMENT_HPP

/**
 * @file
 * @brief Collect / train / fly / compare / sweep, shared by the CLI and the
 * acceptance checks.
 */

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gpmpc/errors.hpp"
#include "gpmpc/flight_log.hpp"
#include "gpmpc/lemniscate.hpp"
#include "gpmpc/nmpc.hpp"
#include "gpmpc/quad_model.hpp"
#include "gpmpc/residual_pipeline.hpp"
#include "gpmpc/sim.hpp"

namespace gpmpc {

struct PipelineConfig {
    int n_runs = 3;                   ///< collection runs, seeds seed, seed+1, ...
    double collect_speed_scale = 0.8; ///< peak reference speed 8 m/s
    double fallback_threshold = 0.5;  ///< m
    ResidualTrainingConfig training;
    std::vector<double> sweep_scales{0.4, 0.6, 0.8, 1.0};
};

struct ExperimentConfig {
    QuadParams quad;
    MpcConfig mpc;
    SimConfig sim;
    PipelineConfig pipeline;

    void validate() const {
        quad.validate();
        mpc.validate();
        sim.validate();
        if (pipeline.n_runs < 1) throw InvalidInput("pipeline.n_runs must be at least 1");
        if (!(pipeline.collect_speed_scale >= 0.0))
            throw InvalidInput("pipeline.collect_speed_scale must be non-negative");
        if (!(pipeline.fallback_threshold > 0.0))
            throw InvalidInput("pipeline.fallback_threshold must be positive");
        if (pipeline.training.n_bins < 1 || pipeline.training.n_inducing < 1)
            throw InvalidInput("pipeline.training: n_bins and n_inducing must be at least 1");
        for (double s : pipeline.sweep_scales)
            if (!(s >= 0.0)) throw InvalidInput("pipeline.sweep_scales must be non-negative");
    }
};

inline constexpr std::array<MpcMode, 3> kAllModes{MpcMode::nominal, MpcMode::precomputed,
                                                  MpcMode::direct};

/// Nominal-MPC flights at the collection speed, concatenated into one dataset.
inline Dataset collect_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Dataset ds;
    ds.seed = seed;
    ds.noise_level = cfg.sim.noise.position;
    for (int i = 0; i < cfg.pipeline.n_runs; ++i) {
        ClosedLoopInputs in;
        in.params = cfg.quad;
        in.mpc = cfg.mpc;
        in.mpc.mode = MpcMode::nominal;
        in.sim = cfg.sim;
        in.sim.seed = seed + static_cast<std::uint64_t>(i);
        in.sim.speed_scale = cfg.pipeline.collect_speed_scale;
        const FlightLog log = run_closed_loop(in);
        if (log.aborted) throw NumericalError("collect: run " + std::to_string(i) + " aborted: " + log.error);
        ds.append_run(collect(log));
    }
    return ds;
}

inline ResidualTrainingResult train_model(const ExperimentConfig& cfg, const Dataset& ds,
                                          std::uint64_t seed) {
    ResidualTrainingConfig tcfg = cfg.pipeline.training;
    tcfg.gp.seed = seed;
    return train_residual_model_detailed(ds, tcfg);
}

/// Schedule on the control grid over the whole run.
inline CorrectionSchedule schedule_for(const ExperimentConfig& cfg, const ResidualModel& model) {
    const LemniscateReference reference(cfg.sim.reference(), cfg.quad);
    const double dt = 1.0 / cfg.sim.control_rate;
    return precompute_schedule(model, reference, 0.0, cfg.sim.duration + cfg.mpc.horizon, dt);
}

inline ClosedLoopInputs loop_inputs(const ExperimentConfig& cfg, MpcMode mode,
                                    const ResidualModel* model, const CorrectionSchedule* schedule,
                                    std::uint64_t seed) {
    cfg.validate();
    ClosedLoopInputs in;
    in.params = cfg.quad;
    in.mpc = cfg.mpc;
    in.mpc.mode = mode;
    in.sim = cfg.sim;
    in.sim.seed = seed;
    in.fallback_threshold = cfg.pipeline.fallback_threshold;
    if (mode != MpcMode::nominal) {
        if (!model) throw InvalidInput("fly: mode '" + std::string(to_string(mode)) + "' needs a model");
        in.model = model;
    }
    if (mode == MpcMode::precomputed) in.schedule = schedule;
    return in;
}

inline FlightLog fly(const ExperimentConfig& cfg, MpcMode mode, const ResidualModel* model,
                     std::uint64_t seed) {
    CorrectionSchedule schedule;
    if (mode == MpcMode::precomputed && model) schedule = schedule_for(cfg, *model);
    return run_closed_loop(loop_inputs(cfg, mode, model, &schedule, seed));
}

struct ComparisonRow {
    Metrics metrics;
    double pct_reduction = 0.0; ///< RMSE reduction relative to the nominal row, %
};

struct Comparison {
    double speed_scale = 1.0;
    std::vector<ComparisonRow> rows; ///< nominal, precomputed, direct

    const ComparisonRow& row(MpcMode m) const {
        for (const auto& r : rows)
            if (r.metrics.mode == to_string(m)) return r;
        throw InvalidInput("Comparison: no row for mode '" + std::string(to_string(m)) + "'");
    }
};

/**
 * All three modes on the same seed and configuration. The flights advance in
 * lockstep with a rotating order, so machine load during the run affects
 * each mode's solve times alike.
 */
inline Comparison compare(const ExperimentConfig& cfg, const ResidualModel& model, std::uint64_t seed) {
    const CorrectionSchedule schedule = schedule_for(cfg, model);
    std::vector<ClosedLoop> loops;
    loops.reserve(kAllModes.size());
    for (MpcMode m : kAllModes) loops.emplace_back(loop_inputs(cfg, m, &model, &schedule, seed));
    for (std::size_t k = 0;; ++k) {
        bool running = false;
        for (std::size_t j = 0; j < loops.size(); ++j) {
            ClosedLoop& loop = loops[(k + j) % loops.size()];
            if (!loop.done()) {
                loop.step();
                running = true;
            }
        }
        if (!running) break;
    }

    Comparison c;
    c.speed_scale = cfg.sim.speed_scale;
    for (auto& loop : loops) c.rows.push_back({compute_metrics(loop.log()), 0.0});
    const double base = c.rows.front().metrics.rmse_pos_mm;
    for (auto& r : c.rows)
        r.pct_reduction = base > 0.0 ? 100.0 * (base - r.metrics.rmse_pos_mm) / base : 0.0;
    return c;
}

inline std::vector<Comparison> sweep(const ExperimentConfig& cfg, const ResidualModel& model,
                                     std::uint64_t seed, const std::vector<double>& scales) {
    std::vector<Comparison> out;
    out.reserve(scales.size());
    for (double s : scales) {
        ExperimentConfig c = cfg;
        c.sim.speed_scale = s;
        out.push_back(compare(c, model, seed));
    }
    return out;
}

} // namespace gpmpc

#endif // GPMPC_EXPERIMENT_HPP
