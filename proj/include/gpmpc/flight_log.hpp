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

#ifndef GPMPC_FLIGHT_LOG_HPP
#define GPMPC_FLIGHT_LOG_HPP

#include <Eigen/Core>

#include <string>
#include <string_view>
#include <vector>

#include "gpmpc/nmpc.hpp"
#include "gpmpc/quad_model.hpp"

namespace gpmpc {

/// Where nodes 1..N-1 of a correction set came from.
enum class CorrectionSource { none, schedule, previous_solution, schedule_no_previous, online_model };

inline std::string_view to_string(CorrectionSource s) {
    switch (s) {
    case CorrectionSource::none: return "none";
    case CorrectionSource::schedule: return "schedule";
    case CorrectionSource::previous_solution: return "previous_solution";
    case CorrectionSource::schedule_no_previous: return "schedule_no_previous";
    case CorrectionSource::online_model: return "online_model";
    }
    return "unknown";
}

/// One control step of a closed-loop run.
struct FlightLogRow {
    double t = 0.0;
    State reference;
    State measured;
    State truth;
    ControlInput input;
    int sqp_iterations = 0;
    int qp_iterations = 0;
    int rollouts = 0;
    double kkt_residual = 0.0;
    double cost = 0.0;
    SolveStatus status = SolveStatus::ok;
    CorrectionSource source = CorrectionSource::none;
    /// Nominal-model velocity (world) one control period ahead of `measured`
    /// under `input`.
    Eigen::Vector3d predicted_next_velocity = Eigen::Vector3d::Zero();
    double solve_time_ms = 0.0;
};

struct FlightLog {
    std::string mode;
    double control_dt = 0.02;
    double eval_start = 0.0;
    double eval_end = 0.0;
    std::vector<FlightLogRow> rows;
    bool aborted = false;
    std::string error;
};

} // namespace gpmpc

#endif // GPMPC_FLIGHT_LOG_HPP
