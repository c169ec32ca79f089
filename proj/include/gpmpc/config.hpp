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

#ifndef GPMPC_CONFIG_HPP
#define GPMPC_CONFIG_HPP

/**
 * @file
 * @brief JSON form of ExperimentConfig.
 *
 * Four sections: quad_params, mpc, sim, pipeline. Every key is optional and
 * falls back to the built-in default; unknown keys are rejected so typos do
 * not silently pass. Gravity is written as the world-z component (negative).
 */

#include <Eigen/Core>

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include "gpmpc/errors.hpp"
#include "gpmpc/experiment.hpp"
#include "json.hpp"

namespace gpmpc {

using Json = nlohmann::json;

namespace detail {

template <int N>
Json vector_json(const Eigen::Matrix<double, N, 1>& v) {
    Json a = Json::array();
    for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

template <int N>
void read_vector(const Json& j, const char* key, Eigen::Matrix<double, N, 1>& out) {
    if (!j.contains(key)) return;
    const Json& a = j.at(key);
    if (!a.is_array() || a.size() != static_cast<std::size_t>(N))
        throw InvalidInput(std::string("config: '") + key + "' must be an array of " + std::to_string(N) +
                           " numbers");
    for (int i = 0; i < N; ++i) out(i) = a.at(static_cast<std::size_t>(i)).get<double>();
}

template <typename T>
void read(const Json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

inline void check_keys(const Json& j, const char* section, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw InvalidInput(std::string("config: '") + section + "' must be an object");
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw InvalidInput(std::string("config: unknown key '") + key + "' in '" + section + "'");
    }
}

} // namespace detail

inline Json to_json(const ExperimentConfig& c) {
    Json quad = {{"mass", c.quad.mass},
                 {"inertia_diag", detail::vector_json(c.quad.inertia_diag)},
                 {"d_x", c.quad.d_x},
                 {"d_y", c.quad.d_y},
                 {"c_tau", c.quad.c_tau},
                 {"gravity", -c.quad.gravity},
                 {"u_min", c.quad.u_min},
                 {"u_max", c.quad.u_max}};
    Json mpc = {{"horizon", c.mpc.horizon},
                {"nodes", c.mpc.nodes},
                {"q_weights", detail::vector_json(c.mpc.q_weights)},
                {"q_terminal", detail::vector_json(c.mpc.q_terminal)},
                {"r_weights", detail::vector_json(c.mpc.r_weights)},
                {"mode", std::string(to_string(c.mpc.mode))},
                {"sqp_iters", c.mpc.sqp_iters},
                {"qp_kkt_tol", c.mpc.qp_kkt_tol},
                {"qp_max_iters", c.mpc.qp_max_iters},
                {"rk4_substeps", c.mpc.rk4_substeps}};
    Json noise = {{"position", c.sim.noise.position},
                  {"attitude_deg", c.sim.noise.attitude_deg},
                  {"velocity", c.sim.noise.velocity},
                  {"body_rate_deg", c.sim.noise.body_rate_deg}};
    Json sim = {{"drag", detail::vector_json(c.sim.drag)},
                {"noise", noise},
                {"control_rate", c.sim.control_rate},
                {"sensor_rate", c.sim.sensor_rate},
                {"plant_rate", c.sim.plant_rate},
                {"seed", c.sim.seed},
                {"duration", c.sim.duration},
                {"ramp_fraction", c.sim.ramp_fraction},
                {"speed_scale", c.sim.speed_scale},
                {"rng", c.sim.rng}};
    const GpTrainingConfig& g = c.pipeline.training.gp;
    Json gp = {{"restarts", g.restarts},
               {"max_iters", g.max_iters},
               {"grad_tol", g.grad_tol},
               {"restart_spread", g.restart_spread},
               {"log_bound", g.log_bound}};
    Json pipeline = {{"n_runs", c.pipeline.n_runs},
                     {"collect_speed_scale", c.pipeline.collect_speed_scale},
                     {"fallback_threshold", c.pipeline.fallback_threshold},
                     {"n_bins", c.pipeline.training.n_bins},
                     {"n_inducing", c.pipeline.training.n_inducing},
                     {"gp", gp},
                     {"sweep_scales", c.pipeline.sweep_scales}};
    return {{"quad_params", quad}, {"mpc", mpc}, {"sim", sim}, {"pipeline", pipeline}};
}

/// Overlay `j` on the defaults and validate the result.
inline ExperimentConfig config_from_json(const Json& j) {
    using detail::check_keys;
    using detail::read;
    using detail::read_vector;
    ExperimentConfig c;
    try {
        check_keys(j, "config", {"quad_params", "mpc", "sim", "pipeline"});
        if (j.contains("quad_params")) {
            const Json& q = j.at("quad_params");
            check_keys(q, "quad_params", {"mass", "inertia_diag", "d_x", "d_y", "c_tau", "gravity", "u_min", "u_max"});
            read(q, "mass", c.quad.mass);
            read_vector(q, "inertia_diag", c.quad.inertia_diag);
            read(q, "d_x", c.quad.d_x);
            read(q, "d_y", c.quad.d_y);
            read(q, "c_tau", c.quad.c_tau);
            if (q.contains("gravity")) {
                const double gz = q.at("gravity").get<double>();
                if (!(gz < 0.0))
                    throw InvalidInput("config: quad_params.gravity is the world-z component and must be negative");
                c.quad.gravity = -gz;
            }
            read(q, "u_min", c.quad.u_min);
            read(q, "u_max", c.quad.u_max);
        }
        if (j.contains("mpc")) {
            const Json& m = j.at("mpc");
            check_keys(m, "mpc", {"horizon", "nodes", "q_weights", "q_terminal", "r_weights", "mode",
                                  "sqp_iters", "qp_kkt_tol", "qp_max_iters", "rk4_substeps"});
            read(m, "horizon", c.mpc.horizon);
            read(m, "nodes", c.mpc.nodes);
            read_vector(m, "q_weights", c.mpc.q_weights);
            read_vector(m, "q_terminal", c.mpc.q_terminal);
            read_vector(m, "r_weights", c.mpc.r_weights);
            if (m.contains("mode")) c.mpc.mode = parse_mode(m.at("mode").get<std::string>());
            read(m, "sqp_iters", c.mpc.sqp_iters);
            read(m, "qp_kkt_tol", c.mpc.qp_kkt_tol);
            read(m, "qp_max_iters", c.mpc.qp_max_iters);
            read(m, "rk4_substeps", c.mpc.rk4_substeps);
        }
        if (j.contains("sim")) {
            const Json& s = j.at("sim");
            check_keys(s, "sim", {"drag", "noise", "control_rate", "sensor_rate", "plant_rate", "seed",
                                  "duration", "ramp_fraction", "speed_scale", "rng"});
            read_vector(s, "drag", c.sim.drag);
            if (s.contains("noise")) {
                const Json& n = s.at("noise");
                check_keys(n, "sim.noise", {"position", "attitude_deg", "velocity", "body_rate_deg"});
                read(n, "position", c.sim.noise.position);
                read(n, "attitude_deg", c.sim.noise.attitude_deg);
                read(n, "velocity", c.sim.noise.velocity);
                read(n, "body_rate_deg", c.sim.noise.body_rate_deg);
            }
            read(s, "control_rate", c.sim.control_rate);
            read(s, "sensor_rate", c.sim.sensor_rate);
            read(s, "plant_rate", c.sim.plant_rate);
            read(s, "seed", c.sim.seed);
            read(s, "duration", c.sim.duration);
            read(s, "ramp_fraction", c.sim.ramp_fraction);
            read(s, "speed_scale", c.sim.speed_scale);
            read(s, "rng", c.sim.rng);
        }
        if (j.contains("pipeline")) {
            const Json& p = j.at("pipeline");
            check_keys(p, "pipeline", {"n_runs", "collect_speed_scale", "fallback_threshold", "n_bins",
                                       "n_inducing", "gp", "sweep_scales"});
            read(p, "n_runs", c.pipeline.n_runs);
            read(p, "collect_speed_scale", c.pipeline.collect_speed_scale);
            read(p, "fallback_threshold", c.pipeline.fallback_threshold);
            read(p, "n_bins", c.pipeline.training.n_bins);
            read(p, "n_inducing", c.pipeline.training.n_inducing);
            if (p.contains("gp")) {
                const Json& g = p.at("gp");
                check_keys(g, "pipeline.gp", {"restarts", "max_iters", "grad_tol", "restart_spread", "log_bound"});
                GpTrainingConfig& t = c.pipeline.training.gp;
                read(g, "restarts", t.restarts);
                read(g, "max_iters", t.max_iters);
                read(g, "grad_tol", t.grad_tol);
                read(g, "restart_spread", t.restart_spread);
                read(g, "log_bound", t.log_bound);
            }
            read(p, "sweep_scales", c.pipeline.sweep_scales);
        }
    } catch (const Json::exception& e) {
        throw InvalidInput(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("config: cannot open '" + path + "'");
    Json j;
    try {
        j = Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw InvalidInput("config: '" + path + "' is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

} // namespace gpmpc

#endif // GPMPC_CONFIG_HPP
