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

#ifndef GPMPC_IO_HPP
#define GPMPC_IO_HPP

/**
 * @file
 * @brief CSV and JSON files: datasets, schedules, flight logs, model files,
 * metrics and comparison reports.
 *
 * Numbers are written with 17 significant digits in the C locale, so every
 * value read back is bit-identical to the one written. Solve times always
 * sit in their own column or under a "timing" key.
 */

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "gpmpc/errors.hpp"
#include "gpmpc/experiment.hpp"
#include "gpmpc/flight_log.hpp"
#include "gpmpc/gp.hpp"
#include "gpmpc/residual_pipeline.hpp"
#include "gpmpc/sim.hpp"
#include "json.hpp"

namespace gpmpc {

inline constexpr std::string_view kDatasetHeader =
    "t,dt,vx,vy,vz,vx_meas_next,vy_meas_next,vz_meas_next,vx_pred_next,vy_pred_next,vz_pred_next,aex,aey,aez";
inline constexpr std::string_view kScheduleHeader = "t,ax,ay,az,qw,qx,qy,qz";
inline constexpr std::array<const char*, 3> kAxisNames{"x", "y", "z"};

/// %.17g in the C locale.
inline std::string fmt(double v) {
    char buf[32];
    const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf, static_cast<std::size_t>(n));
}

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    return out;
}

inline void finish(std::ofstream& out, const std::filesystem::path& path) {
    out.flush();
    if (!out) throw DataError("write failed for '" + path.string() + "'");
}

inline std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read '" + path.string() + "'");
    return in;
}

inline double parse_double(std::string_view s, const std::string& where) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw DataError(where + ": bad number '" + std::string(s) + "'");
    return v;
}

inline std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

/// Rows of a numeric CSV whose first line must equal `header`.
inline std::vector<std::vector<double>> read_numeric_csv(const std::filesystem::path& path,
                                                         std::string_view header) {
    std::ifstream in = open_in(path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("'" + path.string() + "' is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != header)
        throw DataError("'" + path.string() + "': unexpected header, want '" + std::string(header) + "'");
    const std::size_t cols = split(header).size();
    std::vector<std::vector<double>> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split(line);
        const std::string where = path.string() + ":" + std::to_string(lineno);
        if (cells.size() != cols) throw DataError(where + ": expected " + std::to_string(cols) + " fields");
        std::vector<double> row;
        row.reserve(cols);
        for (auto c : cells) row.push_back(parse_double(c, where));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline void put(std::ostream& out, const Eigen::Vector3d& v) {
    out << ',' << fmt(v.x()) << ',' << fmt(v.y()) << ',' << fmt(v.z());
}

inline void put(std::ostream& out, const Eigen::Quaterniond& q) {
    out << ',' << fmt(q.w()) << ',' << fmt(q.x()) << ',' << fmt(q.y()) << ',' << fmt(q.z());
}

inline void put(std::ostream& out, const State& s) {
    put(out, s.p);
    put(out, s.q);
    put(out, s.v);
    put(out, s.w);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Dataset

inline void write_dataset_csv(const std::filesystem::path& path, const Dataset& ds) {
    std::ofstream out = detail::open_out(path);
    out << kDatasetHeader << '\n';
    for (const auto& s : ds.samples) {
        out << fmt(s.t) << ',' << fmt(s.dt);
        detail::put(out, s.v_body);
        detail::put(out, s.v_body_next_meas);
        detail::put(out, s.v_body_next_pred);
        detail::put(out, s.a_e);
        out << '\n';
    }
    detail::finish(out, path);
}

inline Dataset read_dataset_csv(const std::filesystem::path& path) {
    Dataset ds;
    for (const auto& r : detail::read_numeric_csv(path, kDatasetHeader)) {
        TrainingSample s;
        s.t = r[0];
        s.dt = r[1];
        s.v_body = {r[2], r[3], r[4]};
        s.v_body_next_meas = {r[5], r[6], r[7]};
        s.v_body_next_pred = {r[8], r[9], r[10]};
        s.a_e = {r[11], r[12], r[13]};
        if (!ds.samples.empty() && !(s.t > ds.samples.back().t))
            throw DataError("'" + path.string() + "': timestamps must be strictly increasing");
        ds.samples.push_back(s);
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Correction schedule

inline void write_schedule_csv(const std::filesystem::path& path, const CorrectionSchedule& s) {
    std::ofstream out = detail::open_out(path);
    out << kScheduleHeader << '\n';
    for (std::size_t i = 0; i < s.size(); ++i) {
        out << fmt(s.time(i));
        detail::put(out, s.a_body[i]);
        detail::put(out, s.attitude[i]);
        out << '\n';
    }
    detail::finish(out, path);
}

inline CorrectionSchedule read_schedule_csv(const std::filesystem::path& path) {
    const auto rows = detail::read_numeric_csv(path, kScheduleHeader);
    if (rows.size() < 2) throw DataError("'" + path.string() + "': a schedule needs at least two rows");
    CorrectionSchedule s;
    s.t0 = rows[0][0];
    s.dt = rows[1][0] - rows[0][0];
    for (const auto& r : rows) {
        s.a_body.emplace_back(r[1], r[2], r[3]);
        s.attitude.emplace_back(r[4], r[5], r[6], r[7]);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Flight log

inline std::string flight_log_header() {
    std::string h = "t";
    for (const char* who : {"ref", "meas", "true"})
        for (const char* c : {"px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "wx", "wy", "wz"})
            h += std::string(",") + who + "_" + c;
    h += ",u0,u1,u2,u3,sqp_iterations,qp_iterations,rollouts,kkt_residual,cost,status,source,"
         "vx_pred_next,vy_pred_next,vz_pred_next,solve_time_ms";
    return h;
}

/// One row per control step; solve_time_ms is the last column.
inline void write_flight_log_csv(const std::filesystem::path& path, const FlightLog& log) {
    std::ofstream out = detail::open_out(path);
    out << flight_log_header() << '\n';
    for (const auto& r : log.rows) {
        out << fmt(r.t);
        detail::put(out, r.reference);
        detail::put(out, r.measured);
        detail::put(out, r.truth);
        for (int i = 0; i < kInputDim; ++i) out << ',' << fmt(r.input.thrusts(i));
        out << ',' << r.sqp_iterations << ',' << r.qp_iterations << ',' << r.rollouts << ','
            << fmt(r.kkt_residual) << ',' << fmt(r.cost) << ',' << to_string(r.status) << ','
            << to_string(r.source);
        detail::put(out, r.predicted_next_velocity);
        out << ',' << fmt(r.solve_time_ms) << '\n';
    }
    detail::finish(out, path);
}

// ---------------------------------------------------------------------------
// Model files

/// {axis, targets_kind, inputs[], targets[], lengthscale, sigma_f2, sigma_n2}, 17 significant digits.
inline std::string model_json(int axis, const GpModel& m) {
    std::ostringstream out;
    auto list = [&](const Eigen::VectorXd& v) {
        out << '[';
        for (Eigen::Index i = 0; i < v.size(); ++i) out << (i ? ", " : "") << fmt(v(i));
        out << ']';
    };
    out << "{\n  \"axis\": \"" << kAxisNames.at(static_cast<std::size_t>(axis)) << "\",\n  \"targets_kind\": \""
        << (m.target_kind() == Targets::noisy ? "noisy" : "noise_free") << "\",\n  \"inputs\": ";
    list(m.inputs());
    out << ",\n  \"targets\": ";
    list(m.targets());
    out << ",\n  \"lengthscale\": " << fmt(m.hyper().lengthscale) << ",\n  \"sigma_f2\": "
        << fmt(m.hyper().sigma_f2) << ",\n  \"sigma_n2\": " << fmt(m.hyper().sigma_n2) << "\n}\n";
    return out.str();
}

inline GpModel model_from_json(const nlohmann::json& j, int expected_axis, const std::string& where) {
    try {
        const std::string axis = j.at("axis").get<std::string>();
        if (axis != kAxisNames.at(static_cast<std::size_t>(expected_axis)))
            throw DataError(where + ": axis '" + axis + "' in the wrong file");
        const auto inputs = j.at("inputs").get<std::vector<double>>();
        const auto targets = j.at("targets").get<std::vector<double>>();
        GpHyperparams h{j.at("lengthscale").get<double>(), j.at("sigma_f2").get<double>(),
                        j.at("sigma_n2").get<double>()};
        if (inputs.empty() || inputs.size() != targets.size())
            throw DataError(where + ": inputs and targets must be non-empty and of equal length");
        const std::string kind = j.value("targets_kind", std::string("noisy"));
        if (kind != "noisy" && kind != "noise_free")
            throw DataError(where + ": targets_kind must be 'noisy' or 'noise_free'");
        return GpModel::fit(inputs, targets, h, kind == "noisy" ? Targets::noisy : Targets::noise_free);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(where + ": " + e.what());
    } catch (const InvalidInput& e) {
        throw DataError(where + ": " + e.what());
    }
}

inline std::filesystem::path model_path(const std::filesystem::path& dir, int axis) {
    return dir / ("model_" + std::string(kAxisNames.at(static_cast<std::size_t>(axis))) + ".json");
}

inline void save_residual_model(const std::filesystem::path& dir, const ResidualModel& model) {
    for (int a = 0; a < 3; ++a)
        if (model.axes[static_cast<std::size_t>(a)].size() == 0)
            throw InvalidInput("save_residual_model: axis " + std::string(kAxisNames.at(static_cast<std::size_t>(a))) +
                               " has no fitted model");
    for (int a = 0; a < 3; ++a) {
        const auto path = model_path(dir, a);
        std::ofstream out = detail::open_out(path);
        out << model_json(a, model.axes[static_cast<std::size_t>(a)]);
        detail::finish(out, path);
    }
}

inline ResidualModel load_residual_model(const std::filesystem::path& dir) {
    ResidualModel m;
    for (int a = 0; a < 3; ++a) {
        const auto path = model_path(dir, a);
        std::ifstream in = detail::open_in(path);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError("'" + path.string() + "': " + e.what());
        }
        m.axes[static_cast<std::size_t>(a)] = model_from_json(j, a, path.string());
    }
    return m;
}

inline nlohmann::json training_report_json(const ResidualTrainingResult& r) {
    nlohmann::json axes = nlohmann::json::array();
    for (int a = 0; a < 3; ++a) {
        const auto& rep = r.report[static_cast<std::size_t>(a)];
        axes.push_back({{"axis", kAxisNames.at(static_cast<std::size_t>(a))},
                        {"degenerate", rep.degenerate},
                        {"dense_points", rep.dense_points},
                        {"inducing_points", rep.inducing_points},
                        {"lengthscale", rep.hyper.lengthscale},
                        {"sigma_f2", rep.hyper.sigma_f2},
                        {"sigma_n2", rep.hyper.sigma_n2},
                        {"log_likelihood", rep.log_likelihood}});
    }
    return {{"axes", axes}};
}

// ---------------------------------------------------------------------------
// Metrics and reports

inline nlohmann::json metrics_json(const Metrics& m) {
    return {{"mode", m.mode},
            {"rmse_pos_mm", m.rmse_pos_mm},
            {"rmse_xy_mm", m.rmse_xy_mm},
            {"max_speed_achieved", m.max_speed},
            {"steps", m.steps},
            {"aborted", m.aborted},
            {"timing", {{"mean_solve_ms", m.mean_solve_ms},
                        {"median_solve_ms", m.median_solve_ms},
                        {"p95_solve_ms", m.p95_solve_ms}}}};
}

inline Metrics metrics_from_json(const nlohmann::json& j) {
    Metrics m;
    m.mode = j.at("mode").get<std::string>();
    m.rmse_pos_mm = j.at("rmse_pos_mm").get<double>();
    m.rmse_xy_mm = j.at("rmse_xy_mm").get<double>();
    m.max_speed = j.at("max_speed_achieved").get<double>();
    m.steps = j.at("steps").get<std::size_t>();
    m.aborted = j.at("aborted").get<bool>();
    const auto& t = j.at("timing");
    m.mean_solve_ms = t.at("mean_solve_ms").get<double>();
    m.median_solve_ms = t.at("median_solve_ms").get<double>();
    m.p95_solve_ms = t.at("p95_solve_ms").get<double>();
    return m;
}

inline nlohmann::json comparison_json(const Comparison& c) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : c.rows) {
        nlohmann::json m = metrics_json(r.metrics);
        m["pct_reduction"] = r.pct_reduction;
        rows.push_back(m);
    }
    return {{"speed_scale", c.speed_scale}, {"rows", rows}};
}

inline Comparison comparison_from_json(const nlohmann::json& j) {
    Comparison c;
    c.speed_scale = j.at("speed_scale").get<double>();
    for (const auto& r : j.at("rows")) c.rows.push_back({metrics_from_json(r), r.at("pct_reduction").get<double>()});
    return c;
}

inline constexpr std::string_view kComparisonHeader =
    "speed_scale,mode,max_speed_achieved,rmse_mm,rmse_xy_mm,pct_reduction,mean_solve_ms";

inline void put_comparison_rows(std::ostream& out, const Comparison& c) {
    for (const auto& r : c.rows)
        out << fmt(c.speed_scale) << ',' << r.metrics.mode << ',' << fmt(r.metrics.max_speed) << ','
            << fmt(r.metrics.rmse_pos_mm) << ',' << fmt(r.metrics.rmse_xy_mm) << ',' << fmt(r.pct_reduction)
            << ',' << fmt(r.metrics.mean_solve_ms) << '\n';
}

/// Table rows per mode: rmse, reduction vs nominal, mean solve time (last column).
inline void write_comparison_csv(const std::filesystem::path& path, const std::vector<Comparison>& cs) {
    std::ofstream out = detail::open_out(path);
    out << kComparisonHeader << '\n';
    for (const auto& c : cs) put_comparison_rows(out, c);
    detail::finish(out, path);
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream out = detail::open_out(path);
    out << j.dump(2) << '\n';
    detail::finish(out, path);
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in = detail::open_in(path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError("'" + path.string() + "': " + e.what());
    }
}

/// Fixed-width text table of one comparison.
inline std::string comparison_table(const Comparison& c) {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof line, "speed_scale %.2f\n%-12s %10s %10s %10s %14s %14s\n", c.speed_scale,
                  "mode", "rmse_mm", "rmse_xy_mm", "max_speed", "pct_reduction", "mean_solve_ms");
    out << line;
    for (const auto& r : c.rows) {
        std::snprintf(line, sizeof line, "%-12s %10.1f %10.1f %10.2f %14.1f %14.3f\n", r.metrics.mode.c_str(),
                      r.metrics.rmse_pos_mm, r.metrics.rmse_xy_mm, r.metrics.max_speed, r.pct_reduction,
                      r.metrics.mean_solve_ms);
        out << line;
    }
    return out.str();
}

} // namespace gpmpc

#endif // GPMPC_IO_HPP
