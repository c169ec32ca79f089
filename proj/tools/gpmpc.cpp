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

// gpmpc: collect, train, fly, compare, sweep, report.
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gpmpc/config.hpp"
#include "gpmpc/experiment.hpp"
#include "gpmpc/io.hpp"

namespace fs = std::filesystem;
using namespace gpmpc;

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = "out";
};

struct Context {
    ExperimentConfig cfg;
    std::uint64_t seed = 0;
    fs::path out;
};

Context context(const Globals& g) {
    Context c;
    if (!g.config.empty()) c.cfg = load_config(g.config);
    c.seed = g.seed ? *g.seed : c.cfg.sim.seed;
    c.out = g.out;
    return c;
}

void run_collect(const Globals& g) {
    const Context c = context(g);
    const Dataset ds = collect_dataset(c.cfg, c.seed);
    write_dataset_csv(c.out / "dataset.csv", ds);
    std::cout << "wrote " << ds.size() << " samples to " << (c.out / "dataset.csv").string() << '\n';
}

void run_train(const Globals& g, const std::string& dataset) {
    const Context c = context(g);
    const fs::path in = dataset.empty() ? c.out / "dataset.csv" : fs::path(dataset);
    const Dataset ds = read_dataset_csv(in);
    const ResidualTrainingResult r = train_model(c.cfg, ds, c.seed);
    save_residual_model(c.out, r.model);
    write_json(c.out / "train_report.json", training_report_json(r));
    std::cout << "wrote model_x.json, model_y.json, model_z.json to " << c.out.string() << '\n';
}

fs::path model_dir(const Context& c, const std::string& model) { return model.empty() ? c.out : fs::path(model); }

void run_fly(const Globals& g, const std::string& mode_name, const std::string& model) {
    Context c = context(g);
    const MpcMode mode = mode_name.empty() ? c.cfg.mpc.mode : parse_mode(mode_name);
    std::optional<ResidualModel> residual;
    if (mode != MpcMode::nominal) residual = load_residual_model(model_dir(c, model));
    if (mode == MpcMode::precomputed)
        write_schedule_csv(c.out / "schedule.csv", schedule_for(c.cfg, *residual));
    const FlightLog log = fly(c.cfg, mode, residual ? &*residual : nullptr, c.seed);
    const std::string tag(to_string(mode));
    write_flight_log_csv(c.out / ("flight_log_" + tag + ".csv"), log);
    const Metrics m = compute_metrics(log);
    write_json(c.out / ("metrics_" + tag + ".json"), metrics_json(m));
    std::cout << tag << ": rmse " << m.rmse_pos_mm << " mm, xy " << m.rmse_xy_mm << " mm, max speed "
              << m.max_speed << " m/s, mean solve " << m.mean_solve_ms << " ms\n";
    if (log.aborted) throw NumericalError("run aborted: " + log.error);
}

void run_compare(const Globals& g, const std::string& model) {
    const Context c = context(g);
    const ResidualModel residual = load_residual_model(model_dir(c, model));
    const Comparison cmp = compare(c.cfg, residual, c.seed);
    write_json(c.out / "compare.json", comparison_json(cmp));
    write_comparison_csv(c.out / "compare.csv", {cmp});
    std::cout << comparison_table(cmp);
}

void run_sweep(const Globals& g, const std::string& model, std::vector<double> scales) {
    const Context c = context(g);
    if (scales.empty()) scales = c.cfg.pipeline.sweep_scales;
    const ResidualModel residual = load_residual_model(model_dir(c, model));
    const std::vector<Comparison> all = sweep(c.cfg, residual, c.seed, scales);
    Json j = Json::array();
    for (const auto& cmp : all) j.push_back(comparison_json(cmp));
    write_json(c.out / "sweep.json", j);
    write_comparison_csv(c.out / "sweep.csv", all);
    for (const auto& cmp : all) std::cout << comparison_table(cmp) << '\n';
}

void run_report(const Globals& g, const std::string& in_dir) {
    const fs::path dir = in_dir.empty() ? fs::path(g.out) : fs::path(in_dir);
    std::vector<Comparison> all;
    if (fs::exists(dir / "compare.json")) all.push_back(comparison_from_json(read_json(dir / "compare.json")));
    if (fs::exists(dir / "sweep.json"))
        for (const auto& j : read_json(dir / "sweep.json")) all.push_back(comparison_from_json(j));
    if (all.empty()) throw DataError("report: no compare.json or sweep.json in '" + dir.string() + "'");

    std::ostringstream md;
    md << "| speed_scale | mode | max_speed [m/s] | rmse [mm] | rmse_xy [mm] | reduction [%] | mean solve [ms] |\n"
       << "|---|---|---|---|---|---|---|\n";
    char line[200];
    for (const auto& cmp : all)
        for (const auto& r : cmp.rows) {
            std::snprintf(line, sizeof line, "| %.2f | %s | %.2f | %.1f | %.1f | %.1f | %.3f |\n", cmp.speed_scale,
                          r.metrics.mode.c_str(), r.metrics.max_speed, r.metrics.rmse_pos_mm, r.metrics.rmse_xy_mm,
                          r.pct_reduction, r.metrics.mean_solve_ms);
            md << line;
        }
    std::ofstream out(dir / "report.md", std::ios::binary);
    out << md.str();
    if (!out) throw DataError("report: cannot write '" + (dir / "report.md").string() + "'");
    write_comparison_csv(dir / "report.csv", all);
    std::cout << md.str();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Quadrotor NMPC with Gaussian-process residual corrections"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    std::uint64_t seed = 0;
    app.add_option("--config", g.config, "JSON configuration file (defaults when omitted)");
    auto* seed_opt = app.add_option("--seed", seed, "Random seed (default: sim.seed from the configuration)");
    app.add_option("--out", g.out, "Output directory")->capture_default_str();

    std::string dataset, mode, model, in_dir;
    std::vector<double> scales;

    auto* collect = app.add_subcommand("collect", "Fly the nominal MPC and write dataset.csv");
    auto* train = app.add_subcommand("train", "Train the residual model from a dataset");
    train->add_option("--dataset", dataset, "Dataset CSV (default: <out>/dataset.csv)");
    auto* fly = app.add_subcommand("fly", "One closed-loop run; writes the flight log and metrics");
    fly->add_option("--mode", mode, "nominal | precomputed | direct (default: mpc.mode)")
        ->check(CLI::IsMember({"nominal", "precomputed", "direct"}));
    fly->add_option("--model", model, "Directory holding model_{x,y,z}.json (default: <out>)");
    auto* cmp = app.add_subcommand("compare", "Nominal, precomputed and direct on the same seed");
    cmp->add_option("--model", model, "Directory holding model_{x,y,z}.json (default: <out>)");
    auto* swp = app.add_subcommand("sweep", "compare across speed scales");
    swp->add_option("--model", model, "Directory holding model_{x,y,z}.json (default: <out>)");
    swp->add_option("--scales", scales, "Speed scales (default: pipeline.sweep_scales)");
    auto* rep = app.add_subcommand("report", "Render compare/sweep results as Markdown and CSV");
    rep->add_option("--in", in_dir, "Directory with compare.json / sweep.json (default: <out>)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }
    if (*seed_opt) g.seed = seed;

    try {
        if (*collect) run_collect(g);
        else if (*train) run_train(g, dataset);
        else if (*fly) run_fly(g, mode, model);
        else if (*cmp) run_compare(g, model);
        else if (*swp) run_sweep(g, model, scales);
        else if (*rep) run_report(g, in_dir);
    } catch (const InvalidInput& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
