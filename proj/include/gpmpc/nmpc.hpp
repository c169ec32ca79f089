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

#ifndef GPMPC_NMPC_HPP
#define GPMPC_NMPC_HPP

/**
 * @file
 * @brief Gauss-Newton SQP tracking MPC in a real-time-iteration scheme.
 *
 * Each SQP iteration rolls the inputs out through the RK4 model (with the
 * mode's corrections), linearizes every shooting interval, condenses the
 * state deviations into a dense box-constrained QP over the stacked input
 * increments and takes the full step.
 */

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gpmpc/box_qp.hpp"
#include "gpmpc/errors.hpp"
#include "gpmpc/gp.hpp"
#include "gpmpc/quad_model.hpp"

namespace gpmpc {

enum class MpcMode { nominal, precomputed, direct };

inline std::string_view to_string(MpcMode m) {
    switch (m) {
    case MpcMode::nominal: return "nominal";
    case MpcMode::precomputed: return "precomputed";
    case MpcMode::direct: return "direct";
    }
    return "unknown";
}

inline MpcMode parse_mode(std::string_view s) {
    if (s == "nominal") return MpcMode::nominal;
    if (s == "precomputed") return MpcMode::precomputed;
    if (s == "direct") return MpcMode::direct;
    throw InvalidInput("unknown MPC mode '" + std::string(s) + "'");
}

struct MpcConfig {
    double horizon = 1.0; ///< T, seconds
    int nodes = 10;       ///< N
    StateVector q_weights = default_state_weights();
    StateVector q_terminal = 10.0 * default_state_weights();
    InputVector r_weights = InputVector::Constant(0.1);
    MpcMode mode = MpcMode::nominal;
    int sqp_iters = 1;
    double qp_kkt_tol = 1e-8;
    int qp_max_iters = 100;
    int rk4_substeps = 2;

    double node_dt() const { return horizon / nodes; }

    static StateVector default_state_weights() {
        StateVector w;
        w << 10, 10, 10, 5, 5, 5, 5, 1, 1, 1, 0.1, 0.1, 0.1;
        return w;
    }

    void validate() const {
        if (!(horizon > 0.0)) throw InvalidInput("MpcConfig: horizon must be positive");
        if (nodes < 2) throw InvalidInput("MpcConfig: need at least 2 nodes");
        if ((q_weights.array() < 0.0).any() || (q_terminal.array() < 0.0).any() ||
            (r_weights.array() < 0.0).any())
            throw InvalidInput("MpcConfig: weights must be non-negative");
        if (!(q_weights.head<3>().array() > 0.0).any())
            throw InvalidInput("MpcConfig: at least one position weight must be positive");
        if (sqp_iters < 1 || qp_max_iters < 1 || rk4_substeps < 1 || !(qp_kkt_tol > 0.0))
            throw InvalidInput("MpcConfig: iteration counts and tolerances must be positive");
    }
};

/// x*_0..x*_N and u*_0..u*_{N-1} sampled every T/N seconds.
struct ReferenceWindow {
    std::vector<State> states;
    std::vector<ControlInput> inputs;
};

/// Body-frame corrections d̂_0..d̂_{N-1}, each rotated to world by its attitude.
struct CorrectionSet {
    std::vector<Correction> corrections;
    std::vector<Eigen::Quaterniond> attitudes;

    std::size_t size() const { return corrections.size(); }

    static CorrectionSet zeros(int n) {
        return {std::vector<Correction>(static_cast<std::size_t>(n)),
                std::vector<Eigen::Quaterniond>(static_cast<std::size_t>(n),
                                                Eigen::Quaterniond::Identity())};
    }
};

enum class SolveStatus { ok, qp_iteration_limit };

inline std::string_view to_string(SolveStatus s) {
    return s == SolveStatus::ok ? "ok" : "qp_iteration_limit";
}

struct SolveResult {
    std::vector<State> states;
    std::vector<ControlInput> inputs;
    int sqp_iterations = 0;
    int qp_iterations = 0;             ///< active-set iterations, summed over SQP iterations
    int rollouts = 0;                  ///< nonlinear rollouts, including rejected trial steps
    double kkt_residual = 0.0;         ///< projected-gradient norm at the last linearization
    double initial_kkt_residual = 0.0; ///< same, at the first linearization
    double cost = 0.0;                 ///< tracking objective of the returned iterate
    double solve_time_ms = 0.0;
    SolveStatus status = SolveStatus::ok;
};

/// Previous inputs to warm start from, advanced by `shift_nodes` intervals.
struct WarmStart {
    std::vector<ControlInput> inputs;
    double shift_nodes = 1.0;
};

/// ‖x − x*‖²_Q + ‖u − u*‖²_R, quaternion components differenced after
/// flipping x* into the hemisphere of x.
inline double weighted_state_error(const StateVector& x, const StateVector& xref,
                                   const StateVector& w) {
    StateVector e = x - xref;
    if (x.segment<4>(idx::q).dot(xref.segment<4>(idx::q)) < 0.0)
        e.segment<4>(idx::q) = x.segment<4>(idx::q) + xref.segment<4>(idx::q);
    return e.cwiseAbs2().dot(w);
}

inline double stage_cost(const State& x, const ControlInput& u, const State& xref,
                         const ControlInput& uref, const MpcConfig& cfg) {
    return weighted_state_error(x.to_vector(), xref.to_vector(), cfg.q_weights) +
           (u.thrusts - uref.thrusts).cwiseAbs2().dot(cfg.r_weights);
}

// ---------------------------------------------------------------------------
// Condensing

/**
 * Linearization of an N-interval problem around a feasible rollout
 * (δx_0 = 0, zero defects): δx_{k+1} = A_k δx_k + B_k δu_k.
 * Node k+1 carries state residual e_{k+1} = x_{k+1} - x*_{k+1} and diagonal
 * weight state_weight[k].
 */
struct LinearizedProblem {
    std::vector<Eigen::MatrixXd> A;
    std::vector<Eigen::MatrixXd> B;
    std::vector<Eigen::VectorXd> state_residual;
    std::vector<Eigen::VectorXd> state_weight;
    std::vector<Eigen::VectorXd> input_residual; ///< u_k − u*_k
    Eigen::VectorXd input_weight;
    std::vector<Eigen::VectorXd> lower; ///< bounds on δu_k
    std::vector<Eigen::VectorXd> upper;
};

struct CondensedQpSolution {
    std::vector<Eigen::VectorXd> du;
    double kkt_residual = 0.0;
    double stationarity = 0.0; ///< projected gradient at δu = 0
    int iterations = 0;
    bool converged = false;
};

inline CondensedQpSolution condense_and_solve_qp(const LinearizedProblem& lp, double kkt_tol,
                                                 int max_iters) {
    const std::size_t N = lp.A.size();
    if (N == 0 || lp.B.size() != N || lp.state_residual.size() != N ||
        lp.state_weight.size() != N || lp.input_residual.size() != N || lp.lower.size() != N ||
        lp.upper.size() != N)
        throw InvalidInput("condense_and_solve_qp: inconsistent horizon lengths");
    const Eigen::Index nx = lp.A[0].rows();
    const Eigen::Index nu = lp.B[0].cols();
    const Eigen::Index n = static_cast<Eigen::Index>(N);

    // G(k, j) = ∂δx_{k+1}/∂δu_j, block lower triangular.
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(nx * n, nu * n);
    for (Eigen::Index j = 0; j < n; ++j) {
        G.block(j * nx, j * nu, nx, nu) = lp.B[static_cast<std::size_t>(j)];
        for (Eigen::Index k = j + 1; k < n; ++k)
            G.block(k * nx, j * nu, nx, nu).noalias() =
                lp.A[static_cast<std::size_t>(k)] * G.block((k - 1) * nx, j * nu, nx, nu);
    }
    Eigen::VectorXd w(nx * n), e(nx * n), r(nu * n), lb(nu * n), ub(nu * n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const auto s = static_cast<std::size_t>(k);
        w.segment(k * nx, nx) = lp.state_weight[s];
        e.segment(k * nx, nx) = lp.state_residual[s];
        r.segment(k * nu, nu) = lp.input_residual[s];
        lb.segment(k * nu, nu) = lp.lower[s];
        ub.segment(k * nu, nu) = lp.upper[s];
    }
    const Eigen::VectorXd rw = lp.input_weight.replicate(n, 1);

    const Eigen::MatrixXd WG = w.asDiagonal() * G;
    Eigen::MatrixXd H = G.transpose() * WG;
    H.diagonal() += rw;
    const Eigen::VectorXd g = WG.transpose() * e + rw.cwiseProduct(r);

    CondensedQpSolution out;
    out.stationarity = projected_gradient_norm(Eigen::VectorXd::Zero(nu * n), g, lb, ub);
    const BoxQpResult qp = solve_box_qp(H, g, lb, ub, kkt_tol, max_iters);
    out.kkt_residual = qp.kkt_residual;
    out.iterations = qp.iterations;
    out.converged = qp.converged;
    out.du.resize(N);
    for (Eigen::Index k = 0; k < n; ++k) out.du[static_cast<std::size_t>(k)] = qp.x.segment(k * nu, nu);
    return out;
}

// ---------------------------------------------------------------------------
// Solver

namespace detail {

struct Rollout {
    std::vector<StateVector> x;           ///< N + 1 states
    std::vector<Eigen::Vector3d> accel;   ///< world correction per interval
    std::vector<Eigen::Matrix3d> daccel;  ///< ∂accel/∂v per interval (direct mode only)
};

struct ShootingProblem {
    const QuadParams& params;
    const MpcConfig& cfg;
    StateVector x0;
    std::vector<StateVector> xref;
    std::vector<InputVector> uref;
    std::vector<Eigen::Vector3d> fixed_accel; ///< precomputed mode
    const ResidualModel* residual = nullptr;  ///< direct mode

    int n() const { return cfg.nodes; }
    double h() const { return cfg.node_dt() / cfg.rk4_substeps; }

    Rollout rollout(const std::vector<InputVector>& u) const {
        const auto N = static_cast<std::size_t>(n());
        Rollout r;
        r.x.resize(N + 1);
        r.accel.assign(N, Eigen::Vector3d::Zero());
        r.x[0] = x0;
        if (residual) r.daccel.resize(N);
        for (std::size_t k = 0; k < N; ++k) {
            if (residual) {
                // GP evaluated at this node's body velocity; the attitude
                // dependence of the frame change is dropped from ∂/∂x.
                const StateVector& xk = r.x[k];
                const Eigen::Matrix3d R = sandwich_matrix(xk(idx::q), xk(idx::q + 1),
                                                          xk(idx::q + 2), xk(idx::q + 3));
                const Eigen::Vector3d vb = R.transpose() * xk.segment<3>(idx::v);
                Eigen::Vector3d mu, dmu;
                for (int i = 0; i < 3; ++i) {
                    auto [m, d] = residual->axes[static_cast<std::size_t>(i)].mean_and_derivative(vb(i));
                    mu(i) = m;
                    dmu(i) = d;
                }
                r.accel[k] = R * mu;
                r.daccel[k] = R * dmu.asDiagonal() * R.transpose();
            } else if (!fixed_accel.empty()) {
                r.accel[k] = fixed_accel[k];
            }
            StateVector x = r.x[k];
            for (int s = 0; s < cfg.rk4_substeps; ++s) x = detail::rk4(x, u[k], h(), params, r.accel[k]);
            if (!x.allFinite()) throw NumericalError("MPC rollout produced a non-finite state");
            r.x[k + 1] = x;
        }
        return r;
    }

    double objective(const Rollout& r, const std::vector<InputVector>& u) const {
        const auto N = static_cast<std::size_t>(n());
        double c = 0.0;
        for (std::size_t k = 0; k < N; ++k) {
            c += weighted_state_error(r.x[k], xref[k], cfg.q_weights);
            c += (u[k] - uref[k]).cwiseAbs2().dot(cfg.r_weights);
        }
        return c + weighted_state_error(r.x[N], xref[N], cfg.q_terminal);
    }

    LinearizedProblem linearize(const Rollout& r, const std::vector<InputVector>& u) const {
        const auto N = static_cast<std::size_t>(n());
        const double dt = cfg.node_dt();
        LinearizedProblem lp;
        lp.A.resize(N);
        lp.B.resize(N);
        lp.state_residual.resize(N);
        lp.state_weight.resize(N);
        lp.input_residual.resize(N);
        lp.lower.resize(N);
        lp.upper.resize(N);
        lp.input_weight = cfg.r_weights;

        StateMatrix a_sub, a_tot;
        InputMatrix b_sub, b_tot;
        for (std::size_t k = 0; k < N; ++k) {
            StateVector x = r.x[k];
            a_tot.setIdentity();
            b_tot.setZero();
            for (int s = 0; s < cfg.rk4_substeps; ++s) {
                detail::rk4_jacobians(x, u[k], h(), params, r.accel[k], a_sub, b_sub);
                a_tot = (a_sub * a_tot).eval();
                b_tot = (a_sub * b_tot + b_sub).eval();
                x = detail::rk4(x, u[k], h(), params, r.accel[k]);
            }
            if (residual) {
                // A constant added acceleration c shifts p by c dt²/2 and v by c dt.
                a_tot.block<3, 3>(idx::p, idx::v) += 0.5 * dt * dt * r.daccel[k];
                a_tot.block<3, 3>(idx::v, idx::v) += dt * r.daccel[k];
            }
            lp.A[k] = a_tot;
            lp.B[k] = b_tot;

            const StateVector& xn = r.x[k + 1];
            StateVector e = xn - xref[k + 1];
            if (xn.segment<4>(idx::q).dot(xref[k + 1].segment<4>(idx::q)) < 0.0)
                e.segment<4>(idx::q) = xn.segment<4>(idx::q) + xref[k + 1].segment<4>(idx::q);
            lp.state_residual[k] = e;
            lp.state_weight[k] = k + 1 == N ? cfg.q_terminal : cfg.q_weights;
            lp.input_residual[k] = u[k] - uref[k];
            lp.lower[k] = InputVector::Constant(params.u_min) - u[k];
            lp.upper[k] = InputVector::Constant(params.u_max) - u[k];
        }
        return lp;
    }
};

inline std::vector<InputVector> shifted_inputs(const WarmStart& warm, int N) {
    const auto& prev = warm.inputs;
    const int last = static_cast<int>(prev.size()) - 1;
    std::vector<InputVector> u(static_cast<std::size_t>(N));
    for (int k = 0; k < N; ++k) {
        const double pos = k + warm.shift_nodes;
        const int i0 = static_cast<int>(std::floor(pos));
        const double frac = pos - i0;
        const InputVector& a = prev[static_cast<std::size_t>(std::clamp(i0, 0, last))].thrusts;
        if (frac == 0.0) {
            u[static_cast<std::size_t>(k)] = a;
        } else {
            const InputVector& b = prev[static_cast<std::size_t>(std::clamp(i0 + 1, 0, last))].thrusts;
            u[static_cast<std::size_t>(k)] = (1.0 - frac) * a + frac * b;
        }
    }
    return u;
}

} // namespace detail

/**
 * Run cfg.sqp_iters Gauss-Newton iterations from the warm start (or hover).
 *
 * mode == precomputed requires `corr`; mode == direct requires `residual`.
 * The returned iterate never has a higher objective than the starting one:
 * a full step that increases the cost is halved up to four times and
 * otherwise rejected.
 */
inline SolveResult solve(const State& x_init, const ReferenceWindow& ref,
                         const CorrectionSet* corr, const ResidualModel* residual,
                         const WarmStart* warm, const MpcConfig& cfg, const QuadParams& params) {
    const auto t_start = std::chrono::steady_clock::now();
    const int N = cfg.nodes;
    const auto Ns = static_cast<std::size_t>(N);
    if (ref.states.size() != Ns + 1 || ref.inputs.size() != Ns)
        throw InvalidInput("solve: reference window must hold N+1 states and N inputs");
    if (cfg.mode == MpcMode::precomputed && (!corr || corr->size() != Ns ||
                                             corr->attitudes.size() != Ns))
        throw InvalidInput("solve: precomputed mode needs N corrections");
    if (cfg.mode == MpcMode::direct && !residual)
        throw InvalidInput("solve: direct mode needs a residual model");
    if (warm && warm->inputs.empty()) throw InvalidInput("solve: empty warm start");

    detail::ShootingProblem prob{params, cfg, x_init.to_vector(), {}, {}, {}, nullptr};
    prob.xref.reserve(Ns + 1);
    for (const auto& s : ref.states) prob.xref.push_back(s.to_vector());
    prob.uref.reserve(Ns);
    for (const auto& u : ref.inputs) prob.uref.push_back(u.thrusts);
    if (cfg.mode == MpcMode::precomputed) {
        prob.fixed_accel.resize(Ns);
        for (std::size_t k = 0; k < Ns; ++k)
            prob.fixed_accel[k] = rotation_matrix(corr->attitudes[k]) * corr->corrections[k].a_body;
    }
    if (cfg.mode == MpcMode::direct) prob.residual = residual;

    std::vector<InputVector> u = warm ? detail::shifted_inputs(*warm, N)
                                      : std::vector<InputVector>(Ns, InputVector::Constant(params.hover_thrust()));
    for (auto& uk : u) uk = uk.cwiseMax(params.u_min).cwiseMin(params.u_max);

    SolveResult res;
    res.status = SolveStatus::ok;
    detail::Rollout roll = prob.rollout(u);
    res.rollouts = 1;
    double cost = prob.objective(roll, u);

    for (int it = 0; it < cfg.sqp_iters; ++it) {
        const LinearizedProblem lp = prob.linearize(roll, u);
        const CondensedQpSolution qp = condense_and_solve_qp(lp, cfg.qp_kkt_tol, cfg.qp_max_iters);
        if (it == 0) res.initial_kkt_residual = qp.stationarity;
        res.kkt_residual = qp.stationarity;
        if (!qp.converged) res.status = SolveStatus::qp_iteration_limit;
        ++res.sqp_iterations;
        res.qp_iterations += qp.iterations;

        double step = 1.0;
        bool accepted = false;
        for (int attempt = 0; attempt < 5; ++attempt, step *= 0.5) {
            std::vector<InputVector> trial(Ns);
            for (std::size_t k = 0; k < Ns; ++k)
                trial[k] = (u[k] + step * qp.du[k]).cwiseMax(params.u_min).cwiseMin(params.u_max);
            detail::Rollout trial_roll = prob.rollout(trial);
            ++res.rollouts;
            const double trial_cost = prob.objective(trial_roll, trial);
            if (trial_cost <= cost) {
                u = std::move(trial);
                roll = std::move(trial_roll);
                cost = trial_cost;
                accepted = true;
                break;
            }
        }
        if (!accepted) break;
    }

    res.cost = cost;
    res.states.reserve(Ns + 1);
    for (const auto& x : roll.x) res.states.push_back(State::from_vector(x));
    res.states.front() = x_init;
    res.inputs.reserve(Ns);
    for (const auto& uk : u) res.inputs.push_back({uk});
    res.solve_time_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start).count();
    return res;
}

/// Single-owner receding-horizon controller that keeps its own warm start.
class MpcController {
public:
    MpcController(MpcConfig cfg, QuadParams params, double shift_nodes = 1.0)
        : cfg_(std::move(cfg)), params_(std::move(params)), shift_nodes_(shift_nodes) {
        cfg_.validate();
        params_.validate();
    }

    SolveResult solve(const State& x_init, const ReferenceWindow& ref,
                      const CorrectionSet* corr = nullptr, const ResidualModel* residual = nullptr) {
        std::optional<WarmStart> warm;
        if (previous_) warm = WarmStart{previous_->inputs, shift_nodes_};
        SolveResult r = gpmpc::solve(x_init, ref, corr, residual, warm ? &*warm : nullptr, cfg_, params_);
        previous_ = r;
        return r;
    }

    const std::optional<SolveResult>& previous() const { return previous_; }
    void reset() { previous_.reset(); }
    const MpcConfig& config() const { return cfg_; }
    const QuadParams& params() const { return params_; }

private:
    MpcConfig cfg_;
    QuadParams params_;
    double shift_nodes_;
    std::optional<SolveResult> previous_;
};

} // namespace gpmpc

#endif // GPMPC_NMPC_HPP
