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

#ifndef GPMPC_QUAD_MODEL_HPP
#define GPMPC_QUAD_MODEL_HPP

/**
 * @file
 * @brief Rigid-body quadrotor model: quaternion helpers, thrust mixing,
 * continuous dynamics, RK4 discretization and its sensitivities.
 *
 * State vector layout (13): p(0..2), q = (w, x, y, z)(3..6), v(7..9), w(10..12).
 * Attitude quaternions are Hamilton, body-to-world.
 */

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <optional>
#include <string>

#include "gpmpc/errors.hpp"

namespace gpmpc {

inline constexpr int kStateDim = 13;
inline constexpr int kInputDim = 4;

using StateVector = Eigen::Matrix<double, kStateDim, 1>;
using InputVector = Eigen::Matrix<double, kInputDim, 1>;
using StateMatrix = Eigen::Matrix<double, kStateDim, kStateDim>;
using InputMatrix = Eigen::Matrix<double, kStateDim, kInputDim>;

namespace idx {
inline constexpr int p = 0;
inline constexpr int q = 3;
inline constexpr int v = 7;
inline constexpr int w = 10;
} // namespace idx

struct QuadParams {
    double mass = 0.68;
    Eigen::Vector3d inertia_diag{0.007, 0.007, 0.012};
    double d_x = 0.12;
    double d_y = 0.12;
    double c_tau = 0.016;
    double gravity = 9.81; ///< magnitude; acts along world -z
    double u_min = 0.0;
    double u_max = 4.5;

    void validate() const {
        if (!(mass > 0.0)) throw InvalidInput("QuadParams: mass must be positive");
        if (!(inertia_diag.array() > 0.0).all())
            throw InvalidInput("QuadParams: inertia entries must be positive");
        if (!(d_x > 0.0 && d_y > 0.0 && c_tau > 0.0))
            throw InvalidInput("QuadParams: d_x, d_y, c_tau must be positive");
        if (!(u_min >= 0.0 && u_min < u_max))
            throw InvalidInput("QuadParams: require 0 <= u_min < u_max");
    }

    Eigen::Vector3d gravity_world() const { return {0.0, 0.0, -gravity}; }

    /// Per-rotor thrust that balances gravity at level attitude.
    double hover_thrust() const { return mass * gravity / 4.0; }
};

struct State {
    Eigen::Vector3d p = Eigen::Vector3d::Zero();
    Eigen::Quaterniond q = Eigen::Quaterniond::Identity();
    Eigen::Vector3d v = Eigen::Vector3d::Zero();
    Eigen::Vector3d w = Eigen::Vector3d::Zero();

    StateVector to_vector() const {
        StateVector x;
        x.segment<3>(idx::p) = p;
        x.segment<4>(idx::q) << q.w(), q.x(), q.y(), q.z();
        x.segment<3>(idx::v) = v;
        x.segment<3>(idx::w) = w;
        return x;
    }

    static State from_vector(const StateVector& x) {
        State s;
        s.p = x.segment<3>(idx::p);
        s.q = Eigen::Quaterniond(x(idx::q), x(idx::q + 1), x(idx::q + 2), x(idx::q + 3));
        s.v = x.segment<3>(idx::v);
        s.w = x.segment<3>(idx::w);
        return s;
    }

    static State hover_at(const Eigen::Vector3d& position) {
        State s;
        s.p = position;
        return s;
    }
};

struct ControlInput {
    InputVector thrusts = InputVector::Zero();

    static ControlInput uniform(double t) { return {InputVector::Constant(t)}; }
};

/// Body-frame acceleration error (m/s^2) learned from data.
struct Correction {
    Eigen::Vector3d a_body = Eigen::Vector3d::Zero();
};

// ---------------------------------------------------------------------------
// Quaternion helpers

inline constexpr double kUnitQuatTol = 1e-9;

/// Rotation matrix of the sandwich product q v q̄. For non-unit q this is the
/// rotation scaled by |q|^2; dynamics rely on that to stay smooth off the
/// unit sphere (finite-difference probes).
inline Eigen::Matrix3d sandwich_matrix(double qw, double qx, double qy, double qz) {
    Eigen::Matrix3d r;
    r << qw * qw + qx * qx - qy * qy - qz * qz, 2.0 * (qx * qy - qw * qz),
        2.0 * (qx * qz + qw * qy), 2.0 * (qx * qy + qw * qz),
        qw * qw - qx * qx + qy * qy - qz * qz, 2.0 * (qy * qz - qw * qx),
        2.0 * (qx * qz - qw * qy), 2.0 * (qy * qz + qw * qx),
        qw * qw - qx * qx - qy * qy + qz * qz;
    return r;
}

inline Eigen::Matrix3d rotation_matrix(const Eigen::Quaterniond& q) {
    return sandwich_matrix(q.w(), q.x(), q.y(), q.z());
}

inline void require_unit(const Eigen::Quaterniond& q, const char* where) {
    if (std::abs(q.norm() - 1.0) > kUnitQuatTol)
        throw InvalidInput(std::string(where) + ": quaternion is not unit norm");
}

/// q ⊙ v = q v q̄.
inline Eigen::Vector3d quat_rotate(const Eigen::Quaterniond& q, const Eigen::Vector3d& v) {
    require_unit(q, "quat_rotate");
    return rotation_matrix(q) * v;
}

inline Eigen::Quaterniond conjugate(const Eigen::Quaterniond& q) { return q.conjugate(); }

/// Flip `q` into the hemisphere of `reference` (same rotation, dot >= 0).
inline Eigen::Quaterniond align_hemisphere(const Eigen::Quaterniond& q,
                                           const Eigen::Quaterniond& reference) {
    if (q.dot(reference) < 0.0) return Eigen::Quaterniond(-q.w(), -q.x(), -q.y(), -q.z());
    return q;
}

inline Eigen::Quaterniond axis_angle(const Eigen::Vector3d& axis, double angle) {
    return Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis.normalized()));
}

// ---------------------------------------------------------------------------
// Actuation and dynamics

/// Torque rows of the rotor mixing map; column i is rotor i.
inline Eigen::Matrix<double, 3, 4> torque_mixing(const QuadParams& params) {
    Eigen::Matrix<double, 3, 4> m;
    m << -params.d_y, -params.d_y, params.d_y, params.d_y, //
        -params.d_x, params.d_x, params.d_x, -params.d_x,  //
        -params.c_tau, params.c_tau, -params.c_tau, params.c_tau;
    return m;
}

struct Wrench {
    Eigen::Vector3d thrust;
    Eigen::Vector3d torque;
};

inline Wrench mix_thrusts(const ControlInput& u, const QuadParams& params) {
    return {Eigen::Vector3d(0.0, 0.0, u.thrusts.sum()), torque_mixing(params) * u.thrusts};
}

namespace detail {

inline StateVector dynamics(const StateVector& x, const InputVector& u, const QuadParams& params,
                            const Eigen::Vector3d& extra_accel) {
    const double qw = x(idx::q), qx = x(idx::q + 1), qy = x(idx::q + 2), qz = x(idx::q + 3);
    const Eigen::Vector3d w = x.segment<3>(idx::w);
    const Eigen::Vector3d& J = params.inertia_diag;

    StateVector dx;
    dx.segment<3>(idx::p) = x.segment<3>(idx::v);
    // q ⊗ (0, w) / 2
    dx(idx::q) = 0.5 * (-qx * w.x() - qy * w.y() - qz * w.z());
    dx(idx::q + 1) = 0.5 * (qw * w.x() + qy * w.z() - qz * w.y());
    dx(idx::q + 2) = 0.5 * (qw * w.y() + qz * w.x() - qx * w.z());
    dx(idx::q + 3) = 0.5 * (qw * w.z() + qx * w.y() - qy * w.x());

    const double thrust_per_mass = u.sum() / params.mass;
    const Eigen::Vector3d body_z(2.0 * (qx * qz + qw * qy), 2.0 * (qy * qz - qw * qx),
                                 qw * qw - qx * qx - qy * qy + qz * qz);
    dx.segment<3>(idx::v) = thrust_per_mass * body_z + params.gravity_world() + extra_accel;

    const Eigen::Vector3d torque = torque_mixing(params) * u;
    const Eigen::Vector3d Jw = J.cwiseProduct(w);
    dx.segment<3>(idx::w) = (torque - w.cross(Jw)).cwiseQuotient(J);
    return dx;
}

/// Jacobians of `dynamics` w.r.t. state and input (extra_accel is constant).
inline void dynamics_jacobian(const StateVector& x, const InputVector& u, const QuadParams& params,
                              StateMatrix& fx, InputMatrix& fu) {
    const double qw = x(idx::q), qx = x(idx::q + 1), qy = x(idx::q + 2), qz = x(idx::q + 3);
    const Eigen::Vector3d w = x.segment<3>(idx::w);
    const Eigen::Vector3d& J = params.inertia_diag;

    fx.setZero();
    fu.setZero();
    fx.block<3, 3>(idx::p, idx::v).setIdentity();

    Eigen::Matrix4d dq_dq;
    dq_dq << 0.0, -w.x(), -w.y(), -w.z(), //
        w.x(), 0.0, w.z(), -w.y(),        //
        w.y(), -w.z(), 0.0, w.x(),        //
        w.z(), w.y(), -w.x(), 0.0;
    fx.block<4, 4>(idx::q, idx::q) = 0.5 * dq_dq;
    Eigen::Matrix<double, 4, 3> dq_dw;
    dq_dw << -qx, -qy, -qz, //
        qw, -qz, qy,        //
        qz, qw, -qx,        //
        -qy, qx, qw;
    fx.block<4, 3>(idx::q, idx::w) = 0.5 * dq_dw;

    const double tm = u.sum() / params.mass;
    Eigen::Matrix<double, 3, 4> dz_dq;
    dz_dq << qy, qz, qw, qx, //
        -qx, -qw, qz, qy,    //
        qw, -qx, -qy, qz;
    fx.block<3, 4>(idx::v, idx::q) = 2.0 * tm * dz_dq;
    const Eigen::Vector3d body_z(2.0 * (qx * qz + qw * qy), 2.0 * (qy * qz - qw * qx),
                                 qw * qw - qx * qx - qy * qy + qz * qz);
    fu.block<3, 4>(idx::v, 0) = (body_z / params.mass).replicate<1, 4>();

    auto skew = [](const Eigen::Vector3d& a) {
        Eigen::Matrix3d s;
        s << 0.0, -a.z(), a.y(), a.z(), 0.0, -a.x(), -a.y(), a.x(), 0.0;
        return s;
    };
    const Eigen::Matrix3d jinv = J.cwiseInverse().asDiagonal();
    const Eigen::Vector3d Jw = J.cwiseProduct(w);
    fx.block<3, 3>(idx::w, idx::w) = -jinv * (skew(w) * J.asDiagonal().toDenseMatrix() - skew(Jw));
    fu.block<3, 4>(idx::w, 0) = jinv * torque_mixing(params);
}

inline void normalize_quaternion(StateVector& x) {
    x.segment<4>(idx::q) /= x.segment<4>(idx::q).norm();
}

/// Classical RK4 with a constant world-frame acceleration added to v̇.
inline StateVector rk4(const StateVector& x, const InputVector& u, double dt,
                       const QuadParams& params, const Eigen::Vector3d& extra_accel) {
    const StateVector k1 = dynamics(x, u, params, extra_accel);
    const StateVector k2 = dynamics(x + 0.5 * dt * k1, u, params, extra_accel);
    const StateVector k3 = dynamics(x + 0.5 * dt * k2, u, params, extra_accel);
    const StateVector k4 = dynamics(x + dt * k3, u, params, extra_accel);
    StateVector next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    normalize_quaternion(next);
    return next;
}

/// Forward sensitivities of one `rk4` step, including the renormalization.
inline void rk4_jacobians(const StateVector& x, const InputVector& u, double dt,
                          const QuadParams& params, const Eigen::Vector3d& extra_accel,
                          StateMatrix& A, InputMatrix& B) {
    using Sens = Eigen::Matrix<double, kStateDim, kStateDim + kInputDim>;
    StateMatrix fx;
    InputMatrix fu;

    auto stage = [&](const StateVector& xs, const Sens& dxs, Sens& dk) {
        dynamics_jacobian(xs, u, params, fx, fu);
        dk.leftCols<kStateDim>().noalias() = fx * dxs.leftCols<kStateDim>();
        dk.rightCols<kInputDim>().noalias() = fx * dxs.rightCols<kInputDim>();
        dk.rightCols<kInputDim>() += fu;
    };

    Sens d0 = Sens::Zero();
    d0.leftCols<kStateDim>().setIdentity();

    const StateVector k1 = dynamics(x, u, params, extra_accel);
    Sens dk1;
    stage(x, d0, dk1);

    const StateVector x2 = x + 0.5 * dt * k1;
    const Sens dx2 = d0 + 0.5 * dt * dk1;
    const StateVector k2 = dynamics(x2, u, params, extra_accel);
    Sens dk2;
    stage(x2, dx2, dk2);

    const StateVector x3 = x + 0.5 * dt * k2;
    const Sens dx3 = d0 + 0.5 * dt * dk2;
    const StateVector k3 = dynamics(x3, u, params, extra_accel);
    Sens dk3;
    stage(x3, dx3, dk3);

    const StateVector x4 = x + dt * k3;
    const Sens dx4 = d0 + dt * dk3;
    Sens dk4;
    stage(x4, dx4, dk4);
    const StateVector k4 = dynamics(x4, u, params, extra_accel);

    const StateVector raw = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    Sens draw = d0 + (dt / 6.0) * (dk1 + 2.0 * dk2 + 2.0 * dk3 + dk4);

    // d(q/|q|)/dq = (I - q̂q̂ᵀ)/|q|
    const Eigen::Vector4d q = raw.segment<4>(idx::q);
    const double n = q.norm();
    const Eigen::Vector4d qh = q / n;
    const Eigen::Matrix4d dnorm = (Eigen::Matrix4d::Identity() - qh * qh.transpose()) / n;
    const Eigen::Matrix<double, 4, kStateDim + kInputDim> qrows = dnorm * draw.middleRows<4>(idx::q);
    draw.middleRows<4>(idx::q) = qrows;

    A = draw.leftCols<kStateDim>();
    B = draw.rightCols<kInputDim>();
}

} // namespace detail

inline StateVector continuous_dynamics(const State& x, const ControlInput& u,
                                       const QuadParams& params) {
    return detail::dynamics(x.to_vector(), u.thrusts, params, Eigen::Vector3d::Zero());
}

/// World-frame acceleration of a body-frame correction applied at attitude q_corr.
inline Eigen::Vector3d correction_world(const std::optional<Correction>& corr,
                                        const Eigen::Quaterniond& q_corr) {
    if (!corr) return Eigen::Vector3d::Zero();
    return rotation_matrix(q_corr) * corr->a_body;
}

/**
 * One classical RK4 step of the nominal dynamics. A correction, when present,
 * is rotated to world by q_corr and added to v̇ as a constant for the whole
 * step, so the velocity gains a_e * dt. The returned quaternion is unit.
 */
inline State rk4_step(const State& x, const ControlInput& u, double dt, const QuadParams& params,
                      const std::optional<Correction>& corr = std::nullopt,
                      const Eigen::Quaterniond& q_corr = Eigen::Quaterniond::Identity()) {
    if (!(dt >= 0.0)) throw InvalidInput("rk4_step: dt must be non-negative");
    if (dt == 0.0) return x;
    return State::from_vector(
        detail::rk4(x.to_vector(), u.thrusts, dt, params, correction_world(corr, q_corr)));
}

struct DiscreteJacobians {
    StateMatrix A;
    InputMatrix B;
};

/// Sensitivities of rk4_step w.r.t. the state and the input. The correction
/// is constant in x, so it only shifts the linearization point.
inline DiscreteJacobians discrete_jacobians(const State& x, const ControlInput& u, double dt,
                                            const QuadParams& params,
                                            const std::optional<Correction>& corr = std::nullopt,
                                            const Eigen::Quaterniond& q_corr =
                                                Eigen::Quaterniond::Identity()) {
    if (!(dt > 0.0)) throw InvalidInput("discrete_jacobians: dt must be positive");
    DiscreteJacobians out;
    detail::rk4_jacobians(x.to_vector(), u.thrusts, dt, params, correction_world(corr, q_corr),
                          out.A, out.B);
    return out;
}

} // namespace gpmpc

#endif // GPMPC_QUAD_MODEL_HPP
