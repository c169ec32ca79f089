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

#ifndef GPMPC_LEMNISCATE_HPP
#define GPMPC_LEMNISCATE_HPP

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <numbers>

#include "gpmpc/errors.hpp"
#include "gpmpc/nmpc.hpp"
#include "gpmpc/quad_model.hpp"

namespace gpmpc {

struct LemniscateConfig {
    double duration = 25.0;      ///< ramp start to ramp end, s
    double ramp_fraction = 0.25; ///< share of the run spent ramping up (and again down)
    double speed_scale = 1.0;    ///< multiplies the phase rate; 1.0 peaks at 10 m/s
    double amplitude = 5.0;
    double height = 2.5;
};

struct ReferencePoint {
    State state;
    ControlInput input;
    Eigen::Vector3d acceleration = Eigen::Vector3d::Zero();
};

/**
 * Figure-eight x = A cos θ − A, y = A sin θ cos θ, z = h with
 * θ(t) = √2 · speed_scale · φ(t), where the phase rate dφ/dt ramps linearly
 * 0 → 1 → 0. Attitude follows the thrust direction at zero yaw; body rates
 * come from central differences of that attitude.
 */
class LemniscateReference {
public:
    LemniscateReference(LemniscateConfig cfg, QuadParams params)
        : cfg_(cfg), params_(std::move(params)) {
        if (!(cfg_.duration > 0.0) || cfg_.ramp_fraction < 0.0 || cfg_.ramp_fraction > 0.5 ||
            !(cfg_.speed_scale >= 0.0))
            throw InvalidInput("LemniscateReference: invalid configuration");
    }

    const LemniscateConfig& config() const { return cfg_; }

    /// Phase rate ρ(t) in [0, 1].
    double rate(double t) const { return phase_terms(t, segment_of(t)).rate; }

    /// φ(t) = ∫₀ᵗ ρ.
    double phase(double t) const { return phase_terms(t, segment_of(t)).phase; }

    double rate_derivative(double t) const { return phase_terms(t, segment_of(t)).rate_dot; }

    ReferencePoint at(double t) const {
        ReferencePoint r;
        Eigen::Vector3d acc;
        kinematics(t, r.state.p, r.state.v, acc);
        r.acceleration = acc;
        r.state.q = attitude_from(acc);
        r.state.w = body_rates(t, r.state.q);
        const double f = (acc - params_.gravity_world()).norm();
        r.input = ControlInput::uniform(params_.mass * f / 4.0);
        return r;
    }

    /// N+1 states and N inputs at t, t + dt, ..., quaternions sign-aligned.
    ReferenceWindow window(double t, int nodes, double dt) const {
        ReferenceWindow w;
        w.states.reserve(static_cast<std::size_t>(nodes) + 1);
        w.inputs.reserve(static_cast<std::size_t>(nodes));
        for (int k = 0; k <= nodes; ++k) {
            ReferencePoint p = at(t + k * dt);
            if (k > 0) p.state.q = align_hemisphere(p.state.q, w.states.back().q);
            w.states.push_back(p.state);
            if (k < nodes) w.inputs.push_back(p.input);
        }
        return w;
    }

private:
    double ramp() const { return cfg_.ramp_fraction * cfg_.duration; }

    enum class Segment { before, ramp_up, plateau, ramp_down, after };

    struct PhaseTerms {
        double phase = 0.0;
        double rate = 0.0;
        double rate_dot = 0.0;
    };

    /// Right-continuous: a corner time belongs to the segment it starts.
    Segment segment_of(double t) const {
        const double a = ramp(), d = cfg_.duration;
        if (t < 0.0) return Segment::before;
        if (t < a) return Segment::ramp_up;
        if (t < d - a) return Segment::plateau;
        if (t < d) return Segment::ramp_down;
        return Segment::after;
    }

    /// Phase polynomial of `seg`, evaluated (or extrapolated) at t.
    PhaseTerms phase_terms(double t, Segment seg) const {
        const double a = ramp(), d = cfg_.duration;
        switch (seg) {
        case Segment::before: return {};
        case Segment::ramp_up: return {0.5 * t * t / a, t / a, 1.0 / a};
        case Segment::plateau: return {0.5 * a + (t - a), 1.0, 0.0};
        case Segment::ramp_down: {
            const double s = t - (d - a);
            return {0.5 * a + (d - 2.0 * a) + s - 0.5 * s * s / a, 1.0 - s / a, -1.0 / a};
        }
        case Segment::after: return {d - a, 0.0, 0.0};
        }
        return {};
    }

    void kinematics(double t, Eigen::Vector3d& p, Eigen::Vector3d& v, Eigen::Vector3d& a) const {
        kinematics(t, segment_of(t), p, v, a);
    }

    void kinematics(double t, Segment seg, Eigen::Vector3d& p, Eigen::Vector3d& v,
                    Eigen::Vector3d& a) const {
        const double k = std::numbers::sqrt2 * cfg_.speed_scale;
        const PhaseTerms ph = phase_terms(t, seg);
        const double th = k * ph.phase;
        const double thd = k * ph.rate;
        const double thdd = k * ph.rate_dot;
        const double A = cfg_.amplitude;
        const double s = std::sin(th), c = std::cos(th);
        const double s2 = std::sin(2.0 * th), c2 = std::cos(2.0 * th);

        p << A * c - A, 0.5 * A * s2, cfg_.height;
        const Eigen::Vector3d d1(-A * s, A * c2, 0.0);
        const Eigen::Vector3d d2(-A * c, -2.0 * A * s2, 0.0);
        v = d1 * thd;
        a = d2 * thd * thd + d1 * thdd;
    }

    Eigen::Quaterniond attitude_from(const Eigen::Vector3d& acc) const {
        const Eigen::Vector3d zb = (acc - params_.gravity_world()).normalized();
        const Eigen::Vector3d yb = zb.cross(Eigen::Vector3d::UnitX()).normalized();
        const Eigen::Vector3d xb = yb.cross(zb);
        Eigen::Matrix3d R;
        R.col(0) = xb;
        R.col(1) = yb;
        R.col(2) = zb;
        Eigen::Quaterniond q(R);
        q.normalize();
        if (q.w() < 0.0) q.coeffs() *= -1.0;
        return q;
    }

    Eigen::Vector3d body_rates(double t, const Eigen::Quaterniond& q) const {
        // Both samples use t's segment so ramp corners do not produce spikes.
        constexpr double h = 1e-4;
        const Segment seg = segment_of(t);
        Eigen::Vector3d p, v, a;
        kinematics(t + h, seg, p, v, a);
        const Eigen::Quaterniond qp = align_hemisphere(attitude_from(a), q);
        kinematics(t - h, seg, p, v, a);
        const Eigen::Quaterniond qm = align_hemisphere(attitude_from(a), q);
        const Eigen::Quaterniond qdot((qp.w() - qm.w()) / (2 * h), (qp.x() - qm.x()) / (2 * h),
                                      (qp.y() - qm.y()) / (2 * h), (qp.z() - qm.z()) / (2 * h));
        // q̇ = ½ q ⊗ (0, ω)  =>  ω = 2 vec(q̄ ⊗ q̇)
        return 2.0 * (q.conjugate() * qdot).vec();
    }

    LemniscateConfig cfg_;
    QuadParams params_;
};

} // namespace gpmpc

#endif // GPMPC_LEMNISCATE_HPP
