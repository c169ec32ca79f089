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

#ifndef GPMPC_BOX_QP_HPP
#define GPMPC_BOX_QP_HPP

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <vector>

#include "gpmpc/errors.hpp"

namespace gpmpc {

struct BoxQpResult {
    Eigen::VectorXd x;
    int iterations = 0;
    double kkt_residual = 0.0;
    bool converged = false;
};

/// max_i |x_i - clamp(x_i - grad_i, lb_i, ub_i)|; zero exactly at a KKT point.
inline double projected_gradient_norm(const Eigen::VectorXd& x, const Eigen::VectorXd& grad,
                                      const Eigen::VectorXd& lb, const Eigen::VectorXd& ub) {
    return (x - (x - grad).cwiseMax(lb).cwiseMin(ub)).lpNorm<Eigen::Infinity>();
}

/**
 * min 1/2 xᵀHx + gᵀx  s.t. lb <= x <= ub, H symmetric positive definite.
 *
 * Primal active-set method started from the projection of 0. Each iteration
 * solves the equality-constrained problem on the free variables, then either
 * blocks at the first bound hit or releases the bound with the most negative
 * multiplier.
 */
inline BoxQpResult solve_box_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& g,
                                const Eigen::VectorXd& lb, const Eigen::VectorXd& ub,
                                double kkt_tol = 1e-8, int max_iters = 100) {
    const Eigen::Index n = g.size();
    if (H.rows() != n || H.cols() != n || lb.size() != n || ub.size() != n)
        throw InvalidInput("solve_box_qp: dimension mismatch");
    if ((lb.array() > ub.array()).any()) throw InvalidInput("solve_box_qp: lb > ub");

    enum class Bound : signed char { free = 0, lower = -1, upper = 1 };
    std::vector<Bound> state(static_cast<std::size_t>(n), Bound::free);

    BoxQpResult res;
    res.x = Eigen::VectorXd::Zero(n).cwiseMax(lb).cwiseMin(ub);
    Eigen::VectorXd& x = res.x;

    std::vector<Eigen::Index> free_idx;
    free_idx.reserve(static_cast<std::size_t>(n));
    Eigen::MatrixXd hff;
    Eigen::VectorXd rhs;
    Eigen::LLT<Eigen::MatrixXd> llt;

    for (res.iterations = 0; res.iterations < max_iters; ++res.iterations) {
        free_idx.clear();
        for (Eigen::Index i = 0; i < n; ++i)
            if (state[static_cast<std::size_t>(i)] == Bound::free) free_idx.push_back(i);
        const Eigen::Index nf = static_cast<Eigen::Index>(free_idx.size());

        Eigen::VectorXd target = x;
        if (nf > 0) {
            hff.resize(nf, nf);
            rhs.resize(nf);
            for (Eigen::Index a = 0; a < nf; ++a) {
                const Eigen::Index i = free_idx[static_cast<std::size_t>(a)];
                double r = -g(i);
                for (Eigen::Index j = 0; j < n; ++j)
                    if (state[static_cast<std::size_t>(j)] != Bound::free) r -= H(i, j) * x(j);
                rhs(a) = r;
                for (Eigen::Index b = 0; b < nf; ++b) hff(a, b) = H(i, free_idx[static_cast<std::size_t>(b)]);
            }
            llt.compute(hff);
            if (llt.info() != Eigen::Success)
                throw NumericalError("solve_box_qp: reduced Hessian is not positive definite");
            const Eigen::VectorXd xf = llt.solve(rhs);
            for (Eigen::Index a = 0; a < nf; ++a) target(free_idx[static_cast<std::size_t>(a)]) = xf(a);
        }

        // Ratio test along x -> target.
        double alpha = 1.0;
        Eigen::Index blocking = -1;
        Bound blocking_side = Bound::free;
        for (Eigen::Index i : free_idx) {
            const double d = target(i) - x(i);
            if (d < 0.0 && target(i) < lb(i)) {
                const double a = (lb(i) - x(i)) / d;
                if (a < alpha) { alpha = a; blocking = i; blocking_side = Bound::lower; }
            } else if (d > 0.0 && target(i) > ub(i)) {
                const double a = (ub(i) - x(i)) / d;
                if (a < alpha) { alpha = a; blocking = i; blocking_side = Bound::upper; }
            }
        }
        if (blocking >= 0) {
            alpha = std::max(alpha, 0.0);
            for (Eigen::Index i : free_idx) x(i) += alpha * (target(i) - x(i));
            x(blocking) = blocking_side == Bound::lower ? lb(blocking) : ub(blocking);
            state[static_cast<std::size_t>(blocking)] = blocking_side;
            continue;
        }
        x = target.cwiseMax(lb).cwiseMin(ub);

        // Release the worst multiplier sign violation, if any.
        const Eigen::VectorXd grad = H * x + g;
        Eigen::Index release = -1;
        double worst = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const Bound s = state[static_cast<std::size_t>(i)];
            const double violation = s == Bound::lower   ? -grad(i)
                                     : s == Bound::upper ? grad(i)
                                                         : 0.0;
            if (violation > worst) { worst = violation; release = i; }
        }
        if (release < 0 || worst <= 0.5 * kkt_tol) {
            res.kkt_residual = projected_gradient_norm(x, grad, lb, ub);
            res.converged = res.kkt_residual <= kkt_tol;
            if (res.converged) { ++res.iterations; return res; }
            if (release < 0) { ++res.iterations; return res; }
        }
        state[static_cast<std::size_t>(release)] = Bound::free;
    }
    res.kkt_residual = projected_gradient_norm(x, H * x + g, lb, ub);
    res.converged = res.kkt_residual <= kkt_tol;
    return res;
}

} // namespace gpmpc

#endif // GPMPC_BOX_QP_HPP
