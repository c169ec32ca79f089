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

#ifndef GPMPC_GP_HPP
#define GPMPC_GP_HPP

/**
 * @file
 * @brief One-dimensional GP regression with a squared-exponential kernel.
 *
 * Noise enters only on the Gram diagonal: K = k(z, z) + sigma_n^2 I. Models
 * are immutable after construction and safe to share between threads.
 */

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gpmpc/errors.hpp"
#include "gpmpc/rng.hpp"

namespace gpmpc {

struct GpHyperparams {
    double lengthscale = 1.0;
    double sigma_f2 = 1.0;
    double sigma_n2 = 0.01;

    void validate() const {
        if (!(lengthscale > 0.0 && sigma_f2 > 0.0 && sigma_n2 > 0.0) ||
            !std::isfinite(lengthscale) || !std::isfinite(sigma_f2) || !std::isfinite(sigma_n2))
            throw InvalidInput("GpHyperparams: all hyperparameters must be positive and finite");
    }

    /// (log L, log sigma_f^2, log sigma_n^2)
    Eigen::Vector3d to_log() const {
        return {std::log(lengthscale), std::log(sigma_f2), std::log(sigma_n2)};
    }
    static GpHyperparams from_log(const Eigen::Vector3d& t) {
        return {std::exp(t(0)), std::exp(t(1)), std::exp(t(2))};
    }
};

inline double rbf_kernel(double zi, double zj, const GpHyperparams& h) {
    const double r = (zi - zj) / h.lengthscale;
    return h.sigma_f2 * std::exp(-0.5 * r * r);
}

struct GpPrediction {
    double mean = 0.0;
    double variance = 0.0;
};

namespace detail {

inline constexpr double kJitterStart = 1e-8;
inline constexpr double kPseudoJitterStart = 1e-12; ///< noise-free targets
inline constexpr double kJitterMax = 1e-4;

inline Eigen::MatrixXd signal_gram(const Eigen::VectorXd& z, const GpHyperparams& h) {
    const Eigen::Index n = z.size();
    Eigen::MatrixXd k(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        k(j, j) = h.sigma_f2;
        for (Eigen::Index i = j + 1; i < n; ++i) k(i, j) = k(j, i) = rbf_kernel(z(i), z(j), h);
    }
    return k;
}

struct Factorization {
    Eigen::LLT<Eigen::MatrixXd> llt;
    double jitter = 0.0; ///< absolute value added to the diagonal
};

/// Factor K + (sigma_n^2 + jitter) I, escalating jitter x10 from 1e-8 to 1e-4
/// (relative to sigma_f^2). Noise-free targets drop the sigma_n^2 term and
/// start at 1e-12 so the interpolant stays close to exact.
inline Factorization factor_gram(const Eigen::MatrixXd& signal, const GpHyperparams& h,
                                 bool noisy_targets = true) {
    Factorization f;
    const double noise = noisy_targets ? h.sigma_n2 : 0.0;
    for (double rel = noisy_targets ? kJitterStart : kPseudoJitterStart; rel <= kJitterMax * 1.0001;
         rel *= 10.0) {
        f.jitter = rel * h.sigma_f2;
        Eigen::MatrixXd k = signal;
        k.diagonal().array() += noise + f.jitter;
        f.llt.compute(k);
        if (f.llt.info() == Eigen::Success) return f;
    }
    throw NumericalError("GP Gram matrix not positive definite after jitter escalation (n=" +
                         std::to_string(signal.rows()) + ", L=" + std::to_string(h.lengthscale) +
                         ", sf2=" + std::to_string(h.sigma_f2) +
                         ", sn2=" + std::to_string(h.sigma_n2) + ")");
}

inline Eigen::VectorXd to_vector(std::span<const double> s) {
    return Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
}

} // namespace detail

/// How the targets passed to GpModel::fit are interpreted.
enum class Targets {
    noisy,     ///< observations; sigma_n^2 on the Gram diagonal
    noise_free ///< pseudo-points; the mean interpolates them
};

class GpModel {
public:
    GpModel() = default;

    static GpModel fit(std::span<const double> inputs, std::span<const double> targets,
                       const GpHyperparams& hyper, Targets kind = Targets::noisy) {
        if (inputs.empty()) throw InvalidInput("gp_fit: need at least one training point");
        if (inputs.size() != targets.size())
            throw InvalidInput("gp_fit: inputs and targets differ in length");
        hyper.validate();
        for (std::size_t i = 0; i < inputs.size(); ++i)
            if (!std::isfinite(inputs[i]) || !std::isfinite(targets[i]))
                throw InvalidInput("gp_fit: non-finite training data");

        GpModel m;
        m.inputs_ = detail::to_vector(inputs);
        m.targets_ = detail::to_vector(targets);
        m.hyper_ = hyper;
        m.kind_ = kind;
        auto f = detail::factor_gram(detail::signal_gram(m.inputs_, hyper), hyper,
                                     kind == Targets::noisy);
        m.jitter_ = f.jitter;
        m.alpha_ = f.llt.solve(m.targets_);
        m.chol_ = f.llt.matrixL();
        return m;
    }

    std::size_t size() const { return static_cast<std::size_t>(inputs_.size()); }
    const GpHyperparams& hyper() const { return hyper_; }
    Targets target_kind() const { return kind_; }
    const Eigen::VectorXd& inputs() const { return inputs_; }
    const Eigen::VectorXd& targets() const { return targets_; }
    const Eigen::VectorXd& alpha() const { return alpha_; }
    const Eigen::MatrixXd& chol() const { return chol_; }
    double jitter() const { return jitter_; }

    /// O(n) posterior mean.
    double mean(double z) const {
        double mu = 0.0;
        for (Eigen::Index i = 0; i < inputs_.size(); ++i)
            mu += alpha_(i) * rbf_kernel(inputs_(i), z, hyper_);
        return mu;
    }

    GpPrediction predict(double z) const {
        Eigen::VectorXd ks(inputs_.size());
        for (Eigen::Index i = 0; i < inputs_.size(); ++i) ks(i) = rbf_kernel(inputs_(i), z, hyper_);
        GpPrediction p;
        p.mean = ks.dot(alpha_);
        const Eigen::VectorXd v = chol_.triangularView<Eigen::Lower>().solve(ks);
        p.variance = std::max(0.0, hyper_.sigma_f2 - v.squaredNorm());
        return p;
    }

    /// d mean / dz at z.
    double mean_derivative(double z) const {
        const double inv_l2 = 1.0 / (hyper_.lengthscale * hyper_.lengthscale);
        double d = 0.0;
        for (Eigen::Index i = 0; i < inputs_.size(); ++i)
            d += alpha_(i) * rbf_kernel(inputs_(i), z, hyper_) * (inputs_(i) - z) * inv_l2;
        return d;
    }

    /// Mean and its derivative in one pass (the MPC linearization needs both).
    std::pair<double, double> mean_and_derivative(double z) const {
        const double inv_l2 = 1.0 / (hyper_.lengthscale * hyper_.lengthscale);
        double mu = 0.0, d = 0.0;
        for (Eigen::Index i = 0; i < inputs_.size(); ++i) {
            const double w = alpha_(i) * rbf_kernel(inputs_(i), z, hyper_);
            mu += w;
            d += w * (inputs_(i) - z) * inv_l2;
        }
        return {mu, d};
    }

private:
    Eigen::VectorXd inputs_;
    Eigen::VectorXd targets_;
    GpHyperparams hyper_;
    Targets kind_ = Targets::noisy;
    Eigen::VectorXd alpha_;
    Eigen::MatrixXd chol_;
    double jitter_ = 0.0;
};

inline GpModel gp_fit(std::span<const double> inputs, std::span<const double> targets,
                      const GpHyperparams& hyper) {
    return GpModel::fit(inputs, targets, hyper);
}

inline GpPrediction gp_predict(const GpModel& model, double z) { return model.predict(z); }

inline double gp_mean_derivative(const GpModel& model, double z) {
    return model.mean_derivative(z);
}

// ---------------------------------------------------------------------------
// Marginal likelihood and hyperparameter training

struct LogLikelihood {
    double value = 0.0;
    /// w.r.t. (log L, log sigma_f^2, log sigma_n^2)
    Eigen::Vector3d gradient = Eigen::Vector3d::Zero();
};

namespace detail {

inline LogLikelihood lml(const Eigen::VectorXd& z, const Eigen::VectorXd& y,
                         const GpHyperparams& h, bool with_gradient) {
    const Eigen::Index n = z.size();
    const Eigen::MatrixXd ks = signal_gram(z, h);
    const Factorization f = factor_gram(ks, h);
    const Eigen::VectorXd alpha = f.llt.solve(y);
    const Eigen::MatrixXd& L = f.llt.matrixLLT();
    const double logdet = 2.0 * L.diagonal().array().log().sum();

    LogLikelihood out;
    out.value = -0.5 * y.dot(alpha) - 0.5 * logdet -
                0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
    if (!with_gradient) return out;

    // 1/2 tr((a aᵀ - K⁻¹) dK)
    Eigen::MatrixXd w = -f.llt.solve(Eigen::MatrixXd::Identity(n, n));
    w.noalias() += alpha * alpha.transpose();
    const double inv_l2 = 1.0 / (h.lengthscale * h.lengthscale);
    double g_l = 0.0, g_f = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const double d = z(i) - z(j);
            const double wk = w(i, j) * ks(i, j);
            g_f += wk;
            g_l += wk * d * d * inv_l2;
        }
    }
    const double tr = w.trace();
    // jitter scales with sigma_f^2, so it belongs to that derivative
    out.gradient << 0.5 * g_l, 0.5 * (g_f + f.jitter * tr), 0.5 * h.sigma_n2 * tr;
    return out;
}

} // namespace detail

/// log p(y | z, hyper) = -1/2 yᵀK⁻¹y - 1/2 log|K| - n/2 log 2π, with its gradient.
inline LogLikelihood log_marginal_likelihood(std::span<const double> inputs,
                                             std::span<const double> targets,
                                             const GpHyperparams& hyper) {
    if (inputs.empty() || inputs.size() != targets.size())
        throw InvalidInput("log_marginal_likelihood: need matching non-empty data");
    hyper.validate();
    return detail::lml(detail::to_vector(inputs), detail::to_vector(targets), hyper, true);
}

struct GpTrainingConfig {
    int restarts = 5;
    int max_iters = 200;
    double grad_tol = 1e-6;
    std::uint64_t seed = 0;
    double restart_spread = 1.0; ///< std-dev of log-space restart perturbations
    double log_bound = 25.0;     ///< |log hyperparameter| is kept below this
};

struct GpTrainingResult {
    GpHyperparams hyper;
    double log_likelihood = -std::numeric_limits<double>::infinity();
    int best_restart = -1;
};

/// L = std(inputs), sigma_f = std(targets), sigma_n = 0.1 std(targets).
inline GpHyperparams default_initial_hyperparams(std::span<const double> inputs,
                                                 std::span<const double> targets) {
    auto stddev = [](std::span<const double> s) {
        const Eigen::VectorXd v = detail::to_vector(s);
        const double mean = v.mean();
        return std::sqrt((v.array() - mean).square().sum() / static_cast<double>(v.size()));
    };
    const double sz = std::max(stddev(inputs), 1e-3);
    const double sy = std::max(stddev(targets), 1e-6);
    return {sz, sy * sy, 0.01 * sy * sy};
}

namespace detail {

/// Quasi-Newton (BFGS) ascent on the log marginal likelihood in log space.
inline GpTrainingResult ascend(const Eigen::VectorXd& z, const Eigen::VectorXd& y,
                               Eigen::Vector3d theta, const GpTrainingConfig& cfg) {
    auto project = [&](Eigen::Vector3d t) {
        return t.cwiseMax(-cfg.log_bound).cwiseMin(cfg.log_bound).eval();
    };
    auto eval = [&](const Eigen::Vector3d& t, bool grad) -> LogLikelihood {
        try {
            LogLikelihood r = lml(z, y, GpHyperparams::from_log(t), grad);
            if (!std::isfinite(r.value) || (grad && !r.gradient.allFinite()))
                r.value = -std::numeric_limits<double>::infinity();
            return r;
        } catch (const NumericalError&) {
            return {-std::numeric_limits<double>::infinity(), Eigen::Vector3d::Zero()};
        }
    };

    theta = project(theta);
    LogLikelihood cur = eval(theta, true);
    GpTrainingResult res;
    if (!std::isfinite(cur.value)) return res;

    Eigen::Matrix3d hinv = Eigen::Matrix3d::Identity();
    for (int it = 0; it < cfg.max_iters; ++it) {
        if (cur.gradient.lpNorm<Eigen::Infinity>() < cfg.grad_tol) break;
        Eigen::Vector3d dir = hinv * cur.gradient;
        if (dir.dot(cur.gradient) <= 0.0) {
            hinv.setIdentity();
            dir = cur.gradient;
        }
        const double longest = dir.lpNorm<Eigen::Infinity>();
        if (longest > 2.0) dir *= 2.0 / longest;

        double step = 1.0;
        bool accepted = false;
        Eigen::Vector3d trial;
        LogLikelihood next;
        for (int ls = 0; ls < 40; ++ls, step *= 0.5) {
            trial = project(theta + step * dir);
            next = eval(trial, false);
            if (next.value >= cur.value + 1e-4 * (trial - theta).dot(cur.gradient)) {
                accepted = true;
                break;
            }
        }
        if (!accepted) break;
        next = eval(trial, true);
        if (!std::isfinite(next.value)) break;

        const Eigen::Vector3d s = trial - theta;
        // minimizing -lml: the gradient change is -(g_new - g_old)
        const Eigen::Vector3d yk = cur.gradient - next.gradient;
        const double sy = s.dot(yk);
        if (sy > 1e-12) {
            const double rho = 1.0 / sy;
            const Eigen::Matrix3d I = Eigen::Matrix3d::Identity();
            hinv = (I - rho * s * yk.transpose()) * hinv * (I - rho * yk * s.transpose()) +
                   rho * s * s.transpose();
        }
        const bool stalled = std::abs(next.value - cur.value) <= 1e-12 * (1.0 + std::abs(cur.value));
        theta = trial;
        cur = next;
        if (stalled) break;
    }
    res.hyper = GpHyperparams::from_log(theta);
    res.log_likelihood = cur.value;
    return res;
}

} // namespace detail

/**
 * Maximize the marginal likelihood from `init` plus `restarts - 1` perturbed
 * starts. Restart 0 is `init` itself, so the result is never worse than init.
 * Ties go to the lowest restart index.
 */
inline GpTrainingResult train_hyperparams_detailed(std::span<const double> inputs,
                                                   std::span<const double> targets,
                                                   const GpHyperparams& init,
                                                   const GpTrainingConfig& cfg = {}) {
    if (inputs.size() < 2 || inputs.size() != targets.size())
        throw InvalidInput("train_hyperparams: need at least two matching samples");
    init.validate();
    const Eigen::VectorXd z = detail::to_vector(inputs);
    const Eigen::VectorXd y = detail::to_vector(targets);

    SplitMix64 rng(cfg.seed);
    std::vector<Eigen::Vector3d> starts;
    starts.push_back(init.to_log());
    for (int r = 1; r < std::max(cfg.restarts, 1); ++r) {
        Eigen::Vector3d t = init.to_log();
        for (int k = 0; k < 3; ++k) t(k) += rng.normal(cfg.restart_spread);
        starts.push_back(t);
    }

    GpTrainingResult best;
    for (std::size_t r = 0; r < starts.size(); ++r) {
        GpTrainingResult res = detail::ascend(z, y, starts[r], cfg);
        if (res.log_likelihood > best.log_likelihood) {
            best = res;
            best.best_restart = static_cast<int>(r);
        }
    }
    if (best.best_restart < 0)
        throw TrainingError("train_hyperparams: every restart failed to evaluate");
    return best;
}

inline GpHyperparams train_hyperparams(std::span<const double> inputs,
                                       std::span<const double> targets, const GpHyperparams& init,
                                       const GpTrainingConfig& cfg = {}) {
    return train_hyperparams_detailed(inputs, targets, init, cfg).hyper;
}

/**
 * Effective-prior distillation: the dense posterior means at the inducing
 * inputs become noise-free targets of an m-point model with the dense
 * hyperparameters. With m = n at the training inputs the sparse mean equals
 * the dense mean. Queries then cost O(m).
 */
inline GpModel sparsify(const GpModel& dense, std::span<const double> inducing_inputs) {
    if (inducing_inputs.empty()) throw InvalidInput("sparsify: need at least one inducing input");
    std::vector<double> targets(inducing_inputs.size());
    std::transform(inducing_inputs.begin(), inducing_inputs.end(), targets.begin(),
                   [&](double z) { return dense.mean(z); });
    return GpModel::fit(inducing_inputs, targets, dense.hyper(), Targets::noise_free);
}

// ---------------------------------------------------------------------------
// Per-axis residual ensemble

struct ResidualPrediction {
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    Eigen::Vector3d variance = Eigen::Vector3d::Zero();
};

/// Three independent 1-D models: body velocity component i -> acceleration error i.
struct ResidualModel {
    std::array<GpModel, 3> axes;

    ResidualPrediction predict(const Eigen::Vector3d& v_body) const {
        ResidualPrediction out;
        for (int i = 0; i < 3; ++i) {
            const GpPrediction p = axes[static_cast<std::size_t>(i)].predict(v_body(i));
            out.mean(i) = p.mean;
            out.variance(i) = p.variance;
        }
        return out;
    }

    Eigen::Vector3d mean(const Eigen::Vector3d& v_body) const {
        return {axes[0].mean(v_body.x()), axes[1].mean(v_body.y()), axes[2].mean(v_body.z())};
    }
};

inline ResidualPrediction residual_predict(const ResidualModel& model,
                                           const Eigen::Vector3d& v_body) {
    return model.predict(v_body);
}

} // namespace gpmpc

#endif // GPMPC_GP_HPP
