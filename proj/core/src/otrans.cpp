#include "wsseg/otrans.hpp"

#include "wsseg/error.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace wsseg {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_marginals(const Matrix& kernel, const Vector& a, const Vector& b, const SinkhornOptions& options) {
    if (kernel.rows() != a.size() || kernel.cols() != b.size()) {
        throw Error(ErrorKind::Structural, "transport marginals do not match the kernel shape");
    }
    if (kernel.rows() < 1 || kernel.cols() < 1) throw Error(ErrorKind::Structural, "empty transport problem");
    if ((a.array() < 0.0).any() || (b.array() < 0.0).any()) {
        throw Error(ErrorKind::Parameter, "transport marginals must be nonnegative");
    }
    if (std::abs(a.sum() - 1.0) > 1e-9 || std::abs(b.sum() - 1.0) > 1e-9) {
        throw Error(ErrorKind::Parameter, "transport marginals must each sum to 1");
    }
    if (!(options.tol > 0.0) || options.max_iters < 1) {
        throw Error(ErrorKind::Parameter, "Sinkhorn needs tol > 0 and max_iters >= 1");
    }
}

double residual_of(const Matrix& q, const Vector& a, const Vector& b) {
    const double rows = (q.rowwise().sum() - a).cwiseAbs().maxCoeff();
    const double cols = (q.colwise().sum().transpose() - b).cwiseAbs().maxCoeff();
    return std::max(rows, cols);
}

Vector safe_log(const Vector& v) {
    Vector out(v.size());
    for (Index i = 0; i < v.size(); ++i) out(i) = v(i) > 0.0 ? std::log(v(i)) : kNegInf;
    return out;
}

TransportPlan log_domain(const Matrix& log_kernel, const Vector& a, const Vector& b, const SinkhornOptions& options) {
    const Index n = log_kernel.rows();
    const Index m = log_kernel.cols();
    const Vector log_a = safe_log(a);
    const Vector log_b = safe_log(b);
    Vector f = Vector::Zero(n);
    Vector g = Vector::Zero(m);
    Vector row_lse(n);

    auto lse_rows = [&]() {
        for (Index i = 0; i < n; ++i) {
            double peak = kNegInf;
            for (Index j = 0; j < m; ++j) peak = std::max(peak, log_kernel(i, j) + g(j));
            if (peak == kNegInf) {
                row_lse(i) = kNegInf;
                continue;
            }
            double s = 0.0;
            for (Index j = 0; j < m; ++j) s += std::exp(log_kernel(i, j) + g(j) - peak);
            row_lse(i) = peak + std::log(s);
        }
    };

    TransportPlan result;
    int it = 0;
    for (; it < options.max_iters; ++it) {
        lse_rows();
        if (it > 0) {
            // Columns are exact after the previous column update; rows carry the residual.
            double resid = 0.0;
            for (Index i = 0; i < n; ++i) {
                const double mass = std::isfinite(f(i)) && std::isfinite(row_lse(i)) ? std::exp(f(i) + row_lse(i)) : 0.0;
                resid = std::max(resid, std::abs(mass - a(i)));
            }
            if (resid <= options.tol) {
                result.converged = true;
                break;
            }
        }
        for (Index i = 0; i < n; ++i) f(i) = std::isfinite(row_lse(i)) ? log_a(i) - row_lse(i) : kNegInf;
        for (Index j = 0; j < m; ++j) {
            double peak = kNegInf;
            for (Index i = 0; i < n; ++i) peak = std::max(peak, log_kernel(i, j) + f(i));
            if (peak == kNegInf) {
                g(j) = kNegInf;
                continue;
            }
            double s = 0.0;
            for (Index i = 0; i < n; ++i) s += std::exp(log_kernel(i, j) + f(i) - peak);
            g(j) = log_b(j) - (peak + std::log(s));
        }
    }
    result.iterations = it;
    result.plan.resize(n, m);
    for (Index j = 0; j < m; ++j)
        for (Index i = 0; i < n; ++i) {
            const double l = log_kernel(i, j) + f(i) + g(j);
            result.plan(i, j) = std::isfinite(l) ? std::exp(l) : 0.0;
        }
    result.marginal_residual = residual_of(result.plan, a, b);
    result.converged = result.marginal_residual <= options.tol;
    return result;
}

TransportPlan direct_domain(const Matrix& log_kernel, const Vector& a, const Vector& b, const SinkhornOptions& options) {
    const Matrix kernel = log_kernel.array().exp().matrix();
    if (!kernel.allFinite()) {
        throw Error(ErrorKind::NumericOverflow, "Sinkhorn kernel overflowed; rescale the score or raise eps");
    }
    if ((kernel.rowwise().sum().array() <= 0.0).any() || (kernel.colwise().sum().array() <= 0.0).any()) {
        throw Error(ErrorKind::NumericOverflow, "Sinkhorn kernel underflowed to an all-zero row or column");
    }
    Vector u = Vector::Ones(kernel.rows());
    Vector v = Vector::Ones(kernel.cols());
    TransportPlan result;
    int it = 0;
    for (; it < options.max_iters; ++it) {
        const Vector kv = kernel * v;
        if (it > 0) {
            const double resid = (u.cwiseProduct(kv) - a).cwiseAbs().maxCoeff();
            if (resid <= options.tol) break;
        }
        u = a.cwiseQuotient(kv);
        v = b.cwiseQuotient(kernel.transpose() * u);
    }
    result.iterations = it;
    result.plan = u.asDiagonal() * kernel * v.asDiagonal();
    if (!result.plan.allFinite()) {
        throw Error(ErrorKind::NumericOverflow, "Sinkhorn scaling vectors overflowed");
    }
    result.marginal_residual = residual_of(result.plan, a, b);
    result.converged = result.marginal_residual <= options.tol;
    return result;
}

} // namespace

TransportPlan sinkhorn_log_kernel(const Matrix& log_kernel, const Vector& row_marginal, const Vector& col_marginal,
                                  const SinkhornOptions& options) {
    check_marginals(log_kernel, row_marginal, col_marginal, options);
    if ((log_kernel.array().isNaN() || log_kernel.array() == std::numeric_limits<double>::infinity()).any()) {
        throw Error(ErrorKind::NumericOverflow, "Sinkhorn log-kernel is not finite");
    }
    return options.log_domain ? log_domain(log_kernel, row_marginal, col_marginal, options)
                              : direct_domain(log_kernel, row_marginal, col_marginal, options);
}

TransportPlan sinkhorn(const Matrix& score, const Vector& row_marginal, const Vector& col_marginal, double eps,
                       const SinkhornOptions& options) {
    if (!(eps > 0.0)) throw Error(ErrorKind::Parameter, "entropy weight must be positive");
    if (!score.allFinite()) throw Error(ErrorKind::Structural, "transport score must be finite");
    return sinkhorn_log_kernel(score / eps, row_marginal, col_marginal, options);
}

Matrix order_prior(Index rows, Index cols, double sigma) {
    if (rows < 1 || cols < 1) throw Error(ErrorKind::Parameter, "order prior needs N, M >= 1");
    if (!(sigma > 0.0)) throw Error(ErrorKind::Parameter, "order prior sigma must be positive");
    const double n = static_cast<double>(rows);
    const double m = static_cast<double>(cols);
    const double norm = std::sqrt(1.0 / (n * n) + 1.0 / (m * m));
    const double peak = 1.0 / (sigma * std::sqrt(2.0 * std::numbers::pi));
    Matrix prior(rows, cols);
    for (Index j = 0; j < cols; ++j) {
        for (Index i = 0; i < rows; ++i) {
            const double d = std::abs(static_cast<double>(i + 1) / n - static_cast<double>(j + 1) / m) / norm;
            prior(i, j) = peak * std::exp(-d * d / (2.0 * sigma * sigma));
        }
    }
    return prior;
}

TransportPlan solve_order_preserving(const Matrix& embeddings, const Matrix& prototypes, double rho,
                                     const Matrix& prior, const SinkhornOptions& options) {
    if (!(rho > 0.0)) throw Error(ErrorKind::Parameter, "rho must be positive");
    if (embeddings.rows() != prototypes.rows()) {
        throw Error(ErrorKind::Structural, "embedding and prototype dimensions differ");
    }
    const Index n = embeddings.cols();
    const Index m = prototypes.cols();
    if (prior.rows() != n || prior.cols() != m) throw Error(ErrorKind::Structural, "prior shape mismatch");
    if (!(prior.array() > 0.0).all()) throw Error(ErrorKind::Parameter, "order prior must be strictly positive");
    const Matrix score = embeddings.transpose() * prototypes;
    if (!score.allFinite()) throw Error(ErrorKind::Structural, "transport score must be finite");
    const Matrix log_kernel = score / rho + prior.array().log().matrix();
    const Vector a = Vector::Constant(n, 1.0 / static_cast<double>(n));
    const Vector b = Vector::Constant(m, 1.0 / static_cast<double>(m));
    return sinkhorn_log_kernel(log_kernel, a, b, options);
}

TransportPlan solve_order_preserving(const Matrix& embeddings, const Matrix& prototypes, double rho, double sigma,
                                     const SinkhornOptions& options) {
    return solve_order_preserving(embeddings, prototypes, rho, order_prior(embeddings.cols(), prototypes.cols(), sigma),
                                  options);
}

double entropic_objective(const Matrix& plan, const Matrix& score, double eps) {
    double value = 0.0;
    for (Index j = 0; j < plan.cols(); ++j)
        for (Index i = 0; i < plan.rows(); ++i) {
            const double q = plan(i, j);
            value += q * score(i, j);
            if (q > 0.0) value -= eps * q * std::log(q);
        }
    return value;
}

} // namespace wsseg
