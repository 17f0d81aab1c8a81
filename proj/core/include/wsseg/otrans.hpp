#pragma once

#include "wsseg/types.hpp"

namespace wsseg {

struct SinkhornOptions {
    int max_iters = 5000;
    double tol = 1e-6;
    // Log-domain scaling never overflows; the direct form is kept for cross-checks.
    bool log_domain = true;
};

struct TransportPlan {
    Matrix plan;  // N_A x N_B, nonnegative
    int iterations = 0;
    double marginal_residual = 0.0;  // max |row/col sum - target|
    bool converged = false;
};

// Entropic transport maximizing <Q, score> + eps * H(Q) over plans with the given marginals:
// Q = diag(u) exp(score / eps) diag(v).
TransportPlan sinkhorn(const Matrix& score, const Vector& row_marginal, const Vector& col_marginal, double eps,
                       const SinkhornOptions& options = {});

// Same scaling for an arbitrary log-kernel: Q = diag(u) exp(log_kernel) diag(v).
TransportPlan sinkhorn_log_kernel(const Matrix& log_kernel, const Vector& row_marginal, const Vector& col_marginal,
                                  const SinkhornOptions& options = {});

// Diagonal Gaussian prior: d_ij = |i/N - j/M| / sqrt(1/N^2 + 1/M^2) with 1-based i, j,
// T_ij = exp(-d_ij^2 / (2 sigma^2)) / (sigma sqrt(2 pi)).
Matrix order_prior(Index rows, Index cols, double sigma);

// Order-preserving transport between embeddings (dim x N) and prototypes (dim x M), uniform marginals:
// Q = diag(u) exp((V^T P + rho log T) / rho) diag(v), T = order_prior(N, M, sigma).
TransportPlan solve_order_preserving(const Matrix& embeddings, const Matrix& prototypes, double rho, double sigma,
                                     const SinkhornOptions& options = {});

// Same with an explicit strictly positive N x M prior (a constant prior reduces to plain Sinkhorn, eps = rho).
TransportPlan solve_order_preserving(const Matrix& embeddings, const Matrix& prototypes, double rho,
                                     const Matrix& prior, const SinkhornOptions& options = {});

// Objective <Q, score> + eps * H(Q) with H(Q) = -sum Q log Q.
double entropic_objective(const Matrix& plan, const Matrix& score, double eps);

} // namespace wsseg
