// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "deformtrack/correspond.hpp"
#include "deformtrack/grid.hpp"
#include "deformtrack/shot.hpp"

#include <Eigen/Core>

#include <array>
#include <functional>
#include <vector>

namespace deformtrack {

/// Term weights of the total energy
///   E = omega_p E_p2p + omega_s E_p2s + omega_f E_feature + omega_r E_reg.
/// omega_r <= 0 selects per-solve auto-scaling: omega_r_scale times the
/// square root of the data-to-gridpoint ratio, which keeps the assembled
/// system's regularization strength independent of grid and mesh resolution.
struct EnergyWeights {
    double omega_p = 1.0;
    double omega_s = 1.0;
    double omega_f = 0.5;
    double omega_r = 0.0;
    double omega_r_scale = 1.0;

    void validate() const {
        require(omega_p >= 0.0 && omega_s >= 0.0 && omega_f >= 0.0,
                "weights: negative data weight");
        require(omega_p > 0.0 || omega_s > 0.0 || omega_f > 0.0,
                "weights: at least one data term required");
        require(omega_r > 0.0 || omega_r_scale > 0.0, "weights: regularizer must be positive");
    }

    /// Weights with omega_r resolved for a concrete correspondence count.
    EnergyWeights resolved(size_t data_count, int grid_size) const;
};

struct SolverConfig {
    int flip_flop_iters = 10;
    int gn_iters_per_flip = 2;
    int pcg_max_iters = 200;
    double pcg_rel_tol = 1e-5;
    double step_damping = 1.0;     // halved on energy increase, floor 1/16
    double convergence_eps = 1e-5; // meters, on the max per-gridpoint step
    bool research_correspondences = true;

    void validate() const {
        require(flip_flop_iters > 0 && gn_iters_per_flip > 0 && pcg_max_iters > 0,
                "solver config: iteration counts must be positive");
        require(pcg_rel_tol > 0.0 && pcg_rel_tol < 1.0, "solver config: bad pcg tolerance");
        require(step_damping > 0.0 && step_damping <= 1.0, "solver config: bad damping");
        require(convergence_eps > 0.0, "solver config: bad convergence eps");
    }
};

// ---------------------------------------------------------------------------
// Sparse containers

/// Scalar CSR matrix; used for the grid Laplacian over gridpoints.
struct ScalarCsr {
    int n = 0;
    std::vector<int> row_ptr;
    std::vector<int> cols;
    std::vector<double> vals;

    /// y = A x applied independently per axis of a packed 3n vector.
    void apply_blockwise(const Eigen::VectorXd& x, Eigen::VectorXd& y) const;

    ScalarCsr multiply_transpose_self() const;  // A^T A (A symmetric here)
};

/// Symmetric block-sparse matrix with 3x3 blocks over gridpoints.
class BlockSparseMatrix {
public:
    BlockSparseMatrix() = default;
    /// Pattern rows must be sorted; blocks start at zero.
    BlockSparseMatrix(int n, std::vector<std::vector<int>> pattern);

    int size() const { return n_; }
    Mat3* find(int i, int j);          // nullptr if outside the pattern
    const Mat3* find(int i, int j) const;
    void add(int i, int j, const Mat3& m);

    void multiply(const Eigen::VectorXd& x, Eigen::VectorXd& y) const;
    Eigen::VectorXd diagonal() const;  // scalar diagonal, length 3n

    // iteration support for tests/densification
    const std::vector<int>& row_ptr() const { return row_ptr_; }
    const std::vector<int>& cols() const { return cols_; }
    const std::vector<Mat3>& blocks() const { return blocks_; }

private:
    int n_ = 0;
    std::vector<int> row_ptr_;
    std::vector<int> cols_;
    std::vector<Mat3> blocks_;
};

/// Gauss-Newton normal equations over the 3|G| translation unknowns.
struct SparseNormalSystem {
    BlockSparseMatrix jtj;
    Eigen::VectorXd jtr;  // right-hand side J^T r (descent side)
};

// ---------------------------------------------------------------------------
// Residuals and Jacobians

/// Point residual V(p_hat) - p_observed (model minus observation).
Vec3 residual_p2p(const Correspondence& c, const StaticGrid& grid, const DeformationState& state);

/// Signed distance along the observed normal, n_obs . (V(p_hat) - p_observed).
double residual_p2s(const Correspondence& c, const StaticGrid& grid,
                    const DeformationState& state);

Vec3 residual_feature(const FeatureCorrespondence& f, const StaticGrid& grid,
                      const DeformationState& state);

/// Rows of the weighted-residual Jacobian restricted to the 8 anchored
/// gridpoints: d(scale * w * r)/dt_k = scale * w * alpha_k * R for vector
/// residuals, and its projection onto the observed normal for the plane
/// residual.
struct PointJacobianRows {
    std::array<int, 8> gridpoints;
    std::array<Mat3, 8> blocks;
};
struct PlaneJacobianRow {
    std::array<int, 8> gridpoints;
    std::array<Eigen::RowVector3d, 8> blocks;
};

PointJacobianRows jacobian_p2p(const Correspondence& c, const StaticGrid& grid,
                               const DeformationState& state, double omega_p);
PlaneJacobianRow jacobian_p2s(const Correspondence& c, const StaticGrid& grid,
                              const DeformationState& state, double omega_s);
PointJacobianRows jacobian_feature(const FeatureCorrespondence& f, const StaticGrid& grid,
                                   const DeformationState& state, double omega_f);

// ---------------------------------------------------------------------------
// Grid regularizer

/// Sum over gridpoints and their lattice neighbors of
/// ||(t_i - t_j) - R_i (that_i - that_j)||^2. `subset`, when non-empty,
/// restricts the outer sum to those gridpoints.
double arap_energy(const DeformationState& state, const StaticGrid& grid,
                   const std::vector<int>& subset = {});

struct RotationFit {
    Mat3 rotation = Mat3::Identity();
    bool degenerate = false;
};

/// Best rotation for gridpoint i given the current translations, via SVD of
/// the neighborhood covariance with determinant correction.
RotationFit fit_rotation(int i, const DeformationState& state, const StaticGrid& grid);

/// Graph Laplacian of the lattice 6-neighborhood: diagonal |N_i|,
/// off-diagonal -1 per edge.
ScalarCsr build_laplacian(const StaticGrid& grid);

/// Right-hand side of the regularizer's translation subproblem L t = b:
/// b_i = sum_j ((R_i + R_j)/2)(that_i - that_j).
std::vector<Vec3> arap_rhs(const DeformationState& state, const StaticGrid& grid);

// ---------------------------------------------------------------------------
// Normal equations and solve

struct EnergyBreakdown {
    double p2p = 0.0;      // sum w_c ||r||^2
    double p2s = 0.0;      // sum w_c d^2
    double feature = 0.0;  // sum ||r_f||^2
    double arap = 0.0;

    double total(const EnergyWeights& w) const {
        return w.omega_p * p2p + w.omega_s * p2s + w.omega_f * feature + w.omega_r * arap;
    }
};

EnergyBreakdown energy_breakdown(const std::vector<Correspondence>& corrs,
                                 const std::vector<FeatureCorrespondence>& feats,
                                 const StaticGrid& grid, const DeformationState& state);

/// Sums the Gauss-Newton contributions of all data terms plus the
/// regularizer's L^T L and L^T r_reg (r_reg = b - L t at the current state),
/// with the omega scalings applied to residuals and Jacobians. `weights` must
/// carry a resolved omega_r.
SparseNormalSystem assemble(const std::vector<Correspondence>& corrs,
                            const std::vector<FeatureCorrespondence>& feats,
                            const DeformationState& state, const StaticGrid& grid,
                            const EnergyWeights& weights, const ScalarCsr& laplacian);

/// Jacobi-preconditioned conjugate gradient on a caller-supplied operator.
/// Stops at the relative-residual tolerance or the iteration cap.
Eigen::VectorXd preconditioned_cg(
    const std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&)>& apply,
    const Eigen::VectorXd& rhs, const Eigen::VectorXd& diagonal, int max_iters, double rel_tol,
    int* iterations = nullptr);

/// Solves jtj dx = jtr. Throws on a non-positive diagonal entry (a gridpoint
/// with neither data nor regularization) or non-finite values.
Eigen::VectorXd pcg_solve(const SparseNormalSystem& system, const SolverConfig& config,
                          int* iterations = nullptr);

// ---------------------------------------------------------------------------
// Flip-flop driver

struct CorrespondenceBatch {
    std::vector<Correspondence> projective;
    std::vector<FeatureCorrespondence> features;

    size_t total() const { return projective.size() + features.size(); }
};

using CorrespondenceProvider = std::function<CorrespondenceBatch(const DeformationState&)>;

struct IterationRecord {
    int flip = 0;
    int gn_step = 0;
    EnergyBreakdown energy;
    double energy_total = 0.0;
    double max_step = 0.0;  // applied max per-gridpoint step (m)
    int pcg_iterations = 0;
    size_t projective_count = 0;
    size_t feature_count = 0;
    double damping = 1.0;
};

struct SolveResult {
    DeformationState state;
    std::vector<IterationRecord> history;
    bool converged = false;
};

/// Alternates closed-form rotation fits over all gridpoints with damped
/// Gauss-Newton steps on the translations (global transform held fixed).
/// Correspondences are re-queried from `provider` at the current state before
/// each Gauss-Newton step when configured. A step that would increase the
/// recorded total energy halves the persistent damping factor (floor 1/16)
/// and is re-tried; at the floor the step is skipped.
SolveResult flip_flop_solve(const CorrespondenceProvider& provider,
                            const DeformationState& initial, const StaticGrid& grid,
                            const EnergyWeights& weights, const SolverConfig& config);

}  // namespace deformtrack
