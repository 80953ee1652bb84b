// SPDX-License-Identifier: Apache-2.0

#include "deformtrack/solver.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace deformtrack {

EnergyWeights EnergyWeights::resolved(size_t data_count, int grid_size) const {
    validate();
    EnergyWeights eff = *this;
    if (eff.omega_r <= 0.0) {
        // omega enters the normal equations squared, so the square root of
        // the data-to-gridpoint ratio keeps the assembled system's
        // regularization strength independent of either resolution
        double count = std::max<double>(1.0, static_cast<double>(data_count));
        eff.omega_r = eff.omega_r_scale * std::sqrt(count / std::max(1, grid_size));
    }
    return eff;
}

// ---------------------------------------------------------------------------
// Sparse containers

void ScalarCsr::apply_blockwise(const Eigen::VectorXd& x, Eigen::VectorXd& y) const {
    y.setZero(3 * n);
    for (int i = 0; i < n; ++i) {
        Vec3 acc = Vec3::Zero();
        for (int k = row_ptr[i]; k < row_ptr[i + 1]; ++k)
            acc += vals[k] * x.segment<3>(3 * cols[k]);
        y.segment<3>(3 * i) = acc;
    }
}

ScalarCsr ScalarCsr::multiply_transpose_self() const {
    // A is symmetric (Laplacian), so A^T A = A * A.
    ScalarCsr out;
    out.n = n;
    out.row_ptr.assign(n + 1, 0);
    std::vector<double> dense(n, 0.0);
    std::vector<int> touched;
    for (int i = 0; i < n; ++i) {
        touched.clear();
        for (int k = row_ptr[i]; k < row_ptr[i + 1]; ++k) {
            int m = cols[k];
            double v = vals[k];
            for (int l = row_ptr[m]; l < row_ptr[m + 1]; ++l) {
                int j = cols[l];
                if (dense[j] == 0.0) touched.push_back(j);
                dense[j] += v * vals[l];
            }
        }
        std::sort(touched.begin(), touched.end());
        for (int j : touched) {
            out.cols.push_back(j);
            out.vals.push_back(dense[j]);
            dense[j] = 0.0;
        }
        out.row_ptr[i + 1] = static_cast<int>(out.cols.size());
    }
    return out;
}

BlockSparseMatrix::BlockSparseMatrix(int n, std::vector<std::vector<int>> pattern) : n_(n) {
    row_ptr_.assign(n + 1, 0);
    for (int i = 0; i < n; ++i) row_ptr_[i + 1] = row_ptr_[i] + static_cast<int>(pattern[i].size());
    cols_.reserve(row_ptr_[n]);
    for (int i = 0; i < n; ++i)
        cols_.insert(cols_.end(), pattern[i].begin(), pattern[i].end());
    blocks_.assign(row_ptr_[n], Mat3::Zero());
}

Mat3* BlockSparseMatrix::find(int i, int j) {
    auto begin = cols_.begin() + row_ptr_[i];
    auto end = cols_.begin() + row_ptr_[i + 1];
    auto it = std::lower_bound(begin, end, j);
    if (it == end || *it != j) return nullptr;
    return &blocks_[it - cols_.begin()];
}

const Mat3* BlockSparseMatrix::find(int i, int j) const {
    return const_cast<BlockSparseMatrix*>(this)->find(i, j);
}

void BlockSparseMatrix::add(int i, int j, const Mat3& m) {
    Mat3* b = find(i, j);
    require(b != nullptr, "block sparse: entry outside pattern");
    *b += m;
}

void BlockSparseMatrix::multiply(const Eigen::VectorXd& x, Eigen::VectorXd& y) const {
    y.resize(3 * n_);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n_; ++i) {
        Vec3 acc = Vec3::Zero();
        for (int k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k)
            acc += blocks_[k] * x.segment<3>(3 * cols_[k]);
        y.segment<3>(3 * i) = acc;
    }
}

Eigen::VectorXd BlockSparseMatrix::diagonal() const {
    Eigen::VectorXd d(3 * n_);
    for (int i = 0; i < n_; ++i) {
        const Mat3* b = find(i, i);
        d.segment<3>(3 * i) = b ? Vec3(b->diagonal()) : Vec3::Zero();
    }
    return d;
}

// ---------------------------------------------------------------------------
// Residuals and Jacobians

Vec3 residual_p2p(const Correspondence& c, const StaticGrid& grid,
                  const DeformationState& state) {
    return deform_point(c.anchor, grid, state) - c.observed_point;
}

double residual_p2s(const Correspondence& c, const StaticGrid& grid,
                    const DeformationState& state) {
    return c.observed_normal.dot(deform_point(c.anchor, grid, state) - c.observed_point);
}

Vec3 residual_feature(const FeatureCorrespondence& f, const StaticGrid& grid,
                      const DeformationState& state) {
    return deform_point(f.anchor, grid, state) - f.observed_point;
}

PointJacobianRows jacobian_p2p(const Correspondence& c, const StaticGrid& grid,
                               const DeformationState& state, double omega_p) {
    PointJacobianRows rows;
    rows.gridpoints = c.anchor.corner_indices(grid);
    double s = omega_p * c.weight;
    for (int k = 0; k < 8; ++k)
        rows.blocks[k] = s * c.anchor.weights[k] * state.global.rotation;
    return rows;
}

PlaneJacobianRow jacobian_p2s(const Correspondence& c, const StaticGrid& grid,
                              const DeformationState& state, double omega_s) {
    PlaneJacobianRow row;
    row.gridpoints = c.anchor.corner_indices(grid);
    double s = omega_s * c.weight;
    Eigen::RowVector3d ntr = c.observed_normal.transpose() * state.global.rotation;
    for (int k = 0; k < 8; ++k) row.blocks[k] = s * c.anchor.weights[k] * ntr;
    return row;
}

PointJacobianRows jacobian_feature(const FeatureCorrespondence& f, const StaticGrid& grid,
                                   const DeformationState& state, double omega_f) {
    PointJacobianRows rows;
    rows.gridpoints = f.anchor.corner_indices(grid);
    for (int k = 0; k < 8; ++k)
        rows.blocks[k] = omega_f * f.anchor.weights[k] * state.global.rotation;
    return rows;
}

// ---------------------------------------------------------------------------
// Grid regularizer

double arap_energy(const DeformationState& state, const StaticGrid& grid,
                   const std::vector<int>& subset) {
    double e = 0.0;
    auto accumulate = [&](int i) {
        for (int j : grid_neighborhood(i, grid)) {
            Vec3 def = state.translations[i] - state.translations[j];
            Vec3 rest = grid.position(i) - grid.position(j);
            e += (def - state.rotations[i] * rest).squaredNorm();
        }
    };
    if (subset.empty())
        for (int i = 0; i < grid.size(); ++i) accumulate(i);
    else
        for (int i : subset) accumulate(i);
    return e;
}

RotationFit fit_rotation(int i, const DeformationState& state, const StaticGrid& grid) {
    auto neighbors = grid_neighborhood(i, grid);
    require(!neighbors.empty(), "fit_rotation: empty neighborhood");

    Mat3 cov = Mat3::Zero();
    for (int j : neighbors) {
        Vec3 rest = grid.position(i) - grid.position(j);
        Vec3 def = state.translations[i] - state.translations[j];
        cov += rest * def.transpose();
    }

    RotationFit fit;
    if (cov.norm() < 1e-15) {
        fit.degenerate = true;
        return fit;
    }
    Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 u = svd.matrixU();
    Mat3 v = svd.matrixV();
    Mat3 r = v * u.transpose();
    if (r.determinant() < 0.0) {
        v.col(2) *= -1.0;  // flip the weakest direction
        r = v * u.transpose();
    }
    fit.rotation = r;
    return fit;
}

ScalarCsr build_laplacian(const StaticGrid& grid) {
    ScalarCsr l;
    l.n = grid.size();
    l.row_ptr.assign(l.n + 1, 0);
    for (int i = 0; i < l.n; ++i) {
        auto nbrs = grid_neighborhood(i, grid);
        std::vector<std::pair<int, double>> row;
        row.reserve(nbrs.size() + 1);
        for (int j : nbrs) row.emplace_back(j, -1.0);
        row.emplace_back(i, static_cast<double>(nbrs.size()));
        std::sort(row.begin(), row.end());
        for (auto& [j, v] : row) {
            l.cols.push_back(j);
            l.vals.push_back(v);
        }
        l.row_ptr[i + 1] = static_cast<int>(l.cols.size());
    }
    return l;
}

std::vector<Vec3> arap_rhs(const DeformationState& state, const StaticGrid& grid) {
    std::vector<Vec3> b(grid.size(), Vec3::Zero());
#pragma omp parallel for schedule(static)
    for (int i = 0; i < grid.size(); ++i) {
        Vec3 acc = Vec3::Zero();
        for (int j : grid_neighborhood(i, grid)) {
            Mat3 mid = 0.5 * (state.rotations[i] + state.rotations[j]);
            acc += mid * (grid.position(i) - grid.position(j));
        }
        b[i] = acc;
    }
    return b;
}

// ---------------------------------------------------------------------------
// Energy and normal equations

EnergyBreakdown energy_breakdown(const std::vector<Correspondence>& corrs,
                                 const std::vector<FeatureCorrespondence>& feats,
                                 const StaticGrid& grid, const DeformationState& state) {
    EnergyBreakdown e;
    double p2p = 0.0, p2s = 0.0, feat = 0.0;
#pragma omp parallel for schedule(static) reduction(+ : p2p, p2s)
    for (int c = 0; c < static_cast<int>(corrs.size()); ++c) {
        Vec3 r = residual_p2p(corrs[c], grid, state);
        double d = corrs[c].observed_normal.dot(r);
        p2p += corrs[c].weight * r.squaredNorm();
        p2s += corrs[c].weight * d * d;
    }
    for (const auto& f : feats) feat += residual_feature(f, grid, state).squaredNorm();
    e.p2p = p2p;
    e.p2s = p2s;
    e.feature = feat;
    e.arap = arap_energy(state, grid);
    return e;
}

namespace {

// Gridpoint pattern of the normal equations: every pair within one cell
// (Chebyshev distance 1) plus the L^T L stencil (Manhattan distance 2).
std::vector<std::vector<int>> normal_pattern(const StaticGrid& grid) {
    std::vector<std::array<int, 3>> offsets;
    for (int dz = -2; dz <= 2; ++dz)
        for (int dy = -2; dy <= 2; ++dy)
            for (int dx = -2; dx <= 2; ++dx) {
                int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
                int chebyshev = std::max({std::abs(dx), std::abs(dy), std::abs(dz)});
                if (manhattan <= 2 || chebyshev <= 1) offsets.push_back({dx, dy, dz});
            }

    std::vector<std::vector<int>> pattern(grid.size());
#pragma omp parallel for schedule(static)
    for (int i = 0; i < grid.size(); ++i) {
        auto c = grid.coords(i);
        auto& row = pattern[i];
        row.reserve(offsets.size());
        for (const auto& o : offsets) {
            int x = c[0] + o[0], y = c[1] + o[1], z = c[2] + o[2];
            if (x < 0 || x >= grid.nx || y < 0 || y >= grid.ny || z < 0 || z >= grid.nz) continue;
            row.push_back(grid.linear_index(x, y, z));
        }
        std::sort(row.begin(), row.end());
    }
    return pattern;
}

// Per-cell accumulator: the 8x8 block structure of one grid cell.
struct CellAccumulator {
    std::array<int, 8> gridpoints{};
    Mat3 blocks[8][8];
    Vec3 rhs[8];
    bool used = false;

    void init(const std::array<int, 8>& idx) {
        gridpoints = idx;
        for (auto& row : blocks)
            for (auto& b : row) b.setZero();
        for (auto& r : rhs) r.setZero();
        used = true;
    }
};

}  // namespace

SparseNormalSystem assemble(const std::vector<Correspondence>& corrs,
                            const std::vector<FeatureCorrespondence>& feats,
                            const DeformationState& state, const StaticGrid& grid,
                            const EnergyWeights& weights, const ScalarCsr& laplacian) {
    require(weights.omega_r > 0.0 || !corrs.empty() || !feats.empty(),
            "assemble: nothing to assemble");
    require(laplacian.n == grid.size(), "assemble: laplacian size mismatch");

    const int n = grid.size();
    SparseNormalSystem sys;
    sys.jtj = BlockSparseMatrix(n, normal_pattern(grid));
    sys.jtr.setZero(3 * n);

    // --- data terms, accumulated per grid cell in input order ---------------
    auto cell_id = [&](const TrilinearAnchor& a) {
        return a.cell[0] + (grid.nx - 1) * (a.cell[1] + (grid.ny - 1) * a.cell[2]);
    };

    const int num_cells = std::max(1, (grid.nx - 1) * (grid.ny - 1) * (grid.nz - 1));
    std::vector<std::vector<int>> cell_corrs(num_cells), cell_feats(num_cells);
    for (int c = 0; c < static_cast<int>(corrs.size()); ++c)
        cell_corrs[cell_id(corrs[c].anchor)].push_back(c);
    for (int f = 0; f < static_cast<int>(feats.size()); ++f)
        cell_feats[cell_id(feats[f].anchor)].push_back(f);

    std::vector<int> active;
    for (int cell = 0; cell < num_cells; ++cell)
        if (!cell_corrs[cell].empty() || !cell_feats[cell].empty()) active.push_back(cell);

    std::vector<CellAccumulator> acc(active.size());
    const Mat3& rot = state.global.rotation;

#pragma omp parallel for schedule(dynamic, 4)
    for (int a = 0; a < static_cast<int>(active.size()); ++a) {
        int cell = active[a];
        CellAccumulator& ca = acc[a];
        for (int ci : cell_corrs[cell]) {
            const Correspondence& c = corrs[ci];
            if (!ca.used) ca.init(c.anchor.corner_indices(grid));
            const auto& alpha = c.anchor.weights;

            double w2 = c.weight * c.weight;
            double sp = weights.omega_p * weights.omega_p * w2;
            double ss = weights.omega_s * weights.omega_s * w2;

            Vec3 r = residual_p2p(c, grid, state);
            double d = c.observed_normal.dot(r);
            Vec3 rot_r = rot.transpose() * r;                   // R^T r
            Vec3 m = rot.transpose() * c.observed_normal;       // R^T n
            Mat3 mmt = m * m.transpose();

            for (int k = 0; k < 8; ++k) {
                for (int l = 0; l < 8; ++l) {
                    double al = alpha[k] * alpha[l];
                    Mat3& b = ca.blocks[k][l];
                    b += (sp * al) * Mat3::Identity();
                    b += (ss * al) * mmt;
                }
                ca.rhs[k] += -(sp * alpha[k]) * rot_r - (ss * alpha[k] * d) * m;
            }
        }
        for (int fi : cell_feats[cell]) {
            const FeatureCorrespondence& f = feats[fi];
            if (!ca.used) ca.init(f.anchor.corner_indices(grid));
            const auto& alpha = f.anchor.weights;
            double sf = weights.omega_f * weights.omega_f;
            Vec3 rot_r = rot.transpose() * residual_feature(f, grid, state);
            for (int k = 0; k < 8; ++k) {
                for (int l = 0; l < 8; ++l)
                    ca.blocks[k][l] += (sf * alpha[k] * alpha[l]) * Mat3::Identity();
                ca.rhs[k] += -(sf * alpha[k]) * rot_r;
            }
        }
    }

    // ordered scatter keeps floating-point accumulation deterministic
    for (const CellAccumulator& ca : acc) {
        if (!ca.used) continue;
        for (int k = 0; k < 8; ++k) {
            for (int l = 0; l < 8; ++l) sys.jtj.add(ca.gridpoints[k], ca.gridpoints[l],
                                                     ca.blocks[k][l]);
            sys.jtr.segment<3>(3 * ca.gridpoints[k]) += ca.rhs[k];
        }
    }

    // --- regularizer ---------------------------------------------------------
    if (weights.omega_r > 0.0) {
        double wr2 = weights.omega_r * weights.omega_r;
        ScalarCsr ltl = laplacian.multiply_transpose_self();
        for (int i = 0; i < n; ++i)
            for (int k = ltl.row_ptr[i]; k < ltl.row_ptr[i + 1]; ++k)
                sys.jtj.add(i, ltl.cols[k], (wr2 * ltl.vals[k]) * Mat3::Identity());

        std::vector<Vec3> b = arap_rhs(state, grid);
        Eigen::VectorXd t(3 * n), lt(3 * n), resid(3 * n), ltr(3 * n);
        for (int i = 0; i < n; ++i) t.segment<3>(3 * i) = state.translations[i];
        laplacian.apply_blockwise(t, lt);
        for (int i = 0; i < n; ++i) resid.segment<3>(3 * i) = b[i] - lt.segment<3>(3 * i);
        laplacian.apply_blockwise(resid, ltr);  // L symmetric
        sys.jtr += wr2 * ltr;
    }

    return sys;
}

// ---------------------------------------------------------------------------
// PCG

Eigen::VectorXd preconditioned_cg(
    const std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&)>& apply,
    const Eigen::VectorXd& rhs, const Eigen::VectorXd& diagonal, int max_iters, double rel_tol,
    int* iterations) {
    const auto n = rhs.size();
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    double bnorm = rhs.norm();
    if (iterations) *iterations = 0;
    if (bnorm == 0.0) return x;

    Eigen::VectorXd inv_diag = diagonal.cwiseInverse();
    Eigen::VectorXd r = rhs;
    Eigen::VectorXd z = inv_diag.cwiseProduct(r);
    Eigen::VectorXd p = z;
    Eigen::VectorXd q(n);
    double rho = r.dot(z);

    int it = 0;
    for (; it < max_iters; ++it) {
        if (r.norm() <= rel_tol * bnorm) break;
        apply(p, q);
        double pq = p.dot(q);
        if (!(pq > 0.0) || !std::isfinite(pq))
            throw std::runtime_error("pcg: operator not positive definite");
        double alpha = rho / pq;
        x += alpha * p;
        r -= alpha * q;
        z = inv_diag.cwiseProduct(r);
        double rho_next = r.dot(z);
        if (!std::isfinite(rho_next)) throw std::runtime_error("pcg: non-finite values");
        p = z + (rho_next / rho) * p;
        rho = rho_next;
    }
    if (iterations) *iterations = it;
    return x;
}

Eigen::VectorXd pcg_solve(const SparseNormalSystem& system, const SolverConfig& config,
                          int* iterations) {
    config.validate();
    Eigen::VectorXd diag = system.jtj.diagonal();
    for (Eigen::Index i = 0; i < diag.size(); ++i)
        if (!(diag[i] > 0.0))
            throw std::runtime_error(
                "pcg: zero diagonal entry at unknown " + std::to_string(i) +
                " (gridpoint without data or regularization)");
    if (!system.jtr.allFinite()) throw std::runtime_error("pcg: non-finite right-hand side");

    return preconditioned_cg(
        [&](const Eigen::VectorXd& x, Eigen::VectorXd& y) { system.jtj.multiply(x, y); },
        system.jtr, diag, config.pcg_max_iters, config.pcg_rel_tol, iterations);
}

// ---------------------------------------------------------------------------
// Flip-flop driver

SolveResult flip_flop_solve(const CorrespondenceProvider& provider,
                            const DeformationState& initial, const StaticGrid& grid,
                            const EnergyWeights& weights, const SolverConfig& config) {
    config.validate();
    require(static_cast<int>(initial.translations.size()) == grid.size() &&
                static_cast<int>(initial.rotations.size()) == grid.size(),
            "flip_flop: state does not match grid");

    constexpr double kMinDamping = 1.0 / 16.0;

    SolveResult result;
    result.state = initial;
    DeformationState& state = result.state;

    ScalarCsr laplacian = build_laplacian(grid);
    double damping = config.step_damping;

    CorrespondenceBatch batch = provider(state);

    for (int flip = 0; flip < config.flip_flop_iters && !result.converged; ++flip) {
        // flip: closed-form rotation refit, translations fixed
#pragma omp parallel for schedule(static)
        for (int i = 0; i < grid.size(); ++i)
            state.rotations[i] = fit_rotation(i, state, grid).rotation;

        bool progressed = false;
        for (int gn = 0; gn < config.gn_iters_per_flip; ++gn) {
            if (config.research_correspondences && !(flip == 0 && gn == 0))
                batch = provider(state);

            EnergyWeights eff = weights.resolved(batch.total(), grid.size());
            SparseNormalSystem sys =
                assemble(batch.projective, batch.features, state, grid, eff, laplacian);

            IterationRecord rec;
            rec.flip = flip;
            rec.gn_step = gn;
            rec.projective_count = batch.projective.size();
            rec.feature_count = batch.features.size();

            Eigen::VectorXd dx = pcg_solve(sys, config, &rec.pcg_iterations);
            if (!dx.allFinite()) throw std::runtime_error("flip_flop: non-finite update");

            EnergyBreakdown before =
                energy_breakdown(batch.projective, batch.features, grid, state);
            double e_before = before.total(eff);

            // guarded step: halve the persistent damping while the energy
            // would increase; at the floor, skip the step
            DeformationState candidate = state;
            EnergyBreakdown after;
            double applied = 0.0;
            for (;;) {
                for (int i = 0; i < grid.size(); ++i)
                    candidate.translations[i] =
                        state.translations[i] + damping * dx.segment<3>(3 * i);
                after = energy_breakdown(batch.projective, batch.features, grid, candidate);
                if (after.total(eff) <= e_before + 1e-12 * std::max(1.0, std::abs(e_before))) {
                    applied = damping;
                    break;
                }
                if (damping <= kMinDamping) break;  // reject the step
                damping = std::max(damping * 0.5, kMinDamping);
            }

            double max_step = 0.0;
            if (applied > 0.0) {
                for (int i = 0; i < grid.size(); ++i)
                    max_step = std::max(max_step, applied * dx.segment<3>(3 * i).norm());
                state.translations = candidate.translations;
                rec.energy = after;
                progressed = true;
                damping = std::min(config.step_damping, damping * 2.0);
            } else {
                rec.energy = before;
            }
            rec.damping = damping;
            rec.max_step = max_step;
            rec.energy_total = rec.energy.total(eff);
            result.history.push_back(rec);

            if (applied > 0.0 && max_step < config.convergence_eps) {
                result.converged = true;
                break;
            }
        }
        // a whole cycle at the damping floor without an accepted step: the
        // rotation refit did not reopen a descent direction, stop here
        if (!progressed && damping <= kMinDamping) break;
    }
    return result;
}

}  // namespace deformtrack
