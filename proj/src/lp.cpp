#include "clawno/lp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

namespace clawno {

namespace {

constexpr double kPivotTol = 1e-9;
constexpr double kCostTol = 1e-11;

struct Tableau {
    Eigen::MatrixXd A;  // rows x (n + rows): real columns then artificials
    Eigen::VectorXd b;      // perturbed right-hand side used by the primal phases
    Eigen::VectorXd b_true;
    std::vector<std::size_t> basis;
    std::size_t n = 0;  // number of real columns

    Eigen::MatrixXd basis_matrix() const {
        Eigen::MatrixXd B(A.rows(), basis.size());
        for (std::size_t i = 0; i < basis.size(); ++i) B.col(Eigen::Index(i)) = A.col(Eigen::Index(basis[i]));
        return B;
    }
};

// Runs simplex iterations over the columns [0, limit) with costs `cost`.
// Returns the final dual vector.
Eigen::VectorXd iterate(Tableau& t, const Eigen::VectorXd& cost, std::size_t limit, std::size_t& iters) {
    const std::size_t max_iters = 50 * (t.A.cols() + t.A.rows()) + 1000;
    std::vector<char> in_basis(t.A.cols(), 0), skip(t.A.cols(), 0);
    // After a run of pivots without objective progress, price with Bland's rule
    // until the objective moves again.
    std::size_t stalled = 0;
    double last_obj = std::numeric_limits<double>::infinity();
    for (;;) {
        std::fill(in_basis.begin(), in_basis.end(), 0);
        for (auto j : t.basis) in_basis[j] = 1;
        Eigen::MatrixXd B = t.basis_matrix();
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(B);
        Eigen::VectorXd xB = lu.solve(t.b);
        Eigen::VectorXd cB(Eigen::Index(t.basis.size()));
        for (std::size_t i = 0; i < t.basis.size(); ++i) cB(Eigen::Index(i)) = cost(Eigen::Index(t.basis[i]));
        Eigen::VectorXd y = lu.transpose().solve(cB);
        const double ynorm = y.lpNorm<1>();
        const double obj = cB.dot(xB);
        stalled = obj < last_obj - 1e-12 * (1.0 + std::abs(obj)) ? 0 : stalled + 1;
        last_obj = obj;
        const bool degenerate = stalled >= 8;

        for (;;) {
            std::size_t enter = limit;
            double most = 0.0;
            for (std::size_t j = 0; j < limit; ++j) {
                if (in_basis[j] || skip[j]) continue;
                const auto col = t.A.col(Eigen::Index(j));
                const double d = cost(Eigen::Index(j)) - y.dot(col);
                const double tol = kCostTol * (1.0 + ynorm * col.lpNorm<Eigen::Infinity>());
                if (d < -tol && d < most) {
                    enter = j;
                    if (degenerate) break;
                    most = d;
                }
            }
            if (enter == limit) return y;
            if (++iters > max_iters) throw LpInfeasible("simplex iteration limit reached");

            Eigen::VectorXd u = lu.solve(t.A.col(Eigen::Index(enter)));
            const double ptol = kPivotTol * std::max(1.0, u.lpNorm<Eigen::Infinity>());
            std::size_t leave = t.basis.size();
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < t.basis.size(); ++i) {
                const double ui = u(Eigen::Index(i));
                if (ui <= ptol) continue;
                const double ratio = std::max(0.0, xB(Eigen::Index(i))) / ui;
                if (ratio < best - 1e-14 ||
                    (ratio <= best + 1e-14 && leave < t.basis.size() && t.basis[i] < t.basis[leave])) {
                    best = std::min(best, ratio);
                    leave = i;
                }
            }
            if (leave == t.basis.size()) {
                // No admissible pivot: the negative reduced cost is roundoff unless it is large.
                if (most < -1e-6 * (1.0 + ynorm)) throw LpInfeasible("linear program is unbounded");
                skip[enter] = 1;
                continue;
            }
            t.basis[leave] = enter;
            std::fill(skip.begin(), skip.end(), 0);
            break;
        }
    }
}

// Dual simplex from a dual-feasible basis until x_B = B^-1 b_true >= 0.
void dual_cleanup(Tableau& t, const Eigen::VectorXd& cost, std::size_t limit, std::size_t& iters) {
    const std::size_t max_iters = 50 * (t.A.cols() + t.A.rows()) + 1000;
    const double ftol = 1e-12 * (1.0 + t.b_true.lpNorm<Eigen::Infinity>());
    for (;;) {
        Eigen::MatrixXd B = t.basis_matrix();
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(B);
        const Eigen::VectorXd xB = lu.solve(t.b_true);
        std::size_t leave = t.basis.size();
        double worst = -ftol;
        for (std::size_t i = 0; i < t.basis.size(); ++i)
            if (xB(Eigen::Index(i)) < worst) {
                worst = xB(Eigen::Index(i));
                leave = i;
            }
        if (leave == t.basis.size()) return;
        if (++iters > max_iters) throw LpInfeasible("simplex iteration limit reached");

        Eigen::VectorXd cB(Eigen::Index(t.basis.size()));
        for (std::size_t i = 0; i < t.basis.size(); ++i) cB(Eigen::Index(i)) = cost(Eigen::Index(t.basis[i]));
        const Eigen::VectorXd y = lu.transpose().solve(cB);
        Eigen::VectorXd e = Eigen::VectorXd::Zero(Eigen::Index(t.basis.size()));
        e(Eigen::Index(leave)) = 1.0;
        const Eigen::VectorXd rho = lu.transpose().solve(e);

        std::vector<char> in_basis(t.A.cols(), 0);
        for (auto j : t.basis) in_basis[j] = 1;
        std::size_t enter = limit;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < limit; ++j) {
            if (in_basis[j]) continue;
            const auto col = t.A.col(Eigen::Index(j));
            const double alpha = rho.dot(col);
            if (alpha >= -kPivotTol) continue;
            const double d = std::max(0.0, cost(Eigen::Index(j)) - y.dot(col));
            const double ratio = d / -alpha;
            if (ratio < best - 1e-14) {
                best = ratio;
                enter = j;
            }
        }
        if (enter == limit) throw LpInfeasible("equality constraints cannot be met");
        t.basis[leave] = enter;
    }
}

}  // namespace

LpResult simplex(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const Eigen::VectorXd& c) {
    const Eigen::Index m = A.rows(), n = A.cols();
    if (b.size() != m || c.size() != n) throw std::invalid_argument("simplex: inconsistent dimensions");

    Tableau t;
    t.n = std::size_t(n);
    t.A = Eigen::MatrixXd::Zero(m, n + m);
    t.A.leftCols(n) = A;
    t.A.rightCols(m) = Eigen::MatrixXd::Identity(m, m);
    // The primal phases run on b + A s for a small random s > 0: feasible whenever
    // b is, and with nondegenerate vertices. The dual simplex then restores b.
    t.b_true = b;
    {
        std::mt19937_64 rng(0x5eed);
        std::uniform_real_distribution<double> U(0.5, 1.0);
        Eigen::VectorXd s(n);
        for (Eigen::Index j = 0; j < n; ++j) s(j) = U(rng);
        const double scale = A.lpNorm<Eigen::Infinity>() * double(n);
        t.b = b + (1e-7 * std::max(1.0, b.lpNorm<Eigen::Infinity>()) / std::max(scale, 1e-300)) * (A * s);
    }
    std::vector<double> flip(std::size_t(m), 1.0);
    for (Eigen::Index i = 0; i < m; ++i)
        if (t.b(i) < 0) {
            flip[std::size_t(i)] = -1.0;
            t.A.row(i).head(n) *= -1.0;
            t.b(i) = -t.b(i);
            t.b_true(i) = -t.b_true(i);
        }
    for (Eigen::Index i = 0; i < m; ++i) t.basis.push_back(std::size_t(n + i));

    LpResult res;
    Eigen::VectorXd phase1 = Eigen::VectorXd::Zero(n + m);
    phase1.tail(m).setOnes();
    iterate(t, phase1, std::size_t(n + m), res.iterations);
    {
        Eigen::VectorXd xB = t.basis_matrix().partialPivLu().solve(t.b);
        double infeas = 0.0;
        for (std::size_t i = 0; i < t.basis.size(); ++i)
            if (t.basis[i] >= t.n) infeas += std::abs(xB(Eigen::Index(i)));
        if (infeas > 1e-9 * std::max(1.0, t.b.lpNorm<Eigen::Infinity>()))
            throw LpInfeasible("equality constraints cannot be met (phase one residual " +
                               std::to_string(infeas) + ")");
    }

    // Pivot remaining (zero-level) artificials out; rows where that fails are redundant.
    std::vector<Eigen::Index> kept_rows;
    for (Eigen::Index i = 0; i < m; ++i) kept_rows.push_back(i);
    for (std::size_t pos = 0; pos < t.basis.size();) {
        if (t.basis[pos] < t.n) {
            ++pos;
            continue;
        }
        Eigen::MatrixXd B = t.basis_matrix();
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(B);
        Eigen::VectorXd e = Eigen::VectorXd::Zero(Eigen::Index(t.basis.size()));
        e(Eigen::Index(pos)) = 1.0;
        Eigen::VectorXd row = lu.transpose().solve(e);
        bool pivoted = false;
        for (std::size_t j = 0; j < t.n && !pivoted; ++j) {
            if (std::find(t.basis.begin(), t.basis.end(), j) != t.basis.end()) continue;
            if (std::abs(row.dot(t.A.col(Eigen::Index(j)))) > kPivotTol) {
                t.basis[pos] = j;
                pivoted = true;
            }
        }
        if (pivoted) {
            ++pos;
            continue;
        }
        // Redundant: drop the row carrying this artificial.
        const Eigen::Index art_row = Eigen::Index(t.basis[pos] - t.n);
        const auto it = std::find(kept_rows.begin(), kept_rows.end(), art_row);
        const Eigen::Index local = Eigen::Index(it - kept_rows.begin());
        kept_rows.erase(it);
        Eigen::MatrixXd A2(t.A.rows() - 1, t.A.cols());
        Eigen::VectorXd b2(t.b.size() - 1), bt2(t.b.size() - 1);
        for (Eigen::Index r = 0, w = 0; r < t.A.rows(); ++r) {
            if (r == local) continue;
            A2.row(w) = t.A.row(r);
            bt2(w) = t.b_true(r);
            b2(w++) = t.b(r);
        }
        t.A = std::move(A2);
        t.b = std::move(b2);
        t.b_true = std::move(bt2);
        t.basis.erase(t.basis.begin() + std::ptrdiff_t(pos));
    }

    Eigen::VectorXd phase2 = Eigen::VectorXd::Zero(t.A.cols());
    phase2.head(n) = c;
    iterate(t, phase2, t.n, res.iterations);
    dual_cleanup(t, phase2, t.n, res.iterations);
    t.b = t.b_true;
    Eigen::VectorXd y = iterate(t, phase2, t.n, res.iterations);

    Eigen::VectorXd xB = t.basis_matrix().partialPivLu().solve(t.b);
    res.x = Eigen::VectorXd::Zero(n);
    for (std::size_t i = 0; i < t.basis.size(); ++i)
        if (t.basis[i] < t.n) res.x(Eigen::Index(t.basis[i])) = std::max(0.0, xB(Eigen::Index(i)));
    res.dual = Eigen::VectorXd::Zero(m);
    for (std::size_t r = 0; r < kept_rows.size(); ++r)
        res.dual(kept_rows[r]) = flip[std::size_t(kept_rows[r])] * y(Eigen::Index(r));
    res.objective = c.dot(res.x);
    return res;
}

namespace {

// min 1/2 |v|^2  s.t.  B v = b, v >= 0, given a feasible v0.
// Semismooth Newton on the dual  max b.l - 1/2 |(B^T l)_+|^2, whose maximizer
// gives v = (B^T l)_+; the final active set is then solved exactly.
Eigen::VectorXd min_norm_nonneg(const Eigen::MatrixXd& B, const Eigen::VectorXd& b, const Eigen::VectorXd& v0) {
    const Eigen::Index r = B.rows(), n = B.cols();
    auto dual = [&](const Eigen::VectorXd& l, Eigen::VectorXd& v) {
        v = (B.transpose() * l).cwiseMax(0.0);
        return b.dot(l) - 0.5 * v.squaredNorm();
    };
    Eigen::VectorXd lambda = B.transpose().completeOrthogonalDecomposition().solve(v0);
    Eigen::VectorXd v;
    double theta = dual(lambda, v);
    const double scale = 1.0 + b.lpNorm<Eigen::Infinity>();
    for (int it = 0; it < 200; ++it) {
        const Eigen::VectorXd grad = b - B * v;
        if (grad.lpNorm<Eigen::Infinity>() <= 1e-14 * scale) break;
        Eigen::MatrixXd H = Eigen::MatrixXd::Zero(r, r);
        for (Eigen::Index j = 0; j < n; ++j)
            if (v(j) > 0.0) H.selfadjointView<Eigen::Lower>().rankUpdate(B.col(j));
        H = H.selfadjointView<Eigen::Lower>();
        H.diagonal().array() += 1e-14 * (1.0 + H.diagonal().maxCoeff());
        const Eigen::VectorXd step = H.ldlt().solve(grad);
        double t = 1.0;
        Eigen::VectorXd trial_v;
        double trial = 0.0;
        for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
            trial = dual(lambda + t * step, trial_v);
            if (trial >= theta + 1e-4 * t * grad.dot(step)) break;
        }
        if (!(trial > theta)) break;
        lambda += t * step;
        theta = trial;
        v = trial_v;
    }
    // min-norm correction of the residual on the support
    std::vector<Eigen::Index> S;
    for (Eigen::Index j = 0; j < n; ++j)
        if (v(j) > 0.0) S.push_back(j);
    Eigen::MatrixXd BS(r, Eigen::Index(S.size()));
    Eigen::VectorXd vs(Eigen::Index(S.size()));
    for (std::size_t q = 0; q < S.size(); ++q) {
        BS.col(Eigen::Index(q)) = B.col(S[q]);
        vs(Eigen::Index(q)) = v(S[q]);
    }
    // the L1 row is dependent on the rest over an optimal-face support
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(BS.rows(), BS.cols());
    cod.setThreshold(1e-10);
    cod.compute(BS);
    vs += cod.solve(b - BS * vs);
    if (vs.minCoeff() < -1e-12 * (1.0 + vs.lpNorm<Eigen::Infinity>())) return v;
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
    for (std::size_t q = 0; q < S.size(); ++q) out(S[q]) = std::max(0.0, vs(Eigen::Index(q)));
    return out;
}

}  // namespace

Eigen::VectorXd min_l1(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, bool central) {
    const Eigen::Index n = A.cols();
    Eigen::MatrixXd split(A.rows(), 2 * n);
    split.leftCols(n) = A;
    split.rightCols(n) = -A;
    const LpResult lp = simplex(split, b, Eigen::VectorXd::Ones(2 * n));
    Eigen::VectorXd w = lp.x.head(n) - lp.x.tail(n);
    if (!central) return w;

    // Minimum-norm point of the optimal face: over the split variables v = (w+, w-),
    // min |v|^2  s.t.  [A -A] v = b, 1.v = t*, v >= 0. At t* = min |w|_1 the
    // split is complementary, so |v| = |w|. The minimizer is unique.
    Eigen::MatrixXd B(A.rows() + 1, 2 * n);
    B.topRows(A.rows()) = split;
    B.bottomRows(1).setOnes();
    Eigen::VectorXd rhs(A.rows() + 1);
    rhs.head(A.rows()) = b;
    rhs(A.rows()) = lp.x.sum();
    Eigen::VectorXd v = min_norm_nonneg(B, rhs, lp.x);
    Eigen::VectorXd out = v.head(n) - v.tail(n);

    // Keep the vertex if the refinement drifted off the constraints or the L1 optimum.
    const double tol = 1e-11 * (1.0 + b.lpNorm<Eigen::Infinity>());
    if ((A * out - b).lpNorm<Eigen::Infinity>() > std::max(tol, (A * w - b).lpNorm<Eigen::Infinity>()) ||
        out.lpNorm<1>() > w.lpNorm<1>() * (1.0 + 1e-9))
        return w;
    return out;
}

}  // namespace clawno
