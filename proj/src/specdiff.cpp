#include "clawno/specdiff.hpp"

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <boost/multiprecision/eigen.hpp>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>

namespace clawno {

namespace {

void check_sizes(const DiffBackend& b, std::span<const double> in, std::span<double> out,
                 std::size_t axis) {
    if (axis >= b.dim())
        throw InvalidArgument("axis " + std::to_string(axis) + " out of range for a " +
                              std::to_string(b.dim()) + "-dimensional domain");
    if (in.size() != b.size() || out.size() != b.size())
        throw DomainMismatch("channel length does not match " + b.domain().describe());
}

}  // namespace

void DiffBackend::require_domain(const Domain& other) const {
    if (!(other == domain()))
        throw DomainMismatch("field lives on " + other.describe() + " but the backend expects " +
                             domain().describe());
}

// ---------------------------------------------------------------- spectral

SpectralPlan::SpectralPlan(PeriodicGrid grid)
    : grid_(std::move(grid)), domain_(grid_), fft_(std::make_shared<FftPlan>(grid_.counts())) {
    kappa_.resize(grid_.dim());
    for (std::size_t k = 0; k < grid_.dim(); ++k) {
        const std::size_t n = grid_.count(k);
        const double base = 2.0 * std::numbers::pi / grid_.length(k);
        kappa_[k].resize(n);
        for (std::size_t b = 0; b < n; ++b) kappa_[k][b] = base * double(signed_frequency(b, n));
        kappa_[k][n / 2] = 0.0;  // Nyquist
    }
}

void SpectralPlan::multiply(std::span<Complex> spec, std::size_t axis) const {
    const std::size_t n = grid_.count(axis);
    const std::size_t s = grid_.stride(axis);
    const auto& kap = kappa_[axis];
    const std::size_t blocks = spec.size() / (n * s);
    for (std::size_t o = 0; o < blocks; ++o)
        for (std::size_t b = 0; b < n; ++b) {
            const Complex m(0.0, kap[b]);
            Complex* row = spec.data() + (o * n + b) * s;
            for (std::size_t r = 0; r < s; ++r) row[r] *= m;
        }
}

void SpectralPlan::partial(std::span<const double> in, std::span<double> out, std::size_t axis) const {
    check_sizes(*this, in, out, axis);
    std::vector<Complex> buf(in.size());
    fft_->forward_real(in, buf);
    multiply(buf, axis);
    fft_->inverse(buf);
    double re = 0.0, im = 0.0;
    for (std::size_t i = 0; i < buf.size(); ++i) {
        out[i] = buf[i].real();
        re = std::max(re, std::abs(buf[i].real()));
        im = std::max(im, std::abs(buf[i].imag()));
    }
    if (im > 1e-12 * std::max(1.0, re))
        throw std::logic_error("spectral derivative left an imaginary residue of " + std::to_string(im));
}

void SpectralPlan::partial_adjoint(std::span<const double> in, std::span<double> out,
                                   std::size_t axis) const {
    partial(in, out, axis);
    for (auto& v : out) v = -v;
}

Field spectral_partial(const SpectralPlan& plan, const Field& field, std::size_t axis) {
    return apply_partial(plan, field, axis);
}

Field apply_partial(const DiffBackend& backend, const Field& field, std::size_t axis) {
    backend.require_domain(field.domain());
    Field out(field.domain(), field.channels());
    for (std::size_t c = 0; c < field.channels(); ++c) backend.partial(field.channel(c), out.channel(c), axis);
    return out;
}

// ---------------------------------------------------------- continuation

namespace {

using Real = boost::multiprecision::cpp_bin_float_50;
using MatR = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
using VecR = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

// Oversampling of the blend fit per grid step.
constexpr std::size_t kOversample = 20;

std::shared_ptr<FcTables> build_tables(std::size_t order, std::size_t d) {
    auto t = std::make_shared<FcTables>();
    t->order = order;
    t->extension = d;

    MatR V(order, order);
    for (std::size_t i = 0; i < order; ++i)
        for (std::size_t k = 0; k < order; ++k) V(i, k) = pow(Real(i), int(k));
    Eigen::HouseholderQR<MatR> qr(V);
    MatR Q = qr.householderQ() * MatR::Identity(order, order);
    MatR R = qr.matrixQR().triangularView<Eigen::Upper>();
    MatR Rinv = R.triangularView<Eigen::Upper>().solve(MatR::Identity(order, order));

    const std::size_t span = order + d;
    const Real period = Real(2 * span);
    const std::size_t K = span / 2;
    const Real w = 2 * boost::math::constants::pi<Real>() / period;

    const std::size_t per = (order - 1) * kOversample + 1;
    std::vector<Real> xs;
    for (std::size_t q = 0; q < per; ++q) xs.push_back(Real(q) / kOversample);
    for (std::size_t q = 0; q < per; ++q) xs.push_back(Real(span) + Real(q) / kOversample);

    auto trig_row = [&](const Real& x, auto&& row) {
        row(0) = 1;
        for (std::size_t k = 1; k <= K; ++k) {
            row(2 * k - 1) = cos(w * Real(k) * x);
            row(2 * k) = sin(w * Real(k) * x);
        }
    };
    MatR A(xs.size(), 2 * K + 1);
    for (std::size_t r = 0; r < xs.size(); ++r) trig_row(xs[r], A.row(r));
    MatR Agap(d, 2 * K + 1);
    for (std::size_t g = 0; g < d; ++g) trig_row(Real(order + g), Agap.row(g));

    // Right-hand sides: Gram polynomial j on the matching region, zero beyond the gap.
    MatR rhs = MatR::Zero(xs.size(), order);
    for (std::size_t q = 0; q < per; ++q)
        for (std::size_t j = 0; j < order; ++j) {
            Real v = 0;
            for (std::size_t k = 0; k < order; ++k) v += pow(xs[q], int(k)) * Rinv(k, j);
            rhs(q, j) = v;
        }
    Eigen::ColPivHouseholderQR<MatR> lsq(A);
    MatR coef = lsq.solve(rhs);
    MatR resid = A * coef - rhs;
    MatR blend = Agap * coef;

    t->gram.resize(order * order);
    t->blend.resize(d * order);
    for (std::size_t i = 0; i < order; ++i)
        for (std::size_t j = 0; j < order; ++j) t->gram[i * order + j] = double(Q(i, j));
    for (std::size_t g = 0; g < d; ++g)
        for (std::size_t j = 0; j < order; ++j) t->blend[g * order + j] = double(blend(g, j));
    double res = 0.0;
    for (Eigen::Index r = 0; r < resid.rows(); ++r)
        for (Eigen::Index c = 0; c < resid.cols(); ++c) res = std::max(res, std::abs(double(resid(r, c))));
    t->fit_residual = res;
    return t;
}

}  // namespace

std::shared_ptr<const FcTables> fc_tables(std::size_t order, std::size_t extension) {
    if (order < 1) throw InvalidArgument("continuation order must be at least 1");
    if (extension < order + 1)
        throw InvalidArgument("extension length " + std::to_string(extension) +
                              " is too small for order " + std::to_string(order) +
                              " (need at least order+1)");
    static std::mutex mu;
    static std::map<std::pair<std::size_t, std::size_t>, std::shared_ptr<const FcTables>> cache;
    std::lock_guard lock(mu);
    auto& slot = cache[{order, extension}];
    if (!slot) slot = build_tables(order, extension);
    return slot;
}

FcPlan::FcPlan(BoxGrid grid, FcOptions options)
    : grid_(std::move(grid)), domain_(grid_), options_(options) {
    if (options_.extension < options_.order + 1)
        throw InvalidArgument("extension length " + std::to_string(options_.extension) +
                              " is too small for order " + std::to_string(options_.order) +
                              " (need at least order+1)");
    for (std::size_t k = 0; k < grid_.dim(); ++k) {
        const std::size_t n = grid_.count(k);
        if (n < options_.order)
            throw InvalidArgument("axis " + std::to_string(k) + " has " + std::to_string(n) +
                                  " points, fewer than the continuation order " +
                                  std::to_string(options_.order));
        const std::size_t d = options_.extension + ((n + options_.extension) % 2);
        Axis ax;
        ax.tables = fc_tables(options_.order, d);
        const double h = grid_.spacing(k);
        ax.line = std::make_unique<SpectralPlan>(PeriodicGrid({double(n + d) * h}, {n + d}));
        axes_.push_back(std::move(ax));
    }
}

void FcPlan::extend_into(std::span<const double> f, std::span<double> ext, const FcTables& t) const {
    const std::size_t n = f.size(), o = t.order, d = t.extension;
    std::copy(f.begin(), f.end(), ext.begin());
    std::vector<double> a(o, 0.0), b(o, 0.0);
    for (std::size_t i = 0; i < o; ++i)
        for (std::size_t j = 0; j < o; ++j) {
            a[j] += t.gram[i * o + j] * f[n - o + i];
            b[j] += t.gram[i * o + j] * f[o - 1 - i];
        }
    for (std::size_t g = 0; g < d; ++g) {
        double right = 0.0, left = 0.0;
        for (std::size_t j = 0; j < o; ++j) {
            right += t.blend[g * o + j] * a[j];
            left += t.blend[(d - 1 - g) * o + j] * b[j];
        }
        ext[n + g] = right + left;
    }
}

void FcPlan::extend_adjoint(std::span<const double> ext, std::span<double> f, const FcTables& t) const {
    const std::size_t n = f.size(), o = t.order, d = t.extension;
    std::copy(ext.begin(), ext.begin() + std::ptrdiff_t(n), f.begin());
    std::vector<double> a(o, 0.0), b(o, 0.0);
    for (std::size_t g = 0; g < d; ++g)
        for (std::size_t j = 0; j < o; ++j) {
            a[j] += t.blend[g * o + j] * ext[n + g];
            b[j] += t.blend[(d - 1 - g) * o + j] * ext[n + g];
        }
    for (std::size_t i = 0; i < o; ++i)
        for (std::size_t j = 0; j < o; ++j) {
            f[n - o + i] += t.gram[i * o + j] * a[j];
            f[o - 1 - i] += t.gram[i * o + j] * b[j];
        }
}

std::vector<double> FcPlan::extend_line(std::span<const double> line, std::size_t axis) const {
    const auto& t = *axes_.at(axis).tables;
    if (line.size() != grid_.count(axis)) throw InvalidArgument("line length does not match the grid axis");
    std::vector<double> ext(line.size() + t.extension);
    extend_into(line, ext, t);
    return ext;
}

void FcPlan::apply(std::span<const double> in, std::span<double> out, std::size_t axis, bool adjoint) const {
    check_sizes(*this, in, out, axis);
    const auto& ax = axes_[axis];
    const auto& t = *ax.tables;
    const std::size_t n = grid_.count(axis), s = grid_.stride(axis), d = t.extension;
    const std::size_t blocks = in.size() / (n * s);
    std::vector<double> line(n), ext(n + d), dext(n + d);
    for (std::size_t o = 0; o < blocks; ++o)
        for (std::size_t r = 0; r < s; ++r) {
            const std::size_t base = o * n * s + r;
            for (std::size_t i = 0; i < n; ++i) line[i] = in[base + i * s];
            if (!adjoint) {
                extend_into(line, ext, t);
                ax.line->partial(ext, dext, 0);
                for (std::size_t i = 0; i < n; ++i) out[base + i * s] = dext[i];
            } else {
                std::fill(ext.begin(), ext.end(), 0.0);
                std::copy(line.begin(), line.end(), ext.begin());
                ax.line->partial_adjoint(ext, dext, 0);
                extend_adjoint(dext, line, t);
                for (std::size_t i = 0; i < n; ++i) out[base + i * s] = line[i];
            }
        }
}

void FcPlan::partial(std::span<const double> in, std::span<double> out, std::size_t axis) const {
    apply(in, out, axis, false);
}

void FcPlan::partial_adjoint(std::span<const double> in, std::span<double> out, std::size_t axis) const {
    apply(in, out, axis, true);
}

Field fc_partial(const FcPlan& plan, const Field& field, std::size_t axis) {
    return apply_partial(plan, field, axis);
}

}  // namespace clawno
