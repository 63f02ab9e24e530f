#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>

#include "clawno/specdiff.hpp"

using namespace clawno;
using std::numbers::pi;

namespace {

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Random trigonometric polynomial with modes |xi_k| < N_k / 4.
std::vector<double> band_limited(const PeriodicGrid& g, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> N01;
    std::vector<double> v(g.size(), 0.0);
    for (int term = 0; term < 12; ++term) {
        std::vector<double> k(g.dim());
        for (std::size_t a = 0; a < g.dim(); ++a) {
            const int kmax = int(g.count(a) / 4) - 1;
            k[a] = double(std::uniform_int_distribution<int>(-kmax, kmax)(rng));
        }
        const double amp = N01(rng), phase = 2 * pi * N01(rng);
        for (std::size_t i = 0; i < g.size(); ++i) {
            double arg = phase;
            for (std::size_t a = 0; a < g.dim(); ++a) arg += 2 * pi * k[a] * g.coord(i, a) / g.length(a);
            v[i] += amp * std::cos(arg);
        }
    }
    return v;
}

}  // namespace

TEST_CASE("spectral derivative of a sine") {
    const double L = 3.0;
    SpectralPlan plan(PeriodicGrid({L}, {16}));
    std::vector<double> f(16), df(16), want(16);
    for (int i = 0; i < 16; ++i) {
        const double x = i * L / 16;
        f[i] = std::sin(2 * pi * x / L);
        want[i] = 2 * pi / L * std::cos(2 * pi * x / L);
    }
    plan.partial(f, df, 0);
    CHECK(max_abs_diff(df, want) <= 1e-12);

    for (int i = 0; i < 16; ++i) {
        const double x = i * L / 16;
        f[i] = std::cos(2 * 2 * pi * x / L);
        want[i] = -(4 * pi / L) * std::sin(4 * pi * x / L);
    }
    plan.partial(f, df, 0);
    CHECK(max_abs_diff(df, want) <= 1e-12);
}

TEST_CASE("constants and zeros map to exact zero") {
    SpectralPlan plan(PeriodicGrid({1.0, 2.0}, {8, 6}));
    std::vector<double> c(48, 3.7), out(48, 1.0);
    for (std::size_t axis = 0; axis < 2; ++axis) {
        plan.partial(c, out, axis);
        for (double v : out) CHECK(std::abs(v) < 1e-15);
    }
    std::vector<double> z(48, 0.0);
    plan.partial(z, out, 1);
    for (double v : out) CHECK(v == 0.0);
}

TEST_CASE("sin x sin y on the 2pi square") {
    PeriodicGrid g({2 * pi, 2 * pi}, {32, 32});
    SpectralPlan plan(g);
    auto f = sample_on(g, 1, [](auto x, auto) { return std::sin(x[0]) * std::sin(x[1]); });
    auto want = sample_on(g, 1, [](auto x, auto) { return std::cos(x[0]) * std::sin(x[1]); });
    auto df = spectral_partial(plan, f, 0);
    CHECK(max_abs_diff(df.values(), want.values()) <= 1e-12);
}

TEST_CASE("mixed partials commute") {
    PeriodicGrid g({1.0, 2.5}, {16, 24});
    SpectralPlan plan(g);
    auto f = band_limited(g, 11);
    std::vector<double> a(g.size()), b(g.size()), t(g.size());
    plan.partial(f, t, 1);
    plan.partial(t, a, 0);
    plan.partial(f, t, 0);
    plan.partial(t, b, 1);
    CHECK(max_abs_diff(a, b) <= 1e-12);
}

TEST_CASE("linearity") {
    PeriodicGrid g({1.0, 1.0}, {16, 16});
    SpectralPlan plan(g);
    auto f = band_limited(g, 1), h = band_limited(g, 2);
    std::vector<double> mix(g.size()), df(g.size()), dh(g.size()), dmix(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) mix[i] = 2.5 * f[i] - 0.75 * h[i];
    plan.partial(f, df, 1);
    plan.partial(h, dh, 1);
    plan.partial(mix, dmix, 1);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::abs(dmix[i] - (2.5 * df[i] - 0.75 * dh[i])) <= 1e-12);
}

TEST_CASE("derivative commutes with whole-step translation") {
    PeriodicGrid g({1.0, 1.0}, {16, 16});
    SpectralPlan plan(g);
    auto f = band_limited(g, 5);
    auto shift = [&](const std::vector<double>& v, std::size_t s0, std::size_t s1) {
        std::vector<double> out(v.size());
        for (std::size_t i = 0; i < 16; ++i)
            for (std::size_t j = 0; j < 16; ++j) out[((i + s0) % 16) * 16 + (j + s1) % 16] = v[i * 16 + j];
        return out;
    };
    std::vector<double> a(g.size()), b(g.size());
    plan.partial(shift(f, 3, 5), a, 0);
    plan.partial(f, b, 0);
    CHECK(max_abs_diff(a, shift(b, 3, 5)) <= 1e-12);
}

TEST_CASE("adjoint is the transpose") {
    PeriodicGrid g({1.0, 2.0}, {8, 12});
    SpectralPlan plan(g);
    auto f = band_limited(g, 3), h = band_limited(g, 4);
    std::mt19937_64 rng(9);
    std::normal_distribution<double> N01;
    for (auto& v : h) v += N01(rng);  // not band limited
    std::vector<double> df(g.size()), ah(g.size());
    for (std::size_t axis = 0; axis < 2; ++axis) {
        plan.partial(f, df, axis);
        plan.partial_adjoint(h, ah, axis);
        double lhs = 0, rhs = 0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            lhs += df[i] * h[i];
            rhs += f[i] * ah[i];
        }
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }
}

TEST_CASE("spectral accuracy on an analytic field") {
    auto err_at = [](std::size_t n) {
        PeriodicGrid g({2 * pi}, {n});
        SpectralPlan plan(g);
        std::vector<double> f(n), df(n), want(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double x = g.coord(i, 0);
            f[i] = std::exp(std::sin(x));
            want[i] = std::cos(x) * f[i];
        }
        plan.partial(f, df, 0);
        return max_abs_diff(df, want);
    };
    const double e8 = err_at(8), e16 = err_at(16), e32 = err_at(32);
    CHECK(e16 <= std::max(e8 * 1e-4, 1e-12));
    CHECK(e32 <= 1e-12);
}

TEST_CASE("fft round trip") {
    FftPlan fft({6, 10});
    std::mt19937_64 rng(1);
    std::normal_distribution<double> N01;
    std::vector<Complex> x(60), y;
    for (auto& z : x) z = {N01(rng), N01(rng)};
    y = x;
    fft.forward(y);
    fft.inverse(y);
    for (std::size_t i = 0; i < 60; ++i) CHECK(std::abs(y[i] - x[i]) <= 1e-13);
}

TEST_CASE("grid mismatch is reported") {
    SpectralPlan plan(PeriodicGrid({1.0}, {8}));
    Field other(PeriodicGrid({1.0}, {16}), 1);
    CHECK_THROWS_AS(spectral_partial(plan, other, 0), DomainMismatch);
    Field same(PeriodicGrid({1.0}, {8}), 1);
    CHECK_THROWS_AS(spectral_partial(plan, same, 1), InvalidArgument);
}

// ------------------------------------------------------------ continuation

namespace {

double fc_error_1d(std::size_t n, double a, double b, double (*f)(double), double (*df)(double),
                   FcOptions opt = {}) {
    FcPlan plan(BoxGrid({b - a}, {n}), opt);
    std::vector<double> v(n), d(n);
    const double h = (b - a) / double(n - 1);
    for (std::size_t i = 0; i < n; ++i) v[i] = f(a + i * h);
    plan.partial(v, d, 0);
    double m = 0;
    for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::abs(d[i] - df(a + i * h)));
    return m;
}

}  // namespace

TEST_CASE("continuation tables") {
    auto t = fc_tables(10, 30);
    CHECK(t->fit_residual < 1e-7);
    // Gram basis is orthonormal on the matching points
    for (std::size_t i = 0; i < 10; ++i)
        for (std::size_t j = 0; j < 10; ++j) {
            double s = 0;
            for (std::size_t r = 0; r < 10; ++r) s += t->gram[r * 10 + i] * t->gram[r * 10 + j];
            CHECK(s == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-13));
        }
    CHECK_THROWS_AS(fc_tables(10, 10), InvalidArgument);
    CHECK_THROWS_AS(FcPlan(BoxGrid({1.0}, {32}), FcOptions{5, 5}), InvalidArgument);
}

TEST_CASE("continuation keeps samples and is periodic") {
    FcPlan plan(BoxGrid({1.0}, {33}));
    std::vector<double> f(33);
    for (std::size_t i = 0; i < 33; ++i) f[i] = std::exp(double(i) / 32);
    auto ext = plan.extend_line(f, 0);
    CHECK((ext.size() % 2) == 0);
    CHECK(ext.size() == 33 + plan.extension(0));
    for (std::size_t i = 0; i < 33; ++i) CHECK(ext[i] == f[i]);
    // gap decays to both ends smoothly enough for spectral differentiation
    std::vector<double> d(33);
    plan.partial(f, d, 0);
    for (std::size_t i = 0; i < 33; ++i) CHECK(std::abs(d[i] - f[i]) <= 1e-9);
}

TEST_CASE("continuation differentiates linear functions") {
    for (std::size_t n : {16, 33, 64}) {
        const double e = fc_error_1d(
            n, 0.0, 1.0, [](double x) { return x; }, [](double) { return 1.0; });
        CHECK(e <= 1e-8);
    }
    const double e0 = fc_error_1d(
        32, 0.0, 1.0, [](double) { return 2.0; }, [](double) { return 0.0; });
    CHECK(e0 <= 1e-12);
}

TEST_CASE("continuation agrees with spectral on a periodic function") {
    // N = 128 samples of one period, endpoint included on the box.
    const std::size_t n = 128;
    auto f = [](double x) { return std::sin(2 * pi * x); };
    auto df = [](double x) { return 2 * pi * std::cos(2 * pi * x); };
    FcPlan fc(BoxGrid({1.0}, {n + 1}));
    SpectralPlan sp(PeriodicGrid({1.0}, {n}));
    std::vector<double> vb(n + 1), db(n + 1), vp(n), dp(n);
    for (std::size_t i = 0; i <= n; ++i) vb[i] = f(double(i) / n);
    for (std::size_t i = 0; i < n; ++i) vp[i] = f(double(i) / n);
    fc.partial(vb, db, 0);
    sp.partial(vp, dp, 0);
    double m = 0;
    for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::abs(db[i] - dp[i]));
    CHECK(m <= 1e-10);
    CHECK(std::abs(db[n] - df(1.0)) <= 1e-10);
}

TEST_CASE("continuation converges on a Runge function") {
    auto f = [](double x) { return 1.0 / (1.0 + 25 * x * x); };
    auto df = [](double x) { return -50 * x / std::pow(1.0 + 25 * x * x, 2); };
    double prev = 1e300;
    for (std::size_t n : {32, 64, 128, 256}) {
        const double e = fc_error_1d(n, -1.0, 1.0, f, df);
        CHECK(e < prev);
        prev = e;
    }
    CHECK(prev < 1e-9);
}

TEST_CASE("continuation on a 2D box and its adjoint") {
    BoxGrid g({1.0, 2.0}, {24, 31});
    FcPlan plan(g);
    std::vector<double> f(g.size()), d(g.size()), h(g.size()), ah(g.size());
    std::mt19937_64 rng(4);
    std::normal_distribution<double> N01;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = g.coord(i, 0), y = g.coord(i, 1);
        f[i] = std::exp(x) * std::cos(y);
        h[i] = N01(rng);
    }
    plan.partial(f, d, 1);
    double m = 0;
    for (std::size_t i = 0; i < g.size(); ++i)
        m = std::max(m, std::abs(d[i] + std::exp(g.coord(i, 0)) * std::sin(g.coord(i, 1))));
    CHECK(m <= 1e-7);
    for (std::size_t axis = 0; axis < 2; ++axis) {
        plan.partial(f, d, axis);
        plan.partial_adjoint(h, ah, axis);
        double lhs = 0, rhs = 0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            lhs += d[i] * h[i];
            rhs += f[i] * ah[i];
        }
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-11));
    }
}
