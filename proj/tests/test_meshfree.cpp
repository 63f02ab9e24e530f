#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <random>

#include "clawno/field_io.hpp"
#include "clawno/lp.hpp"
#include "clawno/meshfree.hpp"
#include "clawno/specdiff.hpp"

using namespace clawno;

namespace {

// nx * ny jittered grid on [0,1]^2, jitter up to `j` cell widths.
std::shared_ptr<const PointCloud> jittered(std::size_t nx, std::size_t ny, double j, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(-j, j);
    std::vector<double> pts;
    for (std::size_t a = 0; a < nx; ++a)
        for (std::size_t b = 0; b < ny; ++b) {
            pts.push_back((a + 0.5 + U(rng)) / double(nx));
            pts.push_back((b + 0.5 + U(rng)) / double(ny));
        }
    return std::make_shared<const PointCloud>(2, std::move(pts));
}

std::vector<double> eval(const PointCloud& c, auto&& f) {
    std::vector<double> v(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) v[i] = f(c.point(i));
    return v;
}

}  // namespace

TEST_CASE("monomial bookkeeping") {
    CHECK(poly_dim(5, 2) == 21);
    CHECK(poly_dim(1, 3) == 4);
    CHECK(monomial_exponents(5, 2).size() == 20);
    CHECK(monomial_exponents(2, 2) == std::vector<std::vector<int>>{{1, 0}, {0, 1}, {2, 0}, {1, 1}, {0, 2}});
}

TEST_CASE("neighbor lists") {
    PointCloud line(1, {0, 1, 2, 3, 4, 5, 6});
    auto nb = neighbors(line, 2.5);
    CHECK(nb.count(3) == 4);
    CHECK(nb.count(0) == 2);
    // sorted by distance then index
    CHECK(std::vector<std::size_t>(nb.of(3).begin(), nb.of(3).end()) == std::vector<std::size_t>{2, 4, 1, 5});
    CHECK_THROWS_AS(neighbors(line, 0.5, 1), InvalidArgument);
    try {
        neighbors(line, 1.5, 2);
        FAIL("expected error");
    } catch (const InvalidArgument& e) {
        CHECK(std::string(e.what()).find("point 0") != std::string::npos);
    }
}

TEST_CASE("neighbor lists under permutation") {
    auto cloud = jittered(9, 7, 0.3, 5);
    const double delta = 2.2 * cloud->fill_distance();
    auto nb = neighbors(*cloud, delta);
    std::vector<std::size_t> perm(cloud->size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(3));
    std::vector<double> pts;
    for (auto i : perm)
        for (double x : cloud->point(i)) pts.push_back(x);
    PointCloud shuffled(2, pts);
    auto nb2 = neighbors(shuffled, delta);
    for (std::size_t q = 0; q < perm.size(); ++q) {
        std::vector<std::size_t> a(nb.of(perm[q]).begin(), nb.of(perm[q]).end());
        std::vector<std::size_t> b;
        for (auto j : nb2.of(q)) b.push_back(perm[j]);
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        CHECK(a == b);
        // brute-force count
        std::size_t cnt = 0;
        for (std::size_t j = 0; j < cloud->size(); ++j)
            if (j != perm[q] && cloud->distance(perm[q], j) <= delta) ++cnt;
        CHECK(cnt == a.size());
        auto l = nb2.of(q);
        for (std::size_t t = 1; t < l.size(); ++t) CHECK(shuffled.distance(q, l[t - 1]) <= shuffled.distance(q, l[t]));
    }
}

TEST_CASE("simplex on a small problem") {
    // min x0 + 2 x1 + 3 x2  s.t. x0 + x1 + x2 = 1, x0 - x1 = 0.2
    Eigen::MatrixXd A(2, 3);
    A << 1, 1, 1, 1, -1, 0;
    Eigen::VectorXd b(2), c(3);
    b << 1, 0.2;
    c << 1, 2, 3;
    auto r = simplex(A, b, c);
    CHECK(r.x(0) == doctest::Approx(0.6));
    CHECK(r.x(1) == doctest::Approx(0.4));
    CHECK(r.objective == doctest::Approx(1.4));
    Eigen::MatrixXd bad(1, 2);
    bad << 1, 1;
    Eigen::VectorXd nb(1);
    nb << -1;
    CHECK_THROWS_AS(simplex(bad, nb, Eigen::VectorXd::Ones(2)), LpInfeasible);
}

namespace {

// Primal feasibility, dual feasibility and complementary slackness of an LP result.
double kkt_violation(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const Eigen::VectorXd& c,
                     const LpResult& r) {
    const Eigen::VectorXd red = c - A.transpose() * r.dual;
    double v = (A * r.x - b).lpNorm<Eigen::Infinity>();
    v = std::max(v, -r.x.minCoeff());
    v = std::max(v, -red.minCoeff());
    v = std::max(v, r.x.cwiseProduct(red).cwiseAbs().maxCoeff());
    return v;
}

}  // namespace

TEST_CASE("simplex satisfies the optimality conditions on degenerate problems") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> small(-2, 2);
    for (int trial = 0; trial < 40; ++trial) {
        // integer data and a sparse b: many ties in both ratio tests
        const Eigen::Index m = 6, n = 14;
        Eigen::MatrixXd A(m, n);
        for (Eigen::Index i = 0; i < m; ++i)
            for (Eigen::Index j = 0; j < n; ++j) A(i, j) = small(rng);
        Eigen::VectorXd x0 = Eigen::VectorXd::Zero(n);
        x0(trial % n) = 1.0;
        const Eigen::VectorXd b = A * x0;
        Eigen::VectorXd c(n);
        for (Eigen::Index j = 0; j < n; ++j) c(j) = 1 + std::abs(small(rng));
        const auto r = simplex(A, b, c);
        CHECK(kkt_violation(A, b, c, r) < 1e-10);
        CHECK(r.objective <= c.dot(x0) + 1e-12);
    }
}

TEST_CASE("simplex drops redundant rows") {
    Eigen::MatrixXd A(3, 4);
    A << 1, 1, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1;
    Eigen::VectorXd b(3), c(4);
    b << 1, 2, 3;
    c << 1, 2, 2, 1;
    const auto r = simplex(A, b, c);
    CHECK(r.objective == doctest::Approx(3.0));
    CHECK(kkt_violation(A, b, c, r) < 1e-12);
}

TEST_CASE("fifth-order stencil programs on a lattice terminate promptly") {
    const std::size_t n = 17;
    std::vector<double> pts;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            pts.push_back(double(i) / double(n - 1));
            pts.push_back(double(j) / double(n - 1));
        }
    const PointCloud cloud(2, pts);
    const std::size_t m = 5;
    const double delta = default_radius_ratio(cloud, m) * cloud.fill_distance();
    const auto nb = neighbors(cloud, delta, poly_dim(m, 2));
    const auto expo = monomial_exponents(m, 2);
    std::size_t worst = 0;
    for (std::size_t t : {0ul, 3ul, 8ul, 20ul, 144ul}) {
        const auto ix = nb.of(t);
        Eigen::MatrixXd A(Eigen::Index(expo.size()), Eigen::Index(ix.size()));
        for (std::size_t c = 0; c < ix.size(); ++c) {
            double z[2];
            cloud.displacement(t, ix[c], z);
            for (std::size_t r = 0; r < expo.size(); ++r)
                A(Eigen::Index(r), Eigen::Index(c)) =
                    std::pow(z[0] / delta, expo[r][0]) * std::pow(z[1] / delta, expo[r][1]);
        }
        Eigen::MatrixXd S(A.rows(), 2 * A.cols());
        S << A, -A;
        const Eigen::VectorXd c = Eigen::VectorXd::Ones(S.cols());
        for (Eigen::Index k = 0; k < 2; ++k) {
            Eigen::VectorXd b = Eigen::VectorXd::Zero(A.rows());
            b(k) = 1.0;
            const auto r = simplex(S, b, c);
            CHECK(kkt_violation(S, b, c, r) < 1e-9);
            worst = std::max(worst, r.iterations);
        }
    }
    MESSAGE("most pivots: " << worst);
    CHECK(worst < 20 * std::size_t(2 * expo.size()));
}

TEST_CASE("central tie-break keeps the L1 optimum and symmetry") {
    // derivative at 0 from neighbors at -2,-1,1,2 reproducing degree 1:
    // every convex mix of the symmetric stencils is L1 optimal
    Eigen::MatrixXd A(1, 4);
    A << -2, -1, 1, 2;
    Eigen::VectorXd b(1);
    b << 1;
    auto v = min_l1(A, b, false);
    auto w = min_l1(A, b, true);
    CHECK(v.lpNorm<1>() == doctest::Approx(0.5));
    CHECK(w.lpNorm<1>() == doctest::Approx(0.5));
    CHECK(w(0) == doctest::Approx(-w(3)));
    CHECK(w(1) == doctest::Approx(-w(2)));
    CHECK((A * w - b).norm() < 1e-14);
}

TEST_CASE("linear and constant reproduction on a jittered cloud") {
    auto cloud = jittered(12, 10, 0.35, 1);
    auto w = generate_weights(cloud, {2, 0.0, true});
    auto x = eval(*cloud, [](auto p) { return p[0]; });
    auto c = eval(*cloud, [](auto) { return 4.2; });
    std::vector<double> d(cloud->size());
    w->partial(x, d, 0);
    for (double v : d) CHECK(std::abs(v - 1.0) <= 1e-10);
    w->partial(c, d, 1);
    for (double v : d) CHECK(v == 0.0);
    auto q = eval(*cloud, [](auto p) { return p[0] * p[0]; });
    w->partial(q, d, 0);
    for (std::size_t i = 0; i < cloud->size(); ++i) CHECK(std::abs(d[i] - 2 * cloud->point(i)[0]) <= 1e-9);
}

TEST_CASE("reproduces every monomial up to degree 5 on 300 points") {
    auto cloud = jittered(20, 15, 0.3, 2);
    REQUIRE(cloud->size() == 300);
    auto w = generate_weights(cloud, {5, 0.0, true});
    std::vector<double> d(300);
    double worst = 0;
    for (int a = 0; a <= 5; ++a)
        for (int b = 0; a + b <= 5; ++b) {
            auto f = eval(*cloud, [&](auto p) { return std::pow(p[0], a) * std::pow(p[1], b); });
            for (std::size_t k = 0; k < 2; ++k) {
                w->partial(f, d, k);
                for (std::size_t i = 0; i < 300; ++i) {
                    const double x = cloud->point(i)[0], y = cloud->point(i)[1];
                    const double exact = k == 0 ? (a ? a * std::pow(x, a - 1) * std::pow(y, b) : 0.0)
                                                : (b ? b * std::pow(x, a) * std::pow(y, b - 1) : 0.0);
                    worst = std::max(worst, std::abs(d[i] - exact));
                }
            }
        }
    CHECK(worst <= 1e-9);
}

TEST_CASE("degenerate neighborhoods are reported") {
    // every point on one line: no quadratic in y can be reproduced
    std::vector<double> pts;
    for (int i = 0; i < 30; ++i) {
        pts.push_back(0.1 * i);
        pts.push_back(0.0);
    }
    auto cloud = std::make_shared<const PointCloud>(2, pts);
    try {
        generate_weights(cloud, {1, 8.0, true});
        FAIL("expected failure");
    } catch (const InvalidArgument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("point 0") != std::string::npos);
        CHECK(msg.find("axis") != std::string::npos);
    }
}

namespace {

// Max error of d/dx sin on n points of [0, 2pi), jittered by up to `jit` spacings.
double sin_derivative_error(std::size_t n, double jit, bool periodic) {
    const double L = 2.0 * std::numbers::pi;
    std::mt19937_64 rng(n);
    std::uniform_real_distribution<double> U(-jit, jit);
    std::vector<double> pts;
    for (std::size_t i = 0; i < n; ++i) pts.push_back((i + 0.5 + (jit > 0 ? U(rng) : 0.0)) * L / double(n));
    auto cloud = periodic ? std::make_shared<const PointCloud>(1, pts, std::vector<double>{L})
                          : std::make_shared<const PointCloud>(1, pts);
    auto w = generate_weights(cloud, {3, 0.0, true});
    auto f = eval(*cloud, [](auto p) { return std::sin(p[0]); });
    std::vector<double> d(n);
    w->partial(f, d, 0);
    double m = 0;
    for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::abs(d[i] - std::cos(pts[i])));
    return m;
}

}  // namespace

TEST_CASE("1D m = 3 refinement on an evenly spaced cloud gains 2^4") {
    // symmetric stencils cancel the degree-4 term
    const double e1 = sin_derivative_error(40, 0.0, true), e2 = sin_derivative_error(80, 0.0, true),
                 e3 = sin_derivative_error(160, 0.0, true);
    MESSAGE("ratios " << e1 / e2 << " " << e2 / e3);
    CHECK(e1 / e2 == doctest::Approx(16.0).epsilon(0.1));
    CHECK(e2 / e3 == doctest::Approx(16.0).epsilon(0.1));
}

TEST_CASE("1D m = 3 refinement on a jittered cloud gains at least 2^3") {
    for (bool periodic : {true, false}) {
        const double e1 = sin_derivative_error(40, 0.2, periodic), e2 = sin_derivative_error(80, 0.2, periodic),
                     e3 = sin_derivative_error(160, 0.2, periodic);
        MESSAGE("periodic " << periodic << " ratios " << e1 / e2 << " " << e2 / e3);
        CHECK(std::log2(e1 / e3) / 2.0 >= 2.8);
    }
}

TEST_CASE("row sums scale like 1/dx and stay bounded") {
    auto a = generate_weights(jittered(12, 12, 0.25, 8), {3, 4.0, true});
    auto b = generate_weights(jittered(24, 24, 0.25, 8), {3, 4.0, true});
    const double sa = a->max_abs_row_sum() * a->cloud().fill_distance();
    const double sb = b->max_abs_row_sum() * b->cloud().fill_distance();
    MESSAGE("row sums * dx: " << sa << " " << sb);
    CHECK(sb <= 2 * sa);
    CHECK(sa <= 2 * sb);
}

TEST_CASE("deterministic and serializable") {
    auto cloud = jittered(8, 8, 0.3, 4);
    auto w1 = generate_weights(cloud, {3, 0.0, true});
    auto w2 = generate_weights(cloud, {3, 0.0, true});
    for (std::size_t k = 0; k < 2; ++k)
        CHECK(std::equal(w1->weights(k).begin(), w1->weights(k).end(), w2->weights(k).begin()));

    const auto dir = std::filesystem::temp_directory_path() / "clawno_mf_test";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    save_weights(*w1, dir / "w.bin");
    auto back = load_weights(cloud, dir / "w.bin");
    CHECK(back->neighbor_lists().indices == w1->neighbor_lists().indices);
    CHECK(std::equal(back->weights(1).begin(), back->weights(1).end(), w1->weights(1).begin()));
    CHECK_THROWS_AS(load_weights(jittered(8, 8, 0.3, 5), dir / "w.bin"), IoError);

    auto c1 = cached_weights(cloud, {3, 0.0, true}, dir);
    auto c2 = cached_weights(cloud, {3, 0.0, true}, dir);
    CHECK(std::equal(c1->weights(0).begin(), c1->weights(0).end(), c2->weights(0).begin()));
    CHECK(std::distance(std::filesystem::directory_iterator(dir), {}) == 2);
    std::filesystem::remove_all(dir);
}

TEST_CASE("adjoint is the transpose") {
    auto cloud = jittered(7, 9, 0.3, 6);
    auto w = generate_weights(cloud, {2, 0.0, true});
    std::mt19937_64 rng(2);
    std::normal_distribution<double> N01;
    std::vector<double> f(cloud->size()), g(cloud->size()), df(f.size()), ag(f.size());
    for (auto& v : f) v = N01(rng);
    for (auto& v : g) v = N01(rng);
    for (std::size_t k = 0; k < 2; ++k) {
        w->partial(f, df, k);
        w->partial_adjoint(g, ag, k);
        CHECK(std::inner_product(df.begin(), df.end(), g.begin(), 0.0) ==
              doctest::Approx(std::inner_product(f.begin(), f.end(), ag.begin(), 0.0)).epsilon(1e-12));
    }
}

TEST_CASE("agrees with Fourier continuation on shared grid points") {
    const std::size_t n = 41;
    BoxGrid box({1.0, 1.0}, {n, n});
    FcPlan fc(box);
    std::vector<double> pts;
    for (std::size_t i = 0; i < box.size(); ++i) {
        pts.push_back(box.coord(i, 0));
        pts.push_back(box.coord(i, 1));
    }
    auto cloud = std::make_shared<const PointCloud>(2, pts);
    auto mf = generate_weights(cloud, {5, 0.0, true});
    std::vector<double> f(box.size()), a(box.size()), b(box.size());
    for (std::size_t i = 0; i < box.size(); ++i) f[i] = std::sin(box.coord(i, 0) + 0.5) * std::exp(0.5 * box.coord(i, 1));
    for (std::size_t k = 0; k < 2; ++k) {
        fc.partial(f, a, k);
        mf->partial(f, b, k);
        double m = 0;
        for (std::size_t i = 0; i < box.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
        MESSAGE("axis " << k << " max difference " << m);
        CHECK(m <= 1e-6);
    }
}
