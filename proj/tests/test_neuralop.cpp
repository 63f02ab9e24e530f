#include "doctest.h"

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <random>

#include "clawno/clawcore.hpp"
#include "clawno/neuralop.hpp"
#include "clawno/specdiff.hpp"

using namespace clawno;

namespace {

using Build = std::function<DiffTensor(Tape&, const std::vector<DiffTensor>&)>;

struct Input {
    std::vector<std::size_t> shape;
    std::vector<double> values;
};

// Relative gap between a reverse-mode and a central-difference derivative. Entries
// too small for the difference quotient to resolve at `tol` are measured against
// its roundoff level, 10 eps |L| / h.
double relative_gap(double fd, double g, double loss, double h, double tol) {
    const double noise = 10 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(loss)) / h;
    return std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), noise / tol});
}

// Largest relative_gap over up to `samples` entries per input.
double grad_mismatch(const Build& build, std::vector<Input> inputs, std::size_t samples = 40, double h = 1e-6) {
    Tape tape;
    std::vector<DiffTensor> leaves;
    for (const auto& in : inputs) leaves.push_back(tape.leaf(in.shape, in.values, true));
    const DiffTensor loss = build(tape, leaves);
    tape.backward(loss);
    std::vector<std::vector<double>> grads;
    for (const auto& l : leaves) grads.emplace_back(l.grad().begin(), l.grad().end());

    auto eval = [&] {
        Tape t;
        std::vector<DiffTensor> ls;
        for (const auto& in : inputs) ls.push_back(t.leaf(in.shape, in.values, true));
        return build(t, ls).item();
    };
    std::mt19937_64 rng(11);
    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const std::size_t n = inputs[k].values.size();
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        for (std::size_t s = 0; s < std::min(samples, n); ++s) {
            const std::size_t j = n <= samples ? s : pick(rng);
            const double keep = inputs[k].values[j];
            inputs[k].values[j] = keep + h;
            const double up = eval();
            inputs[k].values[j] = keep - h;
            const double dn = eval();
            inputs[k].values[j] = keep;
            const double fd = (up - dn) / (2 * h);
            worst = std::max(worst, relative_gap(fd, grads[k][j], loss.item(), h, 1e-5));
        }
    }
    return worst;
}

std::vector<double> randn(std::size_t n, std::uint64_t seed, double s = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> N01;
    std::vector<double> v(n);
    for (auto& x : v) x = s * N01(rng);
    return v;
}

Field smooth_input(const PeriodicGrid& grid, std::size_t channels, std::uint64_t seed) {
    return band_limited_field(grid, channels, seed);
}

double rel_divergence(const Field& out, std::size_t p) {
    Field u(out.domain(), p, std::vector<double>(out.values().begin(), out.values().begin() + std::ptrdiff_t(p * out.points())));
    return spectral_divergence_l2(u) / rms(u);
}

}  // namespace

TEST_CASE("tape basics") {
    Tape t;
    auto a = t.leaf({3}, {1.0, 2.0, 3.0}, true);
    auto loss = sum_squares(scale(a, 2.0));
    CHECK(loss.item() == doctest::Approx(56.0));
    t.backward(loss);
    CHECK(a.grad()[2] == doctest::Approx(24.0));

    DiffTensor detached;
    CHECK_THROWS_AS(t.backward(detached), InvalidArgument);
    CHECK_THROWS_AS(t.backward(a), InvalidArgument);
    CHECK_THROWS_AS(gelu(detached), InvalidArgument);

    Tape other;
    auto b = other.leaf({3}, {1.0, 1.0, 1.0}, true);
    CHECK_THROWS_AS(add(a, b), InvalidArgument);
}

TEST_CASE("constant loss has zero gradient") {
    const PeriodicGrid grid({1.0, 1.0}, {8, 8});
    const ClawFnoModel model({.in_channels = 2, .width = 4, .layers = 1, .modes = 4, .proj_hidden = 8}, 2, 3);
    Tape t;
    auto pass = model.forward(t, smooth_input(grid, 2, 1));
    t.backward(scale(sum_squares(pass.output), 0.0));
    for (const auto& p : pass.params)
        for (double g : p.grad()) CHECK(g == 0.0);
}

TEST_CASE("pointwise ops match finite differences") {
    const Build b = [](Tape&, const std::vector<DiffTensor>& in) {
        return sum_squares(gelu(add(channel_affine(in[0], in[1], in[2]), in[3])));
    };
    const double e = grad_mismatch(b, {{{3, 10}, randn(30, 1)}, {{2, 3}, randn(6, 2)}, {{2}, randn(2, 3)}, {{2, 10}, randn(20, 4)}});
    CHECK(e <= 1e-5);
}

TEST_CASE("lift is a pointwise affine map") {
    const PeriodicGrid grid({1.0, 1.0}, {8, 8});
    Field in = smooth_input(grid, 3, 2);
    Tape t;
    auto x = t.leaf({3, grid.size()}, in.values(), false);

    SUBCASE("zero weights give the bias") {
        auto W = t.leaf({5, 3}, std::vector<double>(15, 0.0), true);
        auto b = t.leaf({5}, {1, 2, 3, 4, 5}, true);
        auto y = channel_affine(x, W, b);
        for (std::size_t o = 0; o < 5; ++o)
            for (std::size_t n = 0; n < grid.size(); ++n) CHECK(y.values()[o * grid.size() + n] == double(o + 1));
    }
    SUBCASE("identity embedding reproduces the input") {
        std::vector<double> w(5 * 3, 0.0);
        for (std::size_t i = 0; i < 3; ++i) w[i * 3 + i] = 1.0;
        auto y = channel_affine(x, t.leaf({5, 3}, w, true), t.leaf({5}, std::vector<double>(5, 0.0), true));
        for (std::size_t n = 0; n < 3 * grid.size(); ++n) CHECK(y.values()[n] == in.values()[n]);
    }
    SUBCASE("default width") {
        const ClawFnoModel model({}, 2, 1);
        Tape t2;
        auto pass = model.forward(t2, smooth_input(PeriodicGrid({1.0, 1.0}, {32, 32}), 2, 3));
        CHECK(pass.lifted.shape()[0] == 20);
        CHECK(model.config().modes == 12);
    }
}

TEST_CASE("retained modes and clipping") {
    const PeriodicGrid g32({1.0, 1.0}, {32, 32});
    const SpectralConvPlan plan(g32, 12);
    CHECK(plan.box_size() == 144);
    for (const auto& m : plan.retained()) {
        const auto idx = g32.unravel(m.flat);
        CHECK(std::labs(signed_frequency(idx[0], 32)) <= 6);
        CHECK(std::labs(signed_frequency(idx[1], 32)) < 12);
    }
    // each stored entry appears once directly; the mirror is added unless it is stored too
    std::size_t direct = 0;
    for (const auto& m : plan.retained()) direct += !m.conjugate;
    CHECK(direct == 144);

    const PeriodicGrid g8({1.0, 1.0}, {8, 8});
    const SpectralConvPlan small(g8, 12);
    for (const auto& m : small.retained()) {
        const auto idx = g8.unravel(m.flat);
        CHECK(std::labs(signed_frequency(idx[0], 8)) <= 2);
        CHECK(std::labs(signed_frequency(idx[1], 8)) < 4);
    }
}

TEST_CASE("fourier layer identity and frequency locality") {
    const PeriodicGrid grid({1.0, 1.0}, {16, 16});
    const SpectralConvPlan plan(grid, 6);
    const std::size_t H = 3, M = grid.size();
    Tape t;
    Field in = smooth_input(grid, H, 4);
    auto h = t.leaf({H, M}, in.values(), true);
    std::vector<double> eye(H * H, 0.0);
    for (std::size_t i = 0; i < H; ++i) eye[i * H + i] = 1.0;
    auto W = t.leaf({H, H}, eye, true);
    auto c = t.leaf({H}, std::vector<double>(H, 0.0), true);

    auto A0 = t.leaf({plan.box_size(), H, H, 2}, std::vector<double>(plan.box_size() * H * H * 2, 0.0), true);
    auto y = fourier_layer(h, A0, W, c, plan, Activation::Identity);
    for (std::size_t n = 0; n < H * M; ++n) CHECK(y.values()[n] == doctest::Approx(in.values()[n]).epsilon(1e-15));

    // a constant field only sees the zero mode
    std::vector<double> A(plan.box_size() * H * H * 2, 0.0);
    std::size_t zero_slot = 0;
    for (const auto& m : plan.retained())
        if (m.flat == 0) zero_slot = m.stored;
    auto a = randn(H * H * 2, 9);
    std::copy(a.begin(), a.end(), A.begin() + std::ptrdiff_t(zero_slot * H * H * 2));
    std::vector<double> cst(H * M);
    for (std::size_t i = 0; i < H; ++i)
        for (std::size_t n = 0; n < M; ++n) cst[i * M + n] = double(i) - 0.7;
    auto yc = spectral_conv(t.leaf({H, M}, cst, false), t.leaf({plan.box_size(), H, H, 2}, A, false), plan);
    for (std::size_t o = 0; o < H; ++o)
        for (std::size_t n = 1; n < M; ++n) CHECK(yc.values()[o * M + n] == doctest::Approx(yc.values()[o * M]).epsilon(1e-13));
}

TEST_CASE("fourier layer gradients match finite differences") {
    const PeriodicGrid grid({1.0, 2.0}, {8, 12});
    const SpectralConvPlan plan(grid, 4);
    const std::size_t H = 3, M = grid.size();
    const Build b = [&](Tape&, const std::vector<DiffTensor>& in) {
        return sum_squares(fourier_layer(in[0], in[1], in[2], in[3], plan));
    };
    const double e = grad_mismatch(b, {{{H, M}, randn(H * M, 1)},
                                       {{plan.box_size(), H, H, 2}, randn(plan.box_size() * H * H * 2, 2, 0.3)},
                                       {{H, H}, randn(H * H, 3)},
                                       {{H}, randn(H, 4)}});
    CHECK(e <= 1e-5);
}

TEST_CASE("spectral convolution output is real-consistent under mirrored storage") {
    // the stored weights act on xi and, conjugated, on -xi: a real input gives
    // the same output as an explicitly Hermitian full-spectrum multiplication
    const PeriodicGrid grid({1.0, 1.0}, {8, 8});
    const SpectralConvPlan plan(grid, 4);
    const std::size_t M = grid.size();
    auto A = randn(plan.box_size() * 2, 5);
    Field in = smooth_input(grid, 1, 3);
    Tape t;
    auto y = spectral_conv(t.leaf({1, M}, in.values(), false), t.leaf({plan.box_size(), 1, 1, 2}, A, false), plan);

    std::vector<Complex> spec(M);
    plan.fft().forward_real(in.values(), spec);
    std::vector<Complex> out(M, 0.0), seen(M, 0.0);
    std::vector<int> hits(M, 0);
    for (const auto& m : plan.retained()) {
        Complex a(A[2 * m.stored], A[2 * m.stored + 1]);
        if (m.conjugate) a = std::conj(a);
        out[m.flat] += a * spec[m.flat];
        ++hits[m.flat];
    }
    for (std::size_t n = 0; n < M; ++n) CHECK(hits[n] <= 1);
    plan.fft().inverse(out);
    for (std::size_t n = 0; n < M; ++n) CHECK(y.values()[n] == doctest::Approx(out[n].real()).epsilon(1e-12));
}

TEST_CASE("parameter accounting") {
    const std::size_t H = 20, m = 12, dQ = 128, p = 2;
    const ClawFnoModel claw({.in_channels = 2, .width = H, .layers = 4, .modes = m, .proj_hidden = dQ}, p, 1);
    const ClawFnoModel fno({.in_channels = 2, .width = H, .layers = 4, .modes = m, .proj_hidden = dQ, .claw = false}, p, 1);
    CHECK(claw.parameter("layer0.A").values.size() + claw.parameter("layer0.W").values.size() +
              claw.parameter("layer0.c").values.size() ==
          2 * H * H * m * m + H * H + H);
    CHECK(fno.parameter_count() - claw.parameter_count() == (dQ + 1) * p - (dQ + 1) * p * (p - 1) / 2);
    for (const auto& prm : claw.parameters())
        if (prm.name.rfind("proj.out", 0) != 0) CHECK(prm.values == fno.parameter(prm.name).values);

    const ClawFnoModel claw3({.in_channels = 3, .width = 4, .layers = 1, .modes = 2, .proj_hidden = 8}, 3, 1);
    CHECK(claw3.raw_channels() == 3);
    CHECK(claw.raw_channels() == 1);
}

TEST_CASE("zero projection gives a zero output") {
    ClawFnoModel model({.in_channels = 2, .width = 4, .layers = 2, .modes = 4, .proj_hidden = 8}, 2, 5);
    for (auto& prm : model.parameters())
        if (prm.name.rfind("proj.out", 0) == 0) std::fill(prm.values.begin(), prm.values.end(), 0.0);
    const Field out = model.predict(smooth_input(PeriodicGrid({1.0, 1.0}, {16, 16}), 2, 7));
    for (double v : out.values()) CHECK(v == 0.0);
}

TEST_CASE("random models are divergence free at any resolution") {
    const PeriodicGrid g32({1.0, 1.0}, {32, 32}), g64({1.0, 1.0}, {64, 64});
    double worst32 = 0, worst64 = 0, least_fno = 1e300;
    for (std::uint64_t s = 0; s < 10; ++s) {
        const ClawFnoModel claw({.in_channels = 2, .width = 8, .layers = 2}, 2, s);
        const ClawFnoModel fno({.in_channels = 2, .width = 8, .layers = 2, .claw = false}, 2, s);
        worst32 = std::max(worst32, rel_divergence(claw.predict(smooth_input(g32, 2, 100 + s)), 2));
        worst64 = std::max(worst64, rel_divergence(claw.predict(smooth_input(g64, 2, 100 + s)), 2));
        least_fno = std::min(least_fno, rel_divergence(fno.predict(smooth_input(g32, 2, 100 + s)), 2));
    }
    MESSAGE("claw 32: " << worst32 << " claw 64: " << worst64 << " fno: " << least_fno);
    CHECK(worst32 <= 1e-10);
    CHECK(worst64 <= 1e-10);
    CHECK(least_fno > 1e-3);
}

TEST_CASE("mixed output keeps extra channels") {
    const PeriodicGrid grid({1.0, 1.0}, {16, 16});
    const ClawFnoModel model({.in_channels = 2, .width = 6, .layers = 1, .modes = 4, .proj_hidden = 8, .extra_channels = 1}, 2, 2);
    CHECK(model.raw_channels() == 2);
    Tape t;
    auto pass = model.forward(t, smooth_input(grid, 2, 3));
    CHECK(pass.output.shape()[0] == 3);
    const auto M = grid.size();
    for (std::size_t n = 0; n < M; ++n) CHECK(pass.output.values()[2 * M + n] == pass.raw.values()[M + n]);
    CHECK(rel_divergence(Field(grid, 3, std::vector<double>(pass.output.values().begin(), pass.output.values().end())), 2) <= 1e-10);
}

TEST_CASE("claw layer gradient is the adjoint divergence") {
    const PeriodicGrid grid({1.0, 1.0}, {16, 16});
    const SpectralPlan plan(grid);
    const auto mu = randn(grid.size(), 4);
    Tape t;
    auto m = t.leaf({1, grid.size()}, mu, true);
    auto u = claw_layer(m, plan);
    t.backward(scale(sum_squares(u), 0.5));
    const Field uf(grid, 2, std::vector<double>(u.values().begin(), u.values().end()));
    const Field expect = claw_divergence_adjoint(uf, plan);
    for (std::size_t n = 0; n < grid.size(); ++n) CHECK(m.grad()[n] == doctest::Approx(expect.values()[n]).epsilon(1e-12));

    const Build b = [&](Tape&, const std::vector<DiffTensor>& in) { return scale(sum_squares(claw_layer(in[0], plan)), 0.5); };
    CHECK(grad_mismatch(b, {{{1, grid.size()}, mu}}) <= 1e-5);
}

TEST_CASE("full model gradient matches finite differences") {
    const PeriodicGrid grid({1.0, 1.0}, {8, 8});
    ClawFnoModel model({.in_channels = 2, .width = 4, .layers = 2, .modes = 4, .proj_hidden = 16}, 2, 21);
    const Field in = smooth_input(grid, 2, 5);
    const Field truth = smooth_input(grid, 2, 6);
    auto loss_of = [&] {
        Tape t;
        return relative_l2(model.forward(t, in).output, truth.values()).item();
    };
    Tape t;
    auto pass = model.forward(t, in);
    const DiffTensor loss = relative_l2(pass.output, truth.values());
    t.backward(loss);
    const double pass_loss = loss.item();

    std::mt19937_64 rng(8);
    std::uniform_int_distribution<std::size_t> which(0, model.parameters().size() - 1);
    double worst = 0;
    for (int s = 0; s < 50; ++s) {
        const std::size_t k = which(rng);
        auto& vals = model.parameters()[k].values;
        const std::size_t j = std::uniform_int_distribution<std::size_t>(0, vals.size() - 1)(rng);
        const double keep = vals[j], h = 1e-6;
        vals[j] = keep + h;
        const double up = loss_of();
        vals[j] = keep - h;
        const double dn = loss_of();
        vals[j] = keep;
        const double fd = (up - dn) / (2 * h), g = pass.params[k].grad()[j];
        worst = std::max(worst, relative_gap(fd, g, pass_loss, h, 1e-4));
    }
    MESSAGE("worst relative gradient error " << worst);
    CHECK(worst <= 1e-4);
}

TEST_CASE("relative l2 loss") {
    const PeriodicGrid grid({1.0, 1.0}, {8, 8});
    const Field truth = smooth_input(grid, 2, 1);
    Field same = truth, zero(grid, 2), scaled = truth;
    for (auto& v : scaled.values()) v *= 1.1;
    CHECK(relative_l2_loss(std::vector{same}, std::vector{truth}) == 0.0);
    CHECK(relative_l2_loss(std::vector{zero}, std::vector{truth}) == doctest::Approx(1.0));
    CHECK(relative_l2_loss(std::vector{scaled}, std::vector{truth}) == doctest::Approx(0.01));
    CHECK(relative_l2_loss(std::vector{scaled, zero}, std::vector{truth, truth}) == doctest::Approx(0.505));
    CHECK_THROWS_AS(relative_l2_loss(std::vector{truth}, std::vector{zero}), InvalidArgument);
}

TEST_CASE("spectral convolution is resolution independent on band-limited data") {
    const PeriodicGrid g32({1.0, 1.0}, {32, 32}), g64({1.0, 1.0}, {64, 64});
    const SpectralConvPlan p32(g32, 8), p64(g64, 8);
    const std::size_t H = 2;
    auto sample = [](const PeriodicGrid& g) {
        return sample_on(g, 2, [](auto x, std::size_t c) {
            const double t = 2 * std::numbers::pi;
            return c == 0 ? std::sin(t * x[0]) * std::cos(2 * t * x[1]) : std::cos(t * (x[0] + 3 * x[1]));
        });
    };
    const auto A = randn(p32.box_size() * H * H * 2, 3);
    Tape t;
    const Field a = sample(g32), b = sample(g64);
    auto ya = spectral_conv(t.leaf({H, g32.size()}, a.values(), false), t.leaf({p32.box_size(), H, H, 2}, A, false), p32);
    auto yb = spectral_conv(t.leaf({H, g64.size()}, b.values(), false), t.leaf({p64.box_size(), H, H, 2}, A, false), p64);
    double worst = 0;
    for (std::size_t c = 0; c < H; ++c)
        for (std::size_t i = 0; i < 32; ++i)
            for (std::size_t j = 0; j < 32; ++j)
                worst = std::max(worst, std::abs(ya.values()[c * 1024 + i * 32 + j] - yb.values()[c * 4096 + 2 * i * 64 + 2 * j]));
    CHECK(worst <= 1e-12);

    // the full model is not: GELU and the non-periodic coordinate channels put
    // energy above the retained band, and the claw layer differentiates it
    const ClawFnoModel model({.in_channels = 2, .width = 8, .layers = 2, .modes = 8}, 2, 4);
    const Field ma = model.predict(a), mb = model.predict(b);
    double gap = 0;
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < 32; ++i)
            for (std::size_t j = 0; j < 32; ++j) gap = std::max(gap, std::abs(ma.at(c, i * 32 + j) - mb.at(c, 2 * i * 64 + 2 * j)));
    MESSAGE("full model 32 vs 64 max gap " << gap);
    CHECK(std::isfinite(gap));
}
