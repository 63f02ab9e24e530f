#include "clawno/clawcore.hpp"

#include <cmath>
#include <random>

#include "clawno/fft.hpp"
#include "clawno/specdiff.hpp"

namespace clawno {

std::size_t skew_channel_count(std::size_t p) { return p * (p - 1) / 2; }

std::size_t skew_channel_index(std::size_t i, std::size_t j, std::size_t p) {
    if (!(i < j && j < p))
        throw InvalidArgument("skew channel (" + std::to_string(i) + "," + std::to_string(j) +
                              ") needs i < j < p = " + std::to_string(p));
    return i * p - i * (i + 1) / 2 + (j - i - 1);
}

SkewField::SkewField(Field values) : values_(std::move(values)), p_(values_.domain().dim()) {
    if (p_ < 2) throw InvalidArgument("skew fields need at least two spatial dimensions");
    if (values_.channels() != skew_channel_count(p_))
        throw InvalidArgument("a skew field in " + std::to_string(p_) + " dimensions has " +
                              std::to_string(skew_channel_count(p_)) + " channels, got " +
                              std::to_string(values_.channels()));
}

double SkewField::entry(std::size_t i, std::size_t j, std::size_t point) const {
    if (i == j) return 0.0;
    if (i < j) return values_.at(skew_channel_index(i, j, p_), point);
    return -values_.at(skew_channel_index(j, i, p_), point);
}

Field assemble_skew(const SkewField& skew) {
    const std::size_t p = skew.dim(), M = skew.field().points();
    Field full(skew.domain(), p * p);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = i + 1; j < p; ++j) {
            auto src = skew.field().channel(skew_channel_index(i, j, p));
            auto up = full.channel(i * p + j);
            auto lo = full.channel(j * p + i);
            for (std::size_t n = 0; n < M; ++n) {
                up[n] = src[n];
                lo[n] = -src[n];
            }
        }
    return full;
}

SkewField extract_skew(const Field& full) {
    const std::size_t p = full.domain().dim();
    if (full.channels() != p * p) throw InvalidArgument("expected p*p channels");
    Field out(full.domain(), skew_channel_count(p));
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = i + 1; j < p; ++j) {
            auto src = full.channel(i * p + j);
            auto dst = out.channel(skew_channel_index(i, j, p));
            std::copy(src.begin(), src.end(), dst.begin());
        }
    return SkewField(std::move(out));
}

DivFreeField claw_divergence(const SkewField& skew, const DiffBackend& backend) {
    backend.require_domain(skew.domain());
    const std::size_t p = skew.dim(), M = skew.field().points();
    Field u(skew.domain(), p);
    std::vector<double> d(M);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = i + 1; j < p; ++j) {
            auto mu = skew.field().channel(skew_channel_index(i, j, p));
            // u_i += d_j mu_ij
            backend.partial(mu, d, j);
            auto ui = u.channel(i);
            for (std::size_t n = 0; n < M; ++n) ui[n] += d[n];
            // u_j += d_i mu_ji = -d_i mu_ij
            backend.partial(mu, d, i);
            auto uj = u.channel(j);
            for (std::size_t n = 0; n < M; ++n) uj[n] -= d[n];
        }
    return {std::move(u), std::string(backend.name())};
}

Field claw_divergence_adjoint(const Field& grad_u, const DiffBackend& backend) {
    backend.require_domain(grad_u.domain());
    const std::size_t p = grad_u.domain().dim(), M = grad_u.points();
    if (grad_u.channels() != p) throw InvalidArgument("gradient must have one channel per axis");
    Field g(grad_u.domain(), skew_channel_count(p));
    std::vector<double> d(M);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = i + 1; j < p; ++j) {
            auto out = g.channel(skew_channel_index(i, j, p));
            backend.partial_adjoint(grad_u.channel(i), d, j);
            for (std::size_t n = 0; n < M; ++n) out[n] += d[n];
            backend.partial_adjoint(grad_u.channel(j), d, i);
            for (std::size_t n = 0; n < M; ++n) out[n] -= d[n];
        }
    return g;
}

Field divergence(const Field& u, const DiffBackend& backend) {
    backend.require_domain(u.domain());
    const std::size_t p = u.domain().dim(), M = u.points();
    if (u.channels() != p)
        throw InvalidArgument("divergence needs " + std::to_string(p) + " channels, got " +
                              std::to_string(u.channels()));
    Field div(u.domain(), 1);
    std::vector<double> d(M);
    auto out = div.channel(0);
    for (std::size_t k = 0; k < p; ++k) {
        backend.partial(u.channel(k), d, k);
        for (std::size_t n = 0; n < M; ++n) out[n] += d[n];
    }
    return div;
}

Field mixed_output(const Field& raw, const DiffBackend& backend) {
    const std::size_t p = raw.domain().dim(), s = skew_channel_count(p);
    if (raw.channels() < s)
        throw InvalidArgument("mixed output needs at least " + std::to_string(s) + " channels, got " +
                              std::to_string(raw.channels()));
    const std::size_t extra = raw.channels() - s, M = raw.points();
    std::vector<double> head(raw.values().begin(), raw.values().begin() + std::ptrdiff_t(s * M));
    auto u = claw_divergence(SkewField(Field(raw.domain(), s, std::move(head))), backend);
    Field out(raw.domain(), p + extra);
    std::copy(u.field.values().begin(), u.field.values().end(), out.values().begin());
    std::copy(raw.values().begin() + std::ptrdiff_t(s * M), raw.values().end(),
              out.values().begin() + std::ptrdiff_t(p * M));
    return out;
}

double rms(const Field& f) {
    double s = 0.0;
    for (double v : f.values()) s += v * v;
    return std::sqrt(s / double(f.values().size()));
}

double spectral_divergence_l2(const Field& u) {
    const auto* g = u.domain().periodic();
    if (!g) throw InvalidArgument("spectral divergence needs a periodic grid field");
    SpectralPlan plan(*g);
    return rms(divergence(u, plan));
}

Field band_limited_field(const PeriodicGrid& grid, std::size_t channels, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> N01;
    FftPlan fft(grid.counts());
    Field out(grid, channels);
    std::vector<Complex> buf(grid.size());
    for (std::size_t c = 0; c < channels; ++c) {
        for (auto& z : buf) z = Complex(N01(rng), 0.0);
        fft.forward(buf);
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const auto idx = grid.unravel(i);
            for (std::size_t k = 0; k < grid.dim(); ++k)
                if (4 * std::size_t(std::labs(signed_frequency(idx[k], grid.count(k)))) > grid.count(k)) {
                    buf[i] = 0.0;
                    break;
                }
        }
        fft.inverse(buf);
        auto ch = out.channel(c);
        for (std::size_t i = 0; i < grid.size(); ++i) ch[i] = buf[i].real();
    }
    return out;
}

}  // namespace clawno
