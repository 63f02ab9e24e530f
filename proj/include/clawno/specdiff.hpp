#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "clawno/backend.hpp"
#include "clawno/fft.hpp"
#include "clawno/geometry.hpp"

namespace clawno {

/**
 * Fourier differentiation on a periodic uniform grid.
 *
 * d/dx_k is applied as forward FFT, multiplication by i*2*pi*xi_k/L_k and
 * inverse FFT. The multiplier of the unpaired Nyquist mode xi = -N/2 is zero
 * so the derivative of a real field stays real and the operator is exactly
 * skew-adjoint.
 */
class SpectralPlan final : public DiffBackend {
public:
    explicit SpectralPlan(PeriodicGrid grid);

    const Domain& domain() const override { return domain_; }
    std::string_view name() const override { return "spectral"; }
    const PeriodicGrid& grid() const { return grid_; }

    void partial(std::span<const double> in, std::span<double> out, std::size_t axis) const override;
    void partial_adjoint(std::span<const double> in, std::span<double> out,
                         std::size_t axis) const override;

    /// Real factor kappa with d/dx_axis <-> i*kappa at FFT bin `bin` on `axis`.
    double wavenumber(std::size_t axis, std::size_t bin) const { return kappa_[axis][bin]; }
    const FftPlan& fft() const { return *fft_; }

    /// Applies i*kappa along `axis` to a spectrum already in FFT layout.
    void multiply(std::span<Complex> spectrum, std::size_t axis) const;

private:
    PeriodicGrid grid_;
    Domain domain_;
    std::vector<std::vector<double>> kappa_;
    std::shared_ptr<const FftPlan> fft_;
};

Field spectral_partial(const SpectralPlan& plan, const Field& field, std::size_t axis);

/// Precomputed one-sided Gram blend tables, in units of grid steps.
struct FcTables {
    std::size_t order = 0;
    std::size_t extension = 0;
    /// order x order orthonormal Gram basis sampled on the matching points.
    std::vector<double> gram;
    /// extension x order values of each Gram polynomial's blend to zero.
    std::vector<double> blend;
    /// Largest pointwise misfit of the blend fit (diagnostic).
    double fit_residual = 0.0;
};

/// Builds (and caches) the continuation tables for a given order and extension.
std::shared_ptr<const FcTables> fc_tables(std::size_t order, std::size_t extension);

struct FcOptions {
    std::size_t extension = 30;
    std::size_t order = 10;
};

/**
 * Fourier-continuation differentiation on a non-periodic uniform grid.
 *
 * Each line of n samples is extended to n+d periodic samples: the gap is the
 * sum of a blend of the last `order` samples decaying to the right and the
 * mirrored blend of the first `order` samples. The extended line is
 * differentiated spectrally and restricted back to the n original nodes.
 * d is bumped by one when n+d would be odd.
 */
class FcPlan final : public DiffBackend {
public:
    explicit FcPlan(BoxGrid grid, FcOptions options = {});

    const Domain& domain() const override { return domain_; }
    std::string_view name() const override { return "fourier-continuation"; }
    const BoxGrid& grid() const { return grid_; }
    std::size_t extension(std::size_t axis) const { return axes_.at(axis).tables->extension; }
    std::size_t order() const { return options_.order; }

    void partial(std::span<const double> in, std::span<double> out, std::size_t axis) const override;
    void partial_adjoint(std::span<const double> in, std::span<double> out,
                         std::size_t axis) const override;

    /// Extends one line of n samples to n + extension(axis) periodic samples.
    std::vector<double> extend_line(std::span<const double> line, std::size_t axis) const;

private:
    struct Axis {
        std::shared_ptr<const FcTables> tables;
        std::unique_ptr<SpectralPlan> line;
    };
    void apply(std::span<const double> in, std::span<double> out, std::size_t axis, bool adjoint) const;
    void extend_into(std::span<const double> line, std::span<double> ext, const FcTables& t) const;
    void extend_adjoint(std::span<const double> ext, std::span<double> line, const FcTables& t) const;

    BoxGrid grid_;
    Domain domain_;
    FcOptions options_;
    std::vector<Axis> axes_;
};

Field fc_partial(const FcPlan& plan, const Field& field, std::size_t axis);

/// Applies any backend channel-by-channel along one axis.
Field apply_partial(const DiffBackend& backend, const Field& field, std::size_t axis);

}  // namespace clawno
