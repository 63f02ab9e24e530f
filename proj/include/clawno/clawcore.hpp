#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "clawno/backend.hpp"
#include "clawno/geometry.hpp"

namespace clawno {

/// p(p-1)/2.
std::size_t skew_channel_count(std::size_t p);

/// Row-major enumeration of the strict upper triangle: (0,1), (0,2), ..., (1,2), ...
std::size_t skew_channel_index(std::size_t i, std::size_t j, std::size_t p);

/**
 * Independent entries mu_ij (i < j) of a skew-symmetric matrix field, one
 * channel per pair in skew_channel_index order. p is the domain dimension.
 */
class SkewField {
public:
    explicit SkewField(Field values);

    std::size_t dim() const { return p_; }
    const Field& field() const { return values_; }
    Field& field() { return values_; }
    const Domain& domain() const { return values_.domain(); }

    /// mu_ij with the implied mu_ii = 0 and mu_ji = -mu_ij.
    double entry(std::size_t i, std::size_t j, std::size_t point) const;

private:
    Field values_;
    std::size_t p_;
};

/// Full p x p matrix field, channel i*p + j holding mu_ij.
Field assemble_skew(const SkewField& skew);

/// Inverse of assemble_skew on the strict upper triangle.
SkewField extract_skew(const Field& full);

struct DivFreeField {
    Field field;
    std::string backend;
};

/// u_j = sum_k d/dx_k mu_jk (row-wise divergence of the skew matrix).
DivFreeField claw_divergence(const SkewField& skew, const DiffBackend& backend);

/// Transpose of claw_divergence: gradient w.r.t. the skew channels given dL/du.
Field claw_divergence_adjoint(const Field& grad_u, const DiffBackend& backend);

/// sum_k d u_k / d x_k.
Field divergence(const Field& u, const DiffBackend& backend);

/**
 * First p(p-1)/2 channels of `raw` go through the claw layer, the remaining
 * `raw.channels() - p(p-1)/2` channels are passed through unchanged.
 */
Field mixed_output(const Field& raw, const DiffBackend& backend);

/// RMS of the spectral divergence on the field's periodic grid.
double spectral_divergence_l2(const Field& u);

/// Root mean square over all channels and points.
double rms(const Field& f);

/**
 * Real random field whose Fourier modes are zero whenever some |xi_k| > N_k/4.
 * Deterministic in `seed`.
 */
Field band_limited_field(const PeriodicGrid& grid, std::size_t channels, std::uint64_t seed);

}  // namespace clawno
