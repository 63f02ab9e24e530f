#pragma once

#include <cstddef>
#include <span>
#include <string_view>

#include "clawno/geometry.hpp"

namespace clawno {

/**
 * A precomputed, immutable first-derivative operator on one discretization.
 *
 * partial() applies d/dx_axis to a single scalar channel; partial_adjoint()
 * applies the transpose of that linear map (used by reverse-mode gradients).
 * Implementations hold no mutable state and may be shared across threads.
 */
class DiffBackend {
public:
    virtual ~DiffBackend() = default;

    virtual const Domain& domain() const = 0;
    virtual std::string_view name() const = 0;

    virtual void partial(std::span<const double> in, std::span<double> out,
                         std::size_t axis) const = 0;
    virtual void partial_adjoint(std::span<const double> in, std::span<double> out,
                                 std::size_t axis) const = 0;

    std::size_t dim() const { return domain().dim(); }
    std::size_t size() const { return domain().size(); }

    /// Throws DomainMismatch unless `other` is this backend's discretization.
    void require_domain(const Domain& other) const;
};

}  // namespace clawno
