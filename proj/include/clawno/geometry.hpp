#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace clawno {

/// Raised for any violated precondition on user-supplied arguments.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when two operands live on different discretizations.
class DomainMismatch : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/**
 * Uniform grid on the torus prod_i [0, L_i).
 *
 * Coordinates are x_k = k * L / N for k = 0..N-1 on every axis; the point at
 * L coincides with 0 and is not stored. Every count must be even so that the
 * symmetric mode range -N/2 .. N/2-1 is well defined.
 *
 * Flat indices are row-major over the axes: the last axis varies fastest.
 */
class PeriodicGrid {
public:
    PeriodicGrid(std::vector<double> lengths, std::vector<std::size_t> counts);

    std::size_t dim() const { return counts_.size(); }
    std::size_t size() const { return size_; }
    const std::vector<double>& lengths() const { return lengths_; }
    const std::vector<std::size_t>& counts() const { return counts_; }
    double length(std::size_t axis) const { return lengths_.at(axis); }
    std::size_t count(std::size_t axis) const { return counts_.at(axis); }
    double spacing(std::size_t axis) const { return lengths_.at(axis) / double(counts_.at(axis)); }
    /// Distance between consecutive flat indices along `axis`.
    std::size_t stride(std::size_t axis) const { return strides_.at(axis); }

    std::vector<std::size_t> unravel(std::size_t flat) const;
    std::size_t ravel(std::span<const std::size_t> index) const;
    double coord(std::size_t flat, std::size_t axis) const;
    std::vector<double> coords(std::size_t flat) const;

    bool operator==(const PeriodicGrid& other) const = default;

private:
    std::vector<double> lengths_;
    std::vector<std::size_t> counts_;
    std::vector<std::size_t> strides_;
    std::size_t size_ = 0;
};

PeriodicGrid make_periodic_grid(std::size_t p, std::vector<double> lengths,
                                std::vector<std::size_t> counts);

/// Appends a time axis of length T with Nt samples as the last axis.
PeriodicGrid augment_spacetime(const PeriodicGrid& grid, double T, std::size_t Nt);

/**
 * Uniform non-periodic grid on prod_i [0, L_i], endpoints included:
 * x_k = k * L / (N - 1). Used by the Fourier-continuation backend.
 */
class BoxGrid {
public:
    BoxGrid(std::vector<double> lengths, std::vector<std::size_t> counts);

    std::size_t dim() const { return counts_.size(); }
    std::size_t size() const { return size_; }
    const std::vector<double>& lengths() const { return lengths_; }
    const std::vector<std::size_t>& counts() const { return counts_; }
    std::size_t count(std::size_t axis) const { return counts_.at(axis); }
    double spacing(std::size_t axis) const {
        return lengths_.at(axis) / double(counts_.at(axis) - 1);
    }
    std::size_t stride(std::size_t axis) const { return strides_.at(axis); }
    std::vector<std::size_t> unravel(std::size_t flat) const;
    double coord(std::size_t flat, std::size_t axis) const;

    bool operator==(const BoxGrid& other) const = default;

private:
    std::vector<double> lengths_;
    std::vector<std::size_t> counts_;
    std::vector<std::size_t> strides_;
    std::size_t size_ = 0;
};

/**
 * Scattered points in R^p, stored row-major (M x p).
 *
 * The fill distance is computed at construction as
 *   max_i min_{j != i} |x_i - x_j|_2
 * and is never user supplied. An optional per-axis period turns the cloud into
 * a point set on a torus; displacements then use the minimum-image convention.
 */
class PointCloud {
public:
    PointCloud(std::size_t dim, std::vector<double> points,
               std::optional<std::vector<double>> period = std::nullopt,
               std::vector<int> tags = {});

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return points_.size() / dim_; }
    std::span<const double> point(std::size_t i) const {
        return {points_.data() + i * dim_, dim_};
    }
    const std::vector<double>& points() const { return points_; }
    const std::optional<std::vector<double>>& period() const { return period_; }
    const std::vector<int>& tags() const { return tags_; }
    double fill_distance() const { return fill_distance_; }

    /// x_j - x_i, wrapped to the nearest image when the cloud is periodic.
    void displacement(std::size_t i, std::size_t j, std::span<double> out) const;
    double distance(std::size_t i, std::size_t j) const;

    bool operator==(const PointCloud& other) const {
        return dim_ == other.dim_ && points_ == other.points_ && period_ == other.period_;
    }

private:
    std::size_t dim_;
    std::vector<double> points_;
    std::optional<std::vector<double>> period_;
    std::vector<int> tags_;
    double fill_distance_ = 0.0;
};

double fill_distance(const PointCloud& cloud);

/// Cloud made of the nodes of a periodic grid; `wrap` keeps the torus topology.
PointCloud cloud_from_grid(const PeriodicGrid& grid, bool wrap);

/// Where a field lives.
class Domain {
public:
    Domain(PeriodicGrid grid) : impl_(std::make_shared<const PeriodicGrid>(std::move(grid))) {}
    Domain(BoxGrid grid) : impl_(std::make_shared<const BoxGrid>(std::move(grid))) {}
    Domain(std::shared_ptr<const PointCloud> cloud) : impl_(std::move(cloud)) {}

    std::size_t size() const;
    std::size_t dim() const;

    const PeriodicGrid* periodic() const;
    const BoxGrid* box() const;
    const PointCloud* cloud() const;

    bool operator==(const Domain& other) const;
    std::string describe() const;

private:
    std::variant<std::shared_ptr<const PeriodicGrid>, std::shared_ptr<const BoxGrid>,
                 std::shared_ptr<const PointCloud>>
        impl_;
};

/**
 * Multi-channel samples on a domain.
 *
 * Layout is channel-major: values[c * M + i] holds channel c at flat point i,
 * where i follows the owning grid's row-major (last axis fastest) order.
 */
class Field {
public:
    Field(Domain domain, std::size_t channels);
    Field(Domain domain, std::size_t channels, std::vector<double> values);

    const Domain& domain() const { return domain_; }
    std::size_t channels() const { return channels_; }
    std::size_t points() const { return domain_.size(); }
    std::span<double> channel(std::size_t c);
    std::span<const double> channel(std::size_t c) const;
    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    double& at(std::size_t c, std::size_t i) { return values_[c * points() + i]; }
    double at(std::size_t c, std::size_t i) const { return values_[c * points() + i]; }

private:
    Domain domain_;
    std::size_t channels_;
    std::vector<double> values_;
};

/// Fills a field by evaluating `fn(coords, channel)` at every grid node.
template <class Fn>
Field sample_on(const PeriodicGrid& grid, std::size_t channels, Fn&& fn) {
    Field out(grid, channels);
    std::vector<double> x(grid.dim());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        for (std::size_t k = 0; k < grid.dim(); ++k) x[k] = grid.coord(i, k);
        for (std::size_t c = 0; c < channels; ++c) out.at(c, i) = fn(std::span<const double>(x), c);
    }
    return out;
}

}  // namespace clawno
