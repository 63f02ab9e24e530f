#include "clawno/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace clawno {

namespace {

std::vector<std::size_t> row_major_strides(const std::vector<std::size_t>& counts) {
    std::vector<std::size_t> strides(counts.size(), 1);
    for (std::size_t k = counts.size(); k-- > 1;) strides[k - 1] = strides[k] * counts[k];
    return strides;
}

void check_lengths(const std::vector<double>& lengths, const std::vector<std::size_t>& counts) {
    if (counts.empty()) throw InvalidArgument("grid needs at least one axis");
    if (lengths.size() != counts.size())
        throw InvalidArgument("grid lengths and counts differ in dimension");
    for (double L : lengths)
        if (!(L > 0.0) || !std::isfinite(L))
            throw InvalidArgument("grid lengths must be positive and finite");
}

}  // namespace

PeriodicGrid::PeriodicGrid(std::vector<double> lengths, std::vector<std::size_t> counts)
    : lengths_(std::move(lengths)), counts_(std::move(counts)) {
    check_lengths(lengths_, counts_);
    for (std::size_t k = 0; k < counts_.size(); ++k) {
        if (counts_[k] == 0 || counts_[k] % 2 != 0) {
            std::ostringstream msg;
            msg << "periodic grid axis " << k << " has count " << counts_[k]
                << "; counts must be positive and even, otherwise the Nyquist mode"
                   " of the symmetric range -N/2..N/2-1 is ambiguous";
            throw InvalidArgument(msg.str());
        }
    }
    strides_ = row_major_strides(counts_);
    size_ = strides_[0] * counts_[0];
}

std::vector<std::size_t> PeriodicGrid::unravel(std::size_t flat) const {
    std::vector<std::size_t> idx(dim());
    for (std::size_t k = 0; k < dim(); ++k) idx[k] = (flat / strides_[k]) % counts_[k];
    return idx;
}

std::size_t PeriodicGrid::ravel(std::span<const std::size_t> index) const {
    std::size_t flat = 0;
    for (std::size_t k = 0; k < dim(); ++k) flat += (index[k] % counts_[k]) * strides_[k];
    return flat;
}

double PeriodicGrid::coord(std::size_t flat, std::size_t axis) const {
    const std::size_t k = (flat / strides_[axis]) % counts_[axis];
    return double(k) * lengths_[axis] / double(counts_[axis]);
}

std::vector<double> PeriodicGrid::coords(std::size_t flat) const {
    std::vector<double> x(dim());
    for (std::size_t k = 0; k < dim(); ++k) x[k] = coord(flat, k);
    return x;
}

PeriodicGrid make_periodic_grid(std::size_t p, std::vector<double> lengths,
                                std::vector<std::size_t> counts) {
    if (p == 0) throw InvalidArgument("grid dimension must be at least 1");
    if (lengths.size() != p || counts.size() != p)
        throw InvalidArgument("expected " + std::to_string(p) + " lengths and counts");
    return PeriodicGrid(std::move(lengths), std::move(counts));
}

PeriodicGrid augment_spacetime(const PeriodicGrid& grid, double T, std::size_t Nt) {
    if (!(T > 0.0)) throw InvalidArgument("time horizon must be positive");
    auto lengths = grid.lengths();
    auto counts = grid.counts();
    lengths.push_back(T);
    counts.push_back(Nt);
    return PeriodicGrid(std::move(lengths), std::move(counts));
}

BoxGrid::BoxGrid(std::vector<double> lengths, std::vector<std::size_t> counts)
    : lengths_(std::move(lengths)), counts_(std::move(counts)) {
    check_lengths(lengths_, counts_);
    for (std::size_t k = 0; k < counts_.size(); ++k)
        if (counts_[k] < 2)
            throw InvalidArgument("box grid axis " + std::to_string(k) + " needs at least 2 points");
    strides_ = row_major_strides(counts_);
    size_ = strides_[0] * counts_[0];
}

std::vector<std::size_t> BoxGrid::unravel(std::size_t flat) const {
    std::vector<std::size_t> idx(dim());
    for (std::size_t k = 0; k < dim(); ++k) idx[k] = (flat / strides_[k]) % counts_[k];
    return idx;
}

double BoxGrid::coord(std::size_t flat, std::size_t axis) const {
    const std::size_t k = (flat / strides_[axis]) % counts_[axis];
    return double(k) * spacing(axis);
}

PointCloud::PointCloud(std::size_t dim, std::vector<double> points,
                       std::optional<std::vector<double>> period, std::vector<int> tags)
    : dim_(dim), points_(std::move(points)), period_(std::move(period)), tags_(std::move(tags)) {
    if (dim_ == 0) throw InvalidArgument("point cloud dimension must be at least 1");
    if (points_.size() % dim_ != 0)
        throw InvalidArgument("point array length is not a multiple of the dimension");
    if (period_ && period_->size() != dim_)
        throw InvalidArgument("period must have one entry per axis");
    if (!tags_.empty() && tags_.size() != size())
        throw InvalidArgument("boundary tags must have one entry per point");
    const std::size_t M = size();
    if (M < 2) throw InvalidArgument("fill distance needs at least 2 points");

    // Brute force over all pairs; also rejects duplicate points.
    double sup = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
        double nearest = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < M; ++j) {
            if (j == i) continue;
            const double d = distance(i, j);
            if (d == 0.0)
                throw InvalidArgument("points " + std::to_string(i) + " and " + std::to_string(j) +
                                      " coincide");
            nearest = std::min(nearest, d);
        }
        sup = std::max(sup, nearest);
    }
    fill_distance_ = sup;
}

void PointCloud::displacement(std::size_t i, std::size_t j, std::span<double> out) const {
    const double* a = points_.data() + i * dim_;
    const double* b = points_.data() + j * dim_;
    for (std::size_t k = 0; k < dim_; ++k) {
        double d = b[k] - a[k];
        if (period_) {
            const double L = (*period_)[k];
            d -= L * std::round(d / L);
        }
        out[k] = d;
    }
}

double PointCloud::distance(std::size_t i, std::size_t j) const {
    double s = 0.0;
    const double* a = points_.data() + i * dim_;
    const double* b = points_.data() + j * dim_;
    for (std::size_t k = 0; k < dim_; ++k) {
        double d = b[k] - a[k];
        if (period_) {
            const double L = (*period_)[k];
            d -= L * std::round(d / L);
        }
        s += d * d;
    }
    return std::sqrt(s);
}

double fill_distance(const PointCloud& cloud) { return cloud.fill_distance(); }

PointCloud cloud_from_grid(const PeriodicGrid& grid, bool wrap) {
    std::vector<double> pts(grid.size() * grid.dim());
    for (std::size_t i = 0; i < grid.size(); ++i)
        for (std::size_t k = 0; k < grid.dim(); ++k) pts[i * grid.dim() + k] = grid.coord(i, k);
    std::optional<std::vector<double>> period;
    if (wrap) period = grid.lengths();
    return PointCloud(grid.dim(), std::move(pts), std::move(period));
}

std::size_t Domain::size() const {
    return std::visit([](const auto& p) { return p->size(); }, impl_);
}

std::size_t Domain::dim() const {
    return std::visit([](const auto& p) { return p->dim(); }, impl_);
}

const PeriodicGrid* Domain::periodic() const {
    auto* p = std::get_if<std::shared_ptr<const PeriodicGrid>>(&impl_);
    return p ? p->get() : nullptr;
}

const BoxGrid* Domain::box() const {
    auto* p = std::get_if<std::shared_ptr<const BoxGrid>>(&impl_);
    return p ? p->get() : nullptr;
}

const PointCloud* Domain::cloud() const {
    auto* p = std::get_if<std::shared_ptr<const PointCloud>>(&impl_);
    return p ? p->get() : nullptr;
}

bool Domain::operator==(const Domain& other) const {
    if (impl_.index() != other.impl_.index()) return false;
    return std::visit(
        [&](const auto& p) {
            using Ptr = std::decay_t<decltype(p)>;
            const auto& q = std::get<Ptr>(other.impl_);
            return p == q || *p == *q;
        },
        impl_);
}

std::string Domain::describe() const {
    std::ostringstream out;
    auto counts = [&](const auto& c) {
        for (std::size_t k = 0; k < c.size(); ++k) out << (k ? "x" : "") << c[k];
    };
    if (auto* g = periodic()) {
        out << "periodic grid ";
        counts(g->counts());
    } else if (auto* b = box()) {
        out << "box grid ";
        counts(b->counts());
    } else {
        out << "point cloud of " << cloud()->size() << " points";
    }
    return out.str();
}

Field::Field(Domain domain, std::size_t channels)
    : domain_(std::move(domain)), channels_(channels), values_(channels * domain_.size(), 0.0) {
    if (channels_ == 0) throw InvalidArgument("field needs at least one channel");
}

Field::Field(Domain domain, std::size_t channels, std::vector<double> values)
    : domain_(std::move(domain)), channels_(channels), values_(std::move(values)) {
    if (channels_ == 0) throw InvalidArgument("field needs at least one channel");
    if (values_.size() != channels_ * domain_.size())
        throw InvalidArgument("field value count " + std::to_string(values_.size()) +
                              " does not equal points * channels = " +
                              std::to_string(channels_ * domain_.size()));
}

std::span<double> Field::channel(std::size_t c) {
    if (c >= channels_) throw InvalidArgument("channel index out of range");
    return {values_.data() + c * points(), points()};
}

std::span<const double> Field::channel(std::size_t c) const {
    if (c >= channels_) throw InvalidArgument("channel index out of range");
    return {values_.data() + c * points(), points()};
}

}  // namespace clawno
