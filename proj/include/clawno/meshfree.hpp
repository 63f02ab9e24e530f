#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "clawno/backend.hpp"
#include "clawno/geometry.hpp"

namespace clawno {

/// Number of monomials of total degree <= m in p variables, C(m+p, p).
std::size_t poly_dim(std::size_t m, std::size_t p);

/// Exponent tuples of all monomials with 1 <= degree <= m, graded, then lexicographic (descending).
std::vector<std::vector<int>> monomial_exponents(std::size_t m, std::size_t p);

struct NeighborLists {
    std::vector<std::size_t> offsets;  ///< size M+1
    std::vector<std::size_t> indices;  ///< neighbors of i in [offsets[i], offsets[i+1])
    std::size_t count(std::size_t i) const { return offsets[i + 1] - offsets[i]; }
    std::span<const std::size_t> of(std::size_t i) const {
        return {indices.data() + offsets[i], count(i)};
    }
};

/**
 * All j != i with |x_j - x_i| <= delta, sorted by distance then index.
 * Throws InvalidArgument naming the first point with fewer than
 * `min_count` neighbors.
 */
NeighborLists neighbors(const PointCloud& cloud, double delta, std::size_t min_count = 1);

struct MeshfreeConfig {
    std::size_t order = 2;        ///< polynomial degree m reproduced exactly
    double radius_ratio = 0.0;    ///< delta / fill distance; <= 0 picks the default
    bool central = true;          ///< min-norm tie-break on the L1 optimal face
};

/// Smallest ratio on a 0.1-step ladder giving every point >= 2 dim P_m neighbors.
double default_radius_ratio(const PointCloud& cloud, std::size_t m);

/**
 * Per-point, per-axis weights with
 *   d phi / d x_k (x_i) ~= sum_j (phi(x_j) - phi(x_i)) w^k_ij.
 *
 * Neighbor structure is CSR; weights[k] is aligned with the neighbor indices.
 */
class MeshfreeWeights final : public DiffBackend {
public:
    MeshfreeWeights(std::shared_ptr<const PointCloud> cloud, std::size_t order, double delta,
                    NeighborLists nbrs, std::vector<std::vector<double>> weights);

    const Domain& domain() const override { return domain_; }
    std::string_view name() const override { return "meshfree"; }

    void partial(std::span<const double> in, std::span<double> out, std::size_t axis) const override;
    void partial_adjoint(std::span<const double> in, std::span<double> out,
                         std::size_t axis) const override;

    const PointCloud& cloud() const { return *cloud_; }
    std::shared_ptr<const PointCloud> cloud_ptr() const { return cloud_; }
    std::size_t order() const { return order_; }
    double delta() const { return delta_; }
    const NeighborLists& neighbor_lists() const { return nbrs_; }
    std::span<const double> weights(std::size_t axis) const { return weights_.at(axis); }

    /// max_i sum_j |w^k_ij| over all axes.
    double max_abs_row_sum() const;

private:
    std::shared_ptr<const PointCloud> cloud_;
    Domain domain_;
    std::size_t order_;
    double delta_;
    NeighborLists nbrs_;
    std::vector<std::vector<double>> weights_;
};

/// Solves one L1 LP per (point, axis). Parallel over points; result does not
/// depend on the schedule.
std::shared_ptr<const MeshfreeWeights> generate_weights(std::shared_ptr<const PointCloud> cloud,
                                                        const MeshfreeConfig& config);

Field meshfree_partial(const MeshfreeWeights& weights, const Field& field, std::size_t axis);

/// Content hash over (points, period, m, delta).
std::uint64_t weights_key(const PointCloud& cloud, std::size_t order, double delta);

void save_weights(const MeshfreeWeights& w, const std::filesystem::path& path);
/// Loads weights for `cloud`; throws IoError if the file was built for other inputs.
std::shared_ptr<const MeshfreeWeights> load_weights(std::shared_ptr<const PointCloud> cloud,
                                                    const std::filesystem::path& path);

/// Looks up <dir>/mf_<hash>.bin, generating and storing it on a miss.
std::shared_ptr<const MeshfreeWeights> cached_weights(std::shared_ptr<const PointCloud> cloud,
                                                      const MeshfreeConfig& config,
                                                      const std::filesystem::path& dir);

}  // namespace clawno
