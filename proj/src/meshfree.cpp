#include "clawno/meshfree.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "clawno/field_io.hpp"
#include "clawno/lp.hpp"

namespace clawno {

std::size_t poly_dim(std::size_t m, std::size_t p) {
    std::size_t r = 1;
    for (std::size_t i = 1; i <= p; ++i) r = r * (m + i) / i;
    return r;
}

std::vector<std::vector<int>> monomial_exponents(std::size_t m, std::size_t p) {
    std::vector<std::vector<int>> out;
    for (std::size_t deg = 1; deg <= m; ++deg) {
        // all p-tuples summing to deg, first component descending
        std::vector<int> cur(p, 0);
        auto rec = [&](auto&& self, std::size_t axis, int left) -> void {
            if (axis + 1 == p) {
                cur[axis] = left;
                out.push_back(cur);
                return;
            }
            for (int a = left; a >= 0; --a) {
                cur[axis] = a;
                self(self, axis + 1, left - a);
            }
        };
        rec(rec, 0, int(deg));
    }
    return out;
}

NeighborLists neighbors(const PointCloud& cloud, double delta, std::size_t min_count) {
    if (!(delta > 0.0)) throw InvalidArgument("neighborhood radius must be positive");
    const std::size_t M = cloud.size();
    // relative slack so lattice points at exactly delta are kept on every row
    const double cut = delta * (1.0 + 1e-10);
    std::vector<std::vector<std::pair<double, std::size_t>>> lists(M);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ii = 0; ii < std::ptrdiff_t(M); ++ii) {
        const std::size_t i = std::size_t(ii);
        auto& L = lists[i];
        for (std::size_t j = 0; j < M; ++j) {
            if (j == i) continue;
            const double d = cloud.distance(i, j);
            if (d <= cut) L.emplace_back(d, j);
        }
        std::sort(L.begin(), L.end());
    }
    NeighborLists out;
    out.offsets.assign(M + 1, 0);
    for (std::size_t i = 0; i < M; ++i) {
        if (lists[i].size() < min_count) {
            std::ostringstream msg;
            msg << "point " << i << " has " << lists[i].size() << " neighbors within radius " << delta
                << ", at least " << min_count << " are required";
            throw InvalidArgument(msg.str());
        }
        out.offsets[i + 1] = out.offsets[i] + lists[i].size();
    }
    out.indices.reserve(out.offsets[M]);
    for (auto& L : lists)
        for (auto& [d, j] : L) out.indices.push_back(j);
    return out;
}

double default_radius_ratio(const PointCloud& cloud, std::size_t m) {
    const std::size_t M = cloud.size();
    const std::size_t need = 2 * poly_dim(m, cloud.dim());
    if (need > M - 1)
        throw InvalidArgument("cloud of " + std::to_string(M) + " points is too small for order " +
                              std::to_string(m));
    double worst = 0.0;
#pragma omp parallel for reduction(max : worst)
    for (std::ptrdiff_t ii = 0; ii < std::ptrdiff_t(M); ++ii) {
        std::vector<double> d;
        d.reserve(M - 1);
        for (std::size_t j = 0; j < M; ++j)
            if (j != std::size_t(ii)) d.push_back(cloud.distance(std::size_t(ii), j));
        std::nth_element(d.begin(), d.begin() + std::ptrdiff_t(need - 1), d.end());
        worst = std::max(worst, d[need - 1]);
    }
    const double h = cloud.fill_distance();
    double ratio = std::ceil(worst / h * 10.0 - 1e-9) / 10.0;
    while (ratio * h < worst) ratio += 0.1;
    return ratio;
}

MeshfreeWeights::MeshfreeWeights(std::shared_ptr<const PointCloud> cloud, std::size_t order,
                                 double delta, NeighborLists nbrs,
                                 std::vector<std::vector<double>> weights)
    : cloud_(std::move(cloud)), domain_(cloud_), order_(order), delta_(delta), nbrs_(std::move(nbrs)),
      weights_(std::move(weights)) {
    if (weights_.size() != cloud_->dim()) throw InvalidArgument("need one weight array per axis");
    for (auto& w : weights_)
        if (w.size() != nbrs_.indices.size()) throw InvalidArgument("weights not aligned with neighbor lists");
}

void MeshfreeWeights::partial(std::span<const double> in, std::span<double> out, std::size_t axis) const {
    if (axis >= dim()) throw InvalidArgument("axis out of range");
    if (in.size() != size() || out.size() != size()) throw DomainMismatch("channel length does not match the cloud");
    const auto& w = weights_[axis];
    for (std::size_t i = 0; i < size(); ++i) {
        double s = 0.0;
        for (std::size_t q = nbrs_.offsets[i]; q < nbrs_.offsets[i + 1]; ++q)
            s += (in[nbrs_.indices[q]] - in[i]) * w[q];
        out[i] = s;
    }
}

void MeshfreeWeights::partial_adjoint(std::span<const double> in, std::span<double> out,
                                      std::size_t axis) const {
    if (axis >= dim()) throw InvalidArgument("axis out of range");
    if (in.size() != size() || out.size() != size()) throw DomainMismatch("channel length does not match the cloud");
    const auto& w = weights_[axis];
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t i = 0; i < size(); ++i)
        for (std::size_t q = nbrs_.offsets[i]; q < nbrs_.offsets[i + 1]; ++q) {
            out[nbrs_.indices[q]] += w[q] * in[i];
            out[i] -= w[q] * in[i];
        }
}

double MeshfreeWeights::max_abs_row_sum() const {
    double m = 0.0;
    for (const auto& w : weights_)
        for (std::size_t i = 0; i < size(); ++i) {
            double s = 0.0;
            for (std::size_t q = nbrs_.offsets[i]; q < nbrs_.offsets[i + 1]; ++q) s += std::abs(w[q]);
            m = std::max(m, s);
        }
    return m;
}

std::shared_ptr<const MeshfreeWeights> generate_weights(std::shared_ptr<const PointCloud> cloud,
                                                        const MeshfreeConfig& config) {
    if (config.order < 1) throw InvalidArgument("meshfree order must be at least 1");
    const std::size_t p = cloud->dim(), M = cloud->size(), m = config.order;
    const double ratio = config.radius_ratio > 0.0 ? config.radius_ratio : default_radius_ratio(*cloud, m);
    const double delta = ratio * cloud->fill_distance();
    NeighborLists nbrs = neighbors(*cloud, delta, poly_dim(m, p));

    const auto expo = monomial_exponents(m, p);
    std::vector<std::size_t> unit_row(p);
    for (std::size_t k = 0; k < p; ++k)
        for (std::size_t r = 0; r < expo.size(); ++r)
            if (expo[r][k] == 1 && std::accumulate(expo[r].begin(), expo[r].end(), 0) == 1) unit_row[k] = r;

    std::vector<std::vector<double>> weights(p, std::vector<double>(nbrs.indices.size(), 0.0));
    std::vector<std::string> errors(M);
#pragma omp parallel for schedule(dynamic, 8)
    for (std::ptrdiff_t ii = 0; ii < std::ptrdiff_t(M); ++ii) {
        const std::size_t i = std::size_t(ii);
        const auto nb = nbrs.of(i);
        const Eigen::Index n = Eigen::Index(nb.size());
        Eigen::MatrixXd A(Eigen::Index(expo.size()), n);
        std::vector<double> z(p);
        for (Eigen::Index c = 0; c < n; ++c) {
            cloud->displacement(i, nb[std::size_t(c)], z);
            for (auto& v : z) v /= delta;
            for (std::size_t r = 0; r < expo.size(); ++r) {
                double v = 1.0;
                for (std::size_t k = 0; k < p; ++k)
                    for (int e = 0; e < expo[r][k]; ++e) v *= z[k];
                A(Eigen::Index(r), c) = v;
            }
        }
        for (std::size_t k = 0; k < p; ++k) {
            Eigen::VectorXd b = Eigen::VectorXd::Zero(A.rows());
            b(Eigen::Index(unit_row[k])) = 1.0;
            try {
                Eigen::VectorXd w = min_l1(A, b, config.central);
                if ((A * w - b).lpNorm<Eigen::Infinity>() > 1e-10)
                    throw LpInfeasible("reproduction residual too large");
                for (Eigen::Index c = 0; c < n; ++c)
                    weights[k][nbrs.offsets[i] + std::size_t(c)] = w(c) / delta;
            } catch (const std::exception& e) {
                if (errors[i].empty())
                    errors[i] = "weight LP failed at point " + std::to_string(i) + ", axis " +
                                std::to_string(k) + ": " + e.what();
            }
        }
    }
    for (const auto& e : errors)
        if (!e.empty()) throw InvalidArgument(e);
    return std::make_shared<MeshfreeWeights>(std::move(cloud), m, delta, std::move(nbrs), std::move(weights));
}

Field meshfree_partial(const MeshfreeWeights& weights, const Field& field, std::size_t axis) {
    weights.require_domain(field.domain());
    Field out(field.domain(), field.channels());
    for (std::size_t c = 0; c < field.channels(); ++c) weights.partial(field.channel(c), out.channel(c), axis);
    return out;
}

std::uint64_t weights_key(const PointCloud& cloud, std::size_t order, double delta) {
    auto h = fnv1a(std::as_bytes(std::span(cloud.points())));
    if (cloud.period()) h = fnv1a(std::as_bytes(std::span(*cloud.period())), h);
    const std::uint64_t mm = order;
    h = fnv1a(std::as_bytes(std::span(&mm, 1)), h);
    return fnv1a(std::as_bytes(std::span(&delta, 1)), h);
}

void save_weights(const MeshfreeWeights& w, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    const auto& nb = w.neighbor_lists();
    write_header(out, BlobKind::MeshfreeWeights);
    write_u64(out, w.dim());
    write_u64(out, w.size());
    write_u64(out, w.order());
    write_u64(out, nb.indices.size());
    write_u64(out, weights_key(w.cloud(), w.order(), w.delta()));
    const double delta = w.delta();
    write_f64s(out, std::span(&delta, 1));
    for (auto v : nb.offsets) write_u64(out, v);
    for (auto v : nb.indices) write_u64(out, v);
    for (std::size_t k = 0; k < w.dim(); ++k) write_f64s(out, w.weights(k));
    if (!out) throw IoError("failed writing " + path.string());
}

std::shared_ptr<const MeshfreeWeights> load_weights(std::shared_ptr<const PointCloud> cloud,
                                                    const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    if (read_header(in) != BlobKind::MeshfreeWeights) throw IoError(path.string() + " does not hold meshfree weights");
    const auto dim = read_u64(in), M = read_u64(in), order = read_u64(in), nnz = read_u64(in), key = read_u64(in);
    double delta = 0.0;
    read_f64s(in, std::span(&delta, 1));
    if (dim != cloud->dim() || M != cloud->size() || key != weights_key(*cloud, order, delta))
        throw IoError(path.string() + " was generated for a different cloud or configuration");
    NeighborLists nb;
    nb.offsets.resize(M + 1);
    nb.indices.resize(nnz);
    for (auto& v : nb.offsets) v = read_u64(in);
    for (auto& v : nb.indices) v = read_u64(in);
    if (nb.offsets.back() != nnz) throw IoError("corrupt neighbor offsets in " + path.string());
    for (auto v : nb.indices)
        if (v >= M) throw IoError("corrupt neighbor index in " + path.string());
    std::vector<std::vector<double>> w(dim, std::vector<double>(nnz));
    for (auto& a : w) read_f64s(in, a);
    return std::make_shared<MeshfreeWeights>(std::move(cloud), order, delta, std::move(nb), std::move(w));
}

std::shared_ptr<const MeshfreeWeights> cached_weights(std::shared_ptr<const PointCloud> cloud,
                                                      const MeshfreeConfig& config,
                                                      const std::filesystem::path& dir) {
    const double ratio = config.radius_ratio > 0.0 ? config.radius_ratio
                                                   : default_radius_ratio(*cloud, config.order);
    const double delta = ratio * cloud->fill_distance();
    std::ostringstream name;
    name << "mf_" << std::hex << weights_key(*cloud, config.order, delta) << (config.central ? "" : "_v")
         << ".bin";
    const auto path = dir / name.str();
    if (std::filesystem::exists(path)) return load_weights(std::move(cloud), path);
    MeshfreeConfig fixed = config;
    fixed.radius_ratio = ratio;
    auto w = generate_weights(std::move(cloud), fixed);
    std::filesystem::create_directories(dir);
    save_weights(*w, path);
    return w;
}

}  // namespace clawno
