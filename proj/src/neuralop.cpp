#include "clawno/neuralop.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "clawno/clawcore.hpp"
#include "clawno/specdiff.hpp"

namespace clawno {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

std::size_t product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return n;
}

void require_attached(const DiffTensor& t, const char* op) {
    if (!t.attached()) throw InvalidArgument(std::string(op) + ": detached tensor");
}

void require_same_tape(const DiffTensor& a, const DiffTensor& b, const char* op) {
    require_attached(a, op);
    require_attached(b, op);
    if (a.tape() != b.tape()) throw InvalidArgument(std::string(op) + ": tensors live on different tapes");
}

void require_shape(const DiffTensor& t, std::size_t rank, const char* op) {
    if (t.shape().size() != rank)
        throw InvalidArgument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                              std::to_string(t.shape().size()));
}

}  // namespace

// ---- tape -------------------------------------------------------------------

const std::vector<std::size_t>& DiffTensor::shape() const {
    if (!tape_) throw InvalidArgument("detached tensor has no shape");
    return tape_->nodes_[id_].shape;
}

std::size_t DiffTensor::numel() const { return values().size(); }

std::span<const double> DiffTensor::values() const {
    if (!tape_) throw InvalidArgument("detached tensor has no values");
    return tape_->nodes_[id_].values;
}

std::span<const double> DiffTensor::grad() const {
    if (!tape_) throw InvalidArgument("detached tensor has no gradient");
    return tape_->nodes_[id_].grad;
}

double DiffTensor::item() const {
    const auto v = values();
    if (v.size() != 1) throw InvalidArgument("item() needs a single-element tensor");
    return v[0];
}

DiffTensor Tape::leaf(std::vector<std::size_t> shape, std::vector<double> values, bool requires_grad) {
    if (product(shape) != values.size()) throw InvalidArgument("leaf: shape does not match value count");
    nodes_.push_back({std::move(shape), std::move(values), {}, {}, requires_grad});
    return {this, nodes_.size() - 1};
}

DiffTensor Tape::record(std::vector<std::size_t> shape, std::vector<double> values,
                        std::initializer_list<DiffTensor> inputs, BackwardFn backward) {
    bool rg = false;
    for (const auto& in : inputs) {
        if (in.tape() != this) throw InvalidArgument("record: input from another tape");
        rg = rg || nodes_[in.node()].requires_grad;
    }
    nodes_.push_back({std::move(shape), std::move(values), {}, rg ? std::move(backward) : BackwardFn{}, rg});
    return {this, nodes_.size() - 1};
}

double* Tape::grad_buffer(const DiffTensor& t) {
    auto& n = nodes_.at(t.node());
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad.assign(n.values.size(), 0.0);
    return n.grad.data();
}

void Tape::backward(const DiffTensor& out) {
    if (out.tape() != this) throw InvalidArgument("backward: tensor is detached or from another tape");
    if (out.numel() != 1) throw InvalidArgument("backward: output must be a single element");
    for (auto& n : nodes_) n.grad.clear();
    auto& root = nodes_[out.node()];
    root.grad.assign(1, root.requires_grad ? 1.0 : 0.0);
    if (!root.requires_grad) return;
    for (std::size_t k = out.node() + 1; k-- > 0;) {
        auto& n = nodes_[k];
        if (!n.backward || n.grad.empty()) continue;
        n.backward(n.grad, *this);
    }
}

// ---- pointwise ops ------------------------------------------------------------

DiffTensor channel_affine(const DiffTensor& x, const DiffTensor& W, const DiffTensor& b) {
    require_same_tape(x, W, "channel_affine");
    require_same_tape(x, b, "channel_affine");
    require_shape(x, 2, "channel_affine");
    require_shape(W, 2, "channel_affine");
    const std::size_t cin = x.shape()[0], M = x.shape()[1], cout = W.shape()[0];
    if (W.shape()[1] != cin || b.numel() != cout)
        throw InvalidArgument("channel_affine: weight " + std::to_string(W.shape()[0]) + "x" +
                              std::to_string(W.shape()[1]) + " does not fit " + std::to_string(cin) +
                              " input channels");
    std::vector<double> y(cout * M);
    ConstMatMap X(x.values().data(), Eigen::Index(cin), Eigen::Index(M));
    ConstMatMap Wm(W.values().data(), Eigen::Index(cout), Eigen::Index(cin));
    MatMap Y(y.data(), Eigen::Index(cout), Eigen::Index(M));
    Y.noalias() = Wm * X;
    for (std::size_t o = 0; o < cout; ++o) Y.row(Eigen::Index(o)).array() += b.values()[o];
    return x.tape()->record({cout, M}, std::move(y), {x, W, b}, [x, W, b, cin, cout, M](auto g, Tape& t) {
        ConstMatMap G(g.data(), Eigen::Index(cout), Eigen::Index(M));
        ConstMatMap Wm(W.values().data(), Eigen::Index(cout), Eigen::Index(cin));
        ConstMatMap X(x.values().data(), Eigen::Index(cin), Eigen::Index(M));
        if (double* gx = t.grad_buffer(x)) MatMap(gx, Eigen::Index(cin), Eigen::Index(M)).noalias() += Wm.transpose() * G;
        if (double* gw = t.grad_buffer(W)) MatMap(gw, Eigen::Index(cout), Eigen::Index(cin)).noalias() += G * X.transpose();
        if (double* gb = t.grad_buffer(b))
            for (std::size_t o = 0; o < cout; ++o) gb[o] += G.row(Eigen::Index(o)).sum();
    });
}

DiffTensor gelu(const DiffTensor& x) {
    require_attached(x, "gelu");
    const auto v = x.values();
    std::vector<double> y(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) y[i] = 0.5 * v[i] * (1.0 + std::erf(v[i] * std::numbers::sqrt2 / 2));
    return x.tape()->record(x.shape(), std::move(y), {x}, [x](auto g, Tape& t) {
        double* gx = t.grad_buffer(x);
        const auto v = x.values();
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double cdf = 0.5 * (1.0 + std::erf(v[i] * std::numbers::sqrt2 / 2));
            const double pdf = std::exp(-0.5 * v[i] * v[i]) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
            gx[i] += g[i] * (cdf + v[i] * pdf);
        }
    });
}

DiffTensor add(const DiffTensor& a, const DiffTensor& b) {
    require_same_tape(a, b, "add");
    if (a.shape() != b.shape()) throw InvalidArgument("add: shape mismatch");
    std::vector<double> y(a.values().begin(), a.values().end());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.values()[i];
    return a.tape()->record(a.shape(), std::move(y), {a, b}, [a, b](auto g, Tape& t) {
        for (const auto& in : {a, b})
            if (double* gi = t.grad_buffer(in))
                for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    });
}

DiffTensor scale(const DiffTensor& x, double s) {
    require_attached(x, "scale");
    std::vector<double> y(x.values().begin(), x.values().end());
    for (auto& v : y) v *= s;
    return x.tape()->record(x.shape(), std::move(y), {x}, [x, s](auto g, Tape& t) {
        double* gx = t.grad_buffer(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
    });
}

DiffTensor sum_squares(const DiffTensor& x) {
    require_attached(x, "sum_squares");
    double s = 0.0;
    for (double v : x.values()) s += v * v;
    return x.tape()->record({1}, {s}, {x}, [x](auto g, Tape& t) {
        double* gx = t.grad_buffer(x);
        const auto v = x.values();
        for (std::size_t i = 0; i < v.size(); ++i) gx[i] += 2.0 * g[0] * v[i];
    });
}

DiffTensor relative_l2(const DiffTensor& pred, std::span<const double> truth) {
    require_attached(pred, "relative_l2");
    if (pred.numel() != truth.size()) throw InvalidArgument("relative_l2: shape mismatch");
    double num = 0.0, den = 0.0;
    const auto p = pred.values();
    for (std::size_t i = 0; i < p.size(); ++i) {
        num += (p[i] - truth[i]) * (p[i] - truth[i]);
        den += truth[i] * truth[i];
    }
    if (!(den > 0.0)) throw InvalidArgument("relative_l2: truth has zero norm");
    std::vector<double> tr(truth.begin(), truth.end());
    return pred.tape()->record({1}, {num / den}, {pred}, [pred, tr = std::move(tr), den](auto g, Tape& t) {
        double* gp = t.grad_buffer(pred);
        const auto p = pred.values();
        for (std::size_t i = 0; i < p.size(); ++i) gp[i] += g[0] * 2.0 * (p[i] - tr[i]) / den;
    });
}

// ---- spectral convolution -----------------------------------------------------

SpectralConvPlan::SpectralConvPlan(const PeriodicGrid& grid, std::size_t modes)
    : grid_(grid), modes_(modes), box_size_(0), fft_(grid.counts()) {
    if (modes == 0) throw InvalidArgument("spectral convolution needs at least one mode");
    const std::size_t p = grid.dim();
    box_size_ = 1;
    for (std::size_t k = 0; k < p; ++k) box_size_ *= modes;

    // signed frequency of stored index s on axis k, and whether it fits this grid
    auto freq = [&](std::size_t k, std::size_t s) {
        return k + 1 < p ? long(s) - long(modes / 2) : long(s);
    };
    auto fits = [&](std::size_t k, long xi) {
        const long m = long(std::min(modes, grid.count(k) / 2));
        return k + 1 < p ? (xi >= -m / 2 && xi < m - m / 2) : (xi >= 0 && xi < m);
    };
    auto stored_index = [&](const std::vector<long>& xi) -> long {
        std::size_t s = 0;
        for (std::size_t k = 0; k < p; ++k) {
            if (!fits(k, xi[k])) return -1;
            const long local = k + 1 < p ? xi[k] + long(modes / 2) : xi[k];
            s = s * modes + std::size_t(local);
        }
        return long(s);
    };
    auto flat_of = [&](const std::vector<long>& xi) {
        std::vector<std::size_t> idx(p);
        for (std::size_t k = 0; k < p; ++k) {
            const long n = long(grid.count(k));
            idx[k] = std::size_t((xi[k] % n + n) % n);
        }
        return grid.ravel(idx);
    };

    std::vector<long> xi(p), neg(p);
    for (std::size_t s = 0; s < box_size_; ++s) {
        std::size_t rest = s;
        for (std::size_t k = p; k-- > 0;) {
            xi[k] = freq(k, rest % modes);
            rest /= modes;
        }
        if (stored_index(xi) < 0) continue;  // clipped on this grid
        retained_.push_back({flat_of(xi), s, false});
        for (std::size_t k = 0; k < p; ++k) neg[k] = -xi[k];
        if (stored_index(neg) < 0) retained_.push_back({flat_of(neg), s, true});
    }
}

DiffTensor spectral_conv(const DiffTensor& x, const DiffTensor& A, const SpectralConvPlan& plan) {
    require_same_tape(x, A, "spectral_conv");
    require_shape(x, 2, "spectral_conv");
    require_shape(A, 4, "spectral_conv");
    const std::size_t hin = x.shape()[0], M = x.shape()[1];
    const std::size_t hout = A.shape()[1];
    if (M != plan.grid().size()) throw DomainMismatch("spectral_conv: point count does not match the plan's grid");
    if (A.shape()[0] != plan.box_size() || A.shape()[2] != hin || A.shape()[3] != 2)
        throw InvalidArgument("spectral_conv: weight shape does not match the plan or input width");

    const auto& modes = plan.retained();
    const std::size_t R = modes.size();
    const auto* Av = reinterpret_cast<const Complex*>(A.values().data());
    auto weight = [Av, hout, hin](const SpectralConvPlan::Mode& md, std::size_t o, std::size_t i) {
        const Complex a = Av[(md.stored * hout + o) * hin + i];
        return md.conjugate ? std::conj(a) : a;
    };

    // spectra of the inputs at the retained modes, [R][hin]
    std::vector<Complex> xh(R * hin), buf(M);
    for (std::size_t i = 0; i < hin; ++i) {
        plan.fft().forward_real(x.values().subspan(i * M, M), buf);
        for (std::size_t r = 0; r < R; ++r) xh[r * hin + i] = buf[modes[r].flat];
    }
    std::vector<double> y(hout * M);
    for (std::size_t o = 0; o < hout; ++o) {
        std::fill(buf.begin(), buf.end(), Complex(0.0));
        for (std::size_t r = 0; r < R; ++r) {
            Complex s = 0.0;
            for (std::size_t i = 0; i < hin; ++i) s += weight(modes[r], o, i) * xh[r * hin + i];
            buf[modes[r].flat] = s;
        }
        plan.fft().inverse(buf);
        for (std::size_t n = 0; n < M; ++n) y[o * M + n] = buf[n].real();
    }

    return x.tape()->record(
        {hout, M}, std::move(y), {x, A},
        [x, A, &plan, xh = std::move(xh), hin, hout, M, weight](auto g, Tape& t) {
            const auto& modes = plan.retained();
            const std::size_t R = modes.size();
            // adjoint of Re F^-1: gY = F[g] / M
            std::vector<Complex> gy(R * hout), buf(M);
            for (std::size_t o = 0; o < hout; ++o) {
                plan.fft().forward_real(g.subspan(o * M, M), buf);
                for (std::size_t r = 0; r < R; ++r) gy[r * hout + o] = buf[modes[r].flat] / double(M);
            }
            if (double* ga = t.grad_buffer(A)) {
                auto* gc = reinterpret_cast<Complex*>(ga);
                for (std::size_t r = 0; r < R; ++r)
                    for (std::size_t o = 0; o < hout; ++o)
                        for (std::size_t i = 0; i < hin; ++i) {
                            const Complex d = gy[r * hout + o] * std::conj(xh[r * hin + i]);
                            gc[(modes[r].stored * hout + o) * hin + i] += modes[r].conjugate ? std::conj(d) : d;
                        }
            }
            if (double* gx = t.grad_buffer(x)) {
                // gX = A^H gY, then x = Re F^H gX = M * Re F^-1 gX
                for (std::size_t i = 0; i < hin; ++i) {
                    std::fill(buf.begin(), buf.end(), Complex(0.0));
                    for (std::size_t r = 0; r < R; ++r) {
                        Complex s = 0.0;
                        for (std::size_t o = 0; o < hout; ++o) s += std::conj(weight(modes[r], o, i)) * gy[r * hout + o];
                        buf[modes[r].flat] = s;
                    }
                    plan.fft().inverse(buf);
                    for (std::size_t n = 0; n < M; ++n) gx[i * M + n] += double(M) * buf[n].real();
                }
            }
        });
}

DiffTensor fourier_layer(const DiffTensor& h, const DiffTensor& A, const DiffTensor& W, const DiffTensor& c,
                         const SpectralConvPlan& plan, Activation act) {
    DiffTensor z = add(channel_affine(h, W, c), spectral_conv(h, A, plan));
    return act == Activation::Gelu ? gelu(z) : z;
}

DiffTensor claw_layer(const DiffTensor& raw, const DiffBackend& backend) {
    require_attached(raw, "claw_layer");
    require_shape(raw, 2, "claw_layer");
    const std::size_t p = backend.dim(), s = skew_channel_count(p), M = raw.shape()[1];
    if (M != backend.size()) throw DomainMismatch("claw_layer: point count does not match the backend");
    if (raw.shape()[0] < s)
        throw InvalidArgument("claw_layer needs at least " + std::to_string(s) + " channels, got " +
                              std::to_string(raw.shape()[0]));
    const Field in(backend.domain(), raw.shape()[0], std::vector<double>(raw.values().begin(), raw.values().end()));
    Field out = mixed_output(in, backend);
    const std::size_t cout = out.channels(), extra = raw.shape()[0] - s;
    return raw.tape()->record({cout, M}, std::move(out.values()), {raw}, [raw, &backend, p, s, M, extra](auto g, Tape& t) {
        double* gr = t.grad_buffer(raw);
        const Field gu(backend.domain(), p, std::vector<double>(g.begin(), g.begin() + std::ptrdiff_t(p * M)));
        const Field gmu = claw_divergence_adjoint(gu, backend);
        for (std::size_t n = 0; n < s * M; ++n) gr[n] += gmu.values()[n];
        for (std::size_t n = 0; n < extra * M; ++n) gr[s * M + n] += g[p * M + n];
    });
}

// ---- model --------------------------------------------------------------------

namespace {

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), the Kaiming-uniform bound with a = sqrt 5.
Parameter kaiming(std::string name, std::vector<std::size_t> shape, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(double(fan_in));
    std::uniform_real_distribution<double> U(-bound, bound);
    Parameter p{std::move(name), std::move(shape), {}};
    p.values.resize(product(p.shape));
    for (auto& v : p.values) v = U(rng);
    return p;
}

}  // namespace

ClawFnoModel::ClawFnoModel(FnoConfig config, std::size_t dim, std::uint64_t seed)
    : config_(config), dim_(dim) {
    if (dim < 2 && config.claw) throw InvalidArgument("the claw layer needs at least two spatial dimensions");
    if (config.width == 0 || config.proj_hidden == 0 || config.modes == 0 || config.in_channels == 0)
        throw InvalidArgument("model widths, modes and input channels must be positive");
    std::mt19937_64 rng(seed);
    const std::size_t H = config.width, pf = config.in_channels + dim;
    params_.push_back(kaiming("lift.weight", {H, pf}, pf, rng));
    params_.push_back(kaiming("lift.bias", {H}, pf, rng));
    std::size_t box = 1;
    for (std::size_t k = 0; k < dim; ++k) box *= config.modes;
    std::uniform_real_distribution<double> U01(0.0, 1.0);
    for (std::size_t l = 0; l < config.layers; ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        Parameter A{pre + "A", {box, H, H, 2}, std::vector<double>(box * H * H * 2)};
        for (auto& v : A.values) v = U01(rng) / double(H * H);
        params_.push_back(std::move(A));
        params_.push_back(kaiming(pre + "W", {H, H}, H, rng));
        params_.push_back(kaiming(pre + "c", {H}, H, rng));
    }
    params_.push_back(kaiming("proj.hidden.weight", {config.proj_hidden, H}, H, rng));
    params_.push_back(kaiming("proj.hidden.bias", {config.proj_hidden}, H, rng));
    params_.push_back(kaiming("proj.out.weight", {raw_channels(), config.proj_hidden}, config.proj_hidden, rng));
    params_.push_back(kaiming("proj.out.bias", {raw_channels()}, config.proj_hidden, rng));
}

std::size_t ClawFnoModel::raw_channels() const {
    return (config_.claw ? skew_channel_count(dim_) : dim_) + config_.extra_channels;
}

std::size_t ClawFnoModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.values.size();
    return n;
}

const Parameter& ClawFnoModel::parameter(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return p;
    throw InvalidArgument("no parameter named " + name);
}

Field ClawFnoModel::encode(const Field& input) const {
    const auto* grid = input.domain().periodic();
    if (!grid) throw InvalidArgument("the model runs on periodic grids");
    if (grid->dim() != dim_)
        throw InvalidArgument("model built for " + std::to_string(dim_) + " dimensions, input has " +
                              std::to_string(grid->dim()));
    if (input.channels() != config_.in_channels)
        throw InvalidArgument("model expects " + std::to_string(config_.in_channels) + " input channels, got " +
                              std::to_string(input.channels()));
    const std::size_t M = input.points();
    Field out(input.domain(), input.channels() + dim_);
    std::copy(input.values().begin(), input.values().end(), out.values().begin());
    for (std::size_t k = 0; k < dim_; ++k)
        for (std::size_t i = 0; i < M; ++i) out.at(input.channels() + k, i) = grid->coord(i, k);
    return out;
}

const ClawFnoModel::GridOps& ClawFnoModel::ops(const PeriodicGrid& grid) const {
    std::vector<double> key(grid.lengths());
    for (auto n : grid.counts()) key.push_back(double(n));
    std::lock_guard lock(cache_mutex_);
    auto& slot = cache_[key];
    if (!slot) {
        slot = std::make_unique<GridOps>();
        slot->plan = std::make_unique<SpectralConvPlan>(grid, config_.modes);
        slot->backend = std::make_shared<SpectralPlan>(grid);
    }
    return *slot;
}

const SpectralConvPlan& ClawFnoModel::conv_plan(const PeriodicGrid& grid) const { return *ops(grid).plan; }

std::shared_ptr<const DiffBackend> ClawFnoModel::backend(const PeriodicGrid& grid) const {
    return ops(grid).backend;
}

ClawFnoModel::Pass ClawFnoModel::forward(Tape& tape, const Field& input) const {
    const Field x = encode(input);
    const auto& grid = *x.domain().periodic();
    const GridOps& g = ops(grid);
    Pass pass;
    for (const auto& p : params_) pass.params.push_back(tape.leaf(p.shape, p.values, true));
    auto P = [&](std::size_t k) { return pass.params[k]; };

    DiffTensor in = tape.leaf({x.channels(), x.points()}, x.values(), false);
    pass.lifted = channel_affine(in, P(0), P(1));
    DiffTensor h = pass.lifted;
    std::size_t k = 2;
    for (std::size_t l = 0; l < config_.layers; ++l, k += 3)
        h = fourier_layer(h, P(k), P(k + 1), P(k + 2), *g.plan, config_.activation);
    pass.latent = h;
    DiffTensor q = gelu(channel_affine(h, P(k), P(k + 1)));
    pass.raw = channel_affine(q, P(k + 2), P(k + 3));
    pass.output = config_.claw ? claw_layer(pass.raw, *g.backend) : pass.raw;
    return pass;
}

Field ClawFnoModel::predict(const Field& input) const {
    Tape tape;
    const Pass pass = forward(tape, input);
    const auto v = pass.output.values();
    return Field(input.domain(), out_channels(), std::vector<double>(v.begin(), v.end()));
}

double relative_l2_loss(std::span<const Field> pred, std::span<const Field> truth) {
    if (pred.size() != truth.size() || pred.empty())
        throw InvalidArgument("relative_l2_loss needs matching, non-empty batches");
    double total = 0.0;
    for (std::size_t s = 0; s < pred.size(); ++s) {
        const auto& a = pred[s].values();
        const auto& b = truth[s].values();
        if (a.size() != b.size()) throw InvalidArgument("relative_l2_loss: sample shape mismatch");
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            num += (a[i] - b[i]) * (a[i] - b[i]);
            den += b[i] * b[i];
        }
        if (!(den > 0.0)) throw InvalidArgument("relative_l2_loss: sample " + std::to_string(s) + " has zero norm");
        total += num / den;
    }
    return total / double(pred.size());
}

}  // namespace clawno
