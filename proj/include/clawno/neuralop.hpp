#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "clawno/backend.hpp"
#include "clawno/fft.hpp"
#include "clawno/geometry.hpp"

namespace clawno {

class Tape;

/**
 * Handle to a float64 tensor recorded on a Tape. Copies share the node.
 * A default-constructed tensor is detached and cannot be differentiated.
 */
class DiffTensor {
public:
    DiffTensor() = default;

    bool attached() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    std::size_t node() const { return id_; }

    const std::vector<std::size_t>& shape() const;
    std::size_t numel() const;
    std::span<const double> values() const;
    /// Empty until backward() reached this node.
    std::span<const double> grad() const;
    /// Value of a single-element tensor.
    double item() const;

private:
    friend class Tape;
    DiffTensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/**
 * Reverse-mode record of one forward evaluation. Nodes are appended in
 * evaluation order; backward() walks them in reverse.
 */
class Tape {
public:
    /// Receives the gradient of the node's output; accumulates into its inputs.
    using BackwardFn = std::function<void(std::span<const double> grad_out, Tape& tape)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    DiffTensor leaf(std::vector<std::size_t> shape, std::vector<double> values, bool requires_grad);
    DiffTensor record(std::vector<std::size_t> shape, std::vector<double> values,
                      std::initializer_list<DiffTensor> inputs, BackwardFn backward);

    /// Seeds d(out)/d(out) = 1 on a single-element tensor and propagates.
    void backward(const DiffTensor& out);

    /// Gradient buffer of `t`, zero-initialized on first use. Null when `t` needs no gradient.
    double* grad_buffer(const DiffTensor& t);
    bool requires_grad(const DiffTensor& t) const { return nodes_.at(t.node()).requires_grad; }

    std::size_t size() const { return nodes_.size(); }

private:
    friend class DiffTensor;
    struct Node {
        std::vector<std::size_t> shape;
        std::vector<double> values;
        std::vector<double> grad;
        BackwardFn backward;
        bool requires_grad = false;
    };
    std::vector<Node> nodes_;
};

// ---- differentiable operations --------------------------------------------
// Multi-channel point data uses shape {channels, points}, channel-major, like Field.

/// y[o, n] = sum_i W[o, i] x[i, n] + b[o].
DiffTensor channel_affine(const DiffTensor& x, const DiffTensor& W, const DiffTensor& b);

/// Gaussian error linear unit, 0.5 x (1 + erf(x / sqrt 2)).
DiffTensor gelu(const DiffTensor& x);

DiffTensor add(const DiffTensor& a, const DiffTensor& b);
DiffTensor scale(const DiffTensor& x, double s);
/// Sum of squares of all entries.
DiffTensor sum_squares(const DiffTensor& x);

/// sum (pred - truth)^2 / sum truth^2 over all entries of one sample.
DiffTensor relative_l2(const DiffTensor& pred, std::span<const double> truth);

/**
 * Mode bookkeeping of one spectral convolution on one grid.
 *
 * Weights are stored on a box of modes: axes 0..p-2 take the signed
 * frequencies -m/2 .. m/2-1, the last axis takes 0 .. m-1. The rest of the
 * retained spectrum is the mirror image -xi of that box, whose weight is the
 * complex conjugate of the stored one. On a grid with N_k / 2 < m the box is
 * clipped to m' = N_k / 2 on that axis.
 */
class SpectralConvPlan {
public:
    SpectralConvPlan(const PeriodicGrid& grid, std::size_t modes);

    const PeriodicGrid& grid() const { return grid_; }
    std::size_t modes() const { return modes_; }
    const FftPlan& fft() const { return fft_; }
    /// Complex entries per channel pair in the stored box, modes^p.
    std::size_t box_size() const { return box_size_; }

    struct Mode {
        std::size_t flat;    ///< FFT bin on the grid
        std::size_t stored;  ///< index into the stored box
        bool conjugate;      ///< weight is conj(stored)
    };
    const std::vector<Mode>& retained() const { return retained_; }

private:
    PeriodicGrid grid_;
    std::size_t modes_;
    std::size_t box_size_;
    FftPlan fft_;
    std::vector<Mode> retained_;
};

/**
 * y = Re F^-1 [A_eff(xi) F[x](xi)] with full H_out x H_in complex mixing per
 * retained mode. A has shape {box_size, H_out, H_in, 2} (real, imaginary).
 */
DiffTensor spectral_conv(const DiffTensor& x, const DiffTensor& A, const SpectralConvPlan& plan);

enum class Activation { Gelu, Identity };

/// sigma(W h + F^-1[A F h] + c).
DiffTensor fourier_layer(const DiffTensor& h, const DiffTensor& A, const DiffTensor& W, const DiffTensor& c,
                         const SpectralConvPlan& plan, Activation act = Activation::Gelu);

/**
 * Fixed divergence layer: the first p(p-1)/2 channels are skew entries mu_ij,
 * mapped to u_i = sum_j d_j mu_ij; remaining channels pass through.
 * No trainable state; the backward pass uses the backend's adjoint.
 */
DiffTensor claw_layer(const DiffTensor& raw, const DiffBackend& backend);

// ---- model -----------------------------------------------------------------

struct FnoConfig {
    std::size_t in_channels = 2;    ///< data channels, before coordinate encoding
    std::size_t width = 20;         ///< H
    std::size_t layers = 4;         ///< L
    std::size_t modes = 12;         ///< per axis, clipped to N/2 on coarse grids
    std::size_t proj_hidden = 128;  ///< d_Q
    std::size_t extra_channels = 0; ///< n2, outputs that bypass the claw layer
    bool claw = true;               ///< false: ablated FNO, Q emits p + n2 channels
    Activation activation = Activation::Gelu;
};

struct Parameter {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> values;
};

/**
 * D o Q o J_L o ... o J_1 o P on periodic grids of a fixed dimension p.
 *
 * The input is encoded by appending the p Cartesian coordinates as extra
 * channels. Weights are resolution independent; per-grid transform plans and
 * the spectral differentiation backend are built on first use and cached.
 */
class ClawFnoModel {
public:
    ClawFnoModel(FnoConfig config, std::size_t dim, std::uint64_t seed);

    const FnoConfig& config() const { return config_; }
    std::size_t dim() const { return dim_; }
    /// Channels produced by Q: p(p-1)/2 + n2 (claw) or p + n2 (ablated).
    std::size_t raw_channels() const;
    /// Channels of the model output: p + n2 in both variants.
    std::size_t out_channels() const { return dim_ + config_.extra_channels; }

    std::vector<Parameter>& parameters() { return params_; }
    const std::vector<Parameter>& parameters() const { return params_; }
    std::size_t parameter_count() const;
    const Parameter& parameter(const std::string& name) const;

    /// Input with the coordinate channels appended.
    Field encode(const Field& input) const;

    /// Per-stage outputs of one taped pass.
    struct Pass {
        std::vector<DiffTensor> params;  ///< aligned with parameters()
        DiffTensor lifted, latent, raw, output;
    };
    Pass forward(Tape& tape, const Field& input) const;

    /// Forward evaluation without gradients.
    Field predict(const Field& input) const;

    const SpectralConvPlan& conv_plan(const PeriodicGrid& grid) const;
    std::shared_ptr<const DiffBackend> backend(const PeriodicGrid& grid) const;

private:
    FnoConfig config_;
    std::size_t dim_;
    std::vector<Parameter> params_;

    struct GridOps {
        std::unique_ptr<SpectralConvPlan> plan;
        std::shared_ptr<const DiffBackend> backend;
    };
    const GridOps& ops(const PeriodicGrid& grid) const;
    mutable std::mutex cache_mutex_;
    mutable std::map<std::vector<double>, std::unique_ptr<GridOps>> cache_;
};

/// Mean over samples of the per-sample relative squared error.
double relative_l2_loss(std::span<const Field> pred, std::span<const Field> truth);

}  // namespace clawno
