#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "clawno/fft.hpp"
#include "clawno/geometry.hpp"
#include "json.hpp"

namespace clawno {

/// Raised when a simulation produces non-finite values.
class NumericalAbort : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Gaussian random field with covariance scale^2 (-Laplacian + tau^2)^-alpha.
struct GrfSpec {
    double tau = 7.0;
    double alpha = 2.5;
    double scale = 1.0;
};

/**
 * Draws a real random field: Fourier coefficients
 *   scale sqrt(2) tau^(alpha - p/2) (|kappa|^2 + tau^2)^(-alpha/2) N (z_re + i z_im)
 * with standard normals z, the mean and Nyquist modes set to zero, then the
 * real part of the inverse transform. kappa = 2 pi xi / L. Deterministic in `seed`.
 */
Field sample_initial_vorticity(const GrfSpec& grf, const PeriodicGrid& grid, std::uint64_t seed);

/**
 * u = (d psi/dy, -d psi/dx) with -Laplacian psi = w, solved spectrally on a 2D
 * periodic grid. Throws if the mean of w exceeds 1e-10 (1 + max |w|). Nyquist
 * modes of w do not reach u, whose derivatives would discard them.
 */
Field velocity_from_vorticity(const Field& w);

/// Spectral curl d u_y/dx - d u_x/dy of a 2-channel field on a 2D periodic grid.
Field vorticity_from_velocity(const Field& u);

/// 1/2 mean |u|^2.
double kinetic_energy(const Field& u);

double channel_mean(const Field& f, std::size_t channel);

struct NsConfig {
    std::size_t resolution = 64;   ///< fine grid N x N on [0,1]^2
    double viscosity = 1e-4;
    double dt = 1e-4;
    double record_interval = 0.8;  ///< frames at k * record_interval, k = 1..records
    std::size_t records = 30;
    bool forcing = true;
    std::uint64_t seed = 0;
    std::size_t pool = 2;          ///< mean-pooling factor for stored frames
    GrfSpec grf;

    /// Solver steps between frames; throws unless record_interval is a multiple of dt.
    std::size_t steps_per_record() const;
    std::size_t stored_resolution() const { return resolution / pool; }
    PeriodicGrid fine_grid() const;
    PeriodicGrid stored_grid() const;
    void validate() const;
};

/// Non-empty when nu dt / dx^2 exceeds the explicit diffusion limit 1/4 or the
/// initial advective CFL number (given a velocity scale) exceeds 1/2.
std::optional<std::string> stability_warning(const NsConfig& config, double velocity_scale = 1.0);

nlohmann::json to_json(const NsConfig& config);
/// Strict: unknown keys are rejected; missing keys keep their defaults.
NsConfig ns_config_from_json(const nlohmann::json& j);

/// Vorticity spectrum on the fine grid plus the step counter.
struct NsState {
    std::vector<Complex> w_hat;
    std::size_t step = 0;
    double time = 0.0;
};

/**
 * Pseudo-spectral vorticity solver on [0,1]^2: Crank-Nicolson on nu Laplacian w,
 * explicit advection u . grad w with 2/3-rule dealiasing, forcing
 * 0.1 (sin(2 pi (x+y)) + cos(2 pi (x+y))) when enabled.
 */
class NsSolver {
public:
    explicit NsSolver(NsConfig config);

    const NsConfig& config() const { return config_; }
    const PeriodicGrid& grid() const { return grid_; }

    NsState initial_state(const Field& w0) const;
    NsState initial_state(std::uint64_t seed) const;
    void step(NsState& state) const;

    Field vorticity(const NsState& state) const;
    Field velocity(const NsState& state) const;

private:
    NsConfig config_;
    PeriodicGrid grid_;
    FftPlan fft_;
    std::vector<double> kx_, ky_;    // derivative multipliers, Nyquist zeroed
    std::vector<double> lap_;        // |kappa|^2
    std::vector<char> keep_;         // dealiasing mask
    std::vector<Complex> force_hat_;
};

/// One step with a freshly built solver.
NsState ns_step(const NsState& state, const NsConfig& config);

struct NsTrajectory {
    std::uint64_t seed = 0;
    std::vector<double> times;
    std::vector<Field> vorticity;   ///< fine grid
    std::vector<Field> velocity;    ///< fine grid
    std::size_t steps = 0;
    /// Largest spectral divergence RMS over the recorded fine frames, relative to velocity RMS.
    double fine_divergence = 0.0;
    /// |mean w(T) - mean w(0)| per 1000 steps.
    double mean_drift = 0.0;
};

NsTrajectory simulate(const NsConfig& config, std::uint64_t seed);

/// Block average over factor^p cells, block (i_1..i_p) stored at coarse node (i_1..i_p).
Field mean_pool(const Field& field, std::size_t factor);

/// Stored sample layout: channel 2 t + c holds velocity component c of frame t.
Field stack_frames(const std::vector<Field>& frames);
Field frame(const Field& sample, std::size_t t);
/// Frames t0 .. t0+count-1 stacked in the same layout.
Field frame_window(const Field& sample, std::size_t t0, std::size_t count);

struct DatasetSplit {
    std::vector<std::size_t> train, validation, test;
};

struct SampleRecord {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    std::string file;
    std::uint64_t checksum = 0;
    double fine_divergence = 0.0;              ///< relative to velocity RMS
    double stored_divergence = 0.0;            ///< largest spectral divergence RMS of a stored frame
    double stored_divergence_relative = 0.0;   ///< the same, divided by that frame's velocity RMS
    double mean_drift = 0.0;
};

struct DatasetManifest {
    NsConfig config;
    std::vector<SampleRecord> samples;
    std::optional<DatasetSplit> split;
    std::vector<std::string> warnings;

    std::size_t frames() const { return config.records; }
};

nlohmann::json to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const nlohmann::json& j);

/// Seed of sample k, a splitmix64 hash of the base seed and k.
std::uint64_t sample_seed(std::uint64_t base, std::size_t k);

/**
 * Simulates n samples (in parallel over samples), pools the velocity frames,
 * writes one field file per sample and manifest.json into `dir`.
 */
DatasetManifest generate_dataset(const NsConfig& config, std::size_t n_samples, const std::filesystem::path& dir,
                                 std::optional<DatasetSplit> split = std::nullopt);

/// Pooled velocity frames of one sample, exactly as generate_dataset stores them.
Field simulate_sample(const NsConfig& config, std::uint64_t seed, SampleRecord* record = nullptr);

struct Dataset {
    std::filesystem::path dir;
    DatasetManifest manifest;
    std::vector<Field> samples;
};

/// Loads all samples and verifies their checksums.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace clawno
