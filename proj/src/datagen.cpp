#include "clawno/datagen.hpp"

#include <boost/random/normal_distribution.hpp>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "clawno/clawcore.hpp"
#include "clawno/field_io.hpp"
#include "clawno/specdiff.hpp"

namespace clawno {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

const PeriodicGrid& require_grid2(const Field& f, std::size_t channels, const char* what) {
    const auto* g = f.domain().periodic();
    if (!g || g->dim() != 2) throw InvalidArgument(std::string(what) + " needs a field on a 2D periodic grid");
    if (f.channels() != channels)
        throw InvalidArgument(std::string(what) + " needs " + std::to_string(channels) + " channel(s), got " +
                              std::to_string(f.channels()));
    return *g;
}

// |kappa|^2 with the Nyquist frequency kept.
double kappa_sq(const PeriodicGrid& g, std::size_t flat) {
    double s = 0.0;
    const auto idx = g.unravel(flat);
    for (std::size_t k = 0; k < g.dim(); ++k) {
        const double kap = kTwoPi * double(signed_frequency(idx[k], g.count(k))) / g.length(k);
        s += kap * kap;
    }
    return s;
}

std::vector<double> real_part(const std::vector<Complex>& z) {
    std::vector<double> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i].real();
    return out;
}

}  // namespace

Field sample_initial_vorticity(const GrfSpec& grf, const PeriodicGrid& grid, std::uint64_t seed) {
    if (!(grf.tau > 0.0) || !(grf.alpha > 0.0)) throw InvalidArgument("GRF needs tau > 0 and alpha > 0");
    std::mt19937_64 rng(seed);
    boost::random::normal_distribution<double> N01;
    const double p = double(grid.dim());
    const double amp = grf.scale * std::sqrt(2.0) * std::pow(grf.tau, grf.alpha - 0.5 * p) * double(grid.size());
    std::vector<Complex> spec(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double re = N01(rng), im = N01(rng);
        spec[i] = amp * std::pow(kappa_sq(grid, i) + grf.tau * grf.tau, -0.5 * grf.alpha) * Complex(re, im);
        // Nyquist modes have no derivative on the grid; keep them empty.
        const auto idx = grid.unravel(i);
        for (std::size_t k = 0; k < grid.dim(); ++k)
            if (2 * idx[k] == grid.count(k)) spec[i] = 0.0;
    }
    spec[0] = 0.0;
    FftPlan fft(grid.counts());
    fft.inverse(spec);
    Field w(grid, 1, real_part(spec));
    // The real part of a non-Hermitian spectrum keeps a zero mean only up to roundoff.
    double mean = 0.0;
    for (double v : w.values()) mean += v;
    mean /= double(grid.size());
    for (double& v : w.values()) v -= mean;
    return w;
}

double channel_mean(const Field& f, std::size_t channel) {
    double s = 0.0;
    for (double v : f.channel(channel)) s += v;
    return s / double(f.points());
}

Field velocity_from_vorticity(const Field& w) {
    const auto& g = require_grid2(w, 1, "velocity_from_vorticity");
    double wmax = 0.0;
    for (double v : w.values()) wmax = std::max(wmax, std::abs(v));
    const double mean = channel_mean(w, 0);
    if (std::abs(mean) > 1e-10 * (1.0 + wmax))
        throw InvalidArgument("vorticity must have zero mean for the stream function to exist (mean " +
                              std::to_string(mean) + ")");
    SpectralPlan plan(g);
    std::vector<Complex> psi(g.size());
    plan.fft().forward_real(w.channel(0), psi);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double k2 = kappa_sq(g, i);
        psi[i] = k2 > 0.0 ? psi[i] / k2 : Complex(0.0);
    }
    Field u(g, 2);
    std::vector<Complex> buf = psi;
    plan.multiply(buf, 1);
    plan.fft().inverse(buf);
    for (std::size_t i = 0; i < g.size(); ++i) u.at(0, i) = buf[i].real();
    buf = psi;
    plan.multiply(buf, 0);
    plan.fft().inverse(buf);
    for (std::size_t i = 0; i < g.size(); ++i) u.at(1, i) = -buf[i].real();
    return u;
}

Field vorticity_from_velocity(const Field& u) {
    const auto& g = require_grid2(u, 2, "vorticity_from_velocity");
    SpectralPlan plan(g);
    Field w(g, 1);
    std::vector<double> d(g.size());
    plan.partial(u.channel(1), d, 0);
    auto out = w.channel(0);
    for (std::size_t i = 0; i < g.size(); ++i) out[i] = d[i];
    plan.partial(u.channel(0), d, 1);
    for (std::size_t i = 0; i < g.size(); ++i) out[i] -= d[i];
    return w;
}

double kinetic_energy(const Field& u) {
    double s = 0.0;
    for (double v : u.values()) s += v * v;
    return 0.5 * s / double(u.points());
}

// ---- configuration ----------------------------------------------------------

std::size_t NsConfig::steps_per_record() const {
    if (!(dt > 0.0) || !(record_interval > 0.0)) throw InvalidArgument("dt and record_interval must be positive");
    const double r = record_interval / dt;
    const double n = std::round(r);
    if (n < 1.0 || std::abs(r - n) > 1e-9 * r)
        throw InvalidArgument("record_interval must be a whole multiple of dt");
    return std::size_t(n);
}

PeriodicGrid NsConfig::fine_grid() const { return PeriodicGrid({1.0, 1.0}, {resolution, resolution}); }

PeriodicGrid NsConfig::stored_grid() const {
    return PeriodicGrid({1.0, 1.0}, {stored_resolution(), stored_resolution()});
}

void NsConfig::validate() const {
    if (resolution < 4 || resolution % 2) throw InvalidArgument("resolution must be even and at least 4");
    if (pool < 1 || resolution % pool || (resolution / pool) % 2)
        throw InvalidArgument("pool must divide the resolution into an even stored resolution");
    if (!(viscosity >= 0.0)) throw InvalidArgument("viscosity must be non-negative");
    if (records < 1) throw InvalidArgument("records must be at least 1");
    if (!(grf.tau > 0.0) || !(grf.alpha > 0.0)) throw InvalidArgument("GRF needs tau > 0 and alpha > 0");
    (void)steps_per_record();
}

std::optional<std::string> stability_warning(const NsConfig& c, double velocity_scale) {
    const double dx = 1.0 / double(c.resolution);
    std::ostringstream msg;
    const double diff = c.viscosity * c.dt / (dx * dx);
    const double cfl = velocity_scale * c.dt / dx;
    if (diff > 0.25) msg << "nu dt / dx^2 = " << diff << " exceeds 1/4; ";
    if (cfl > 0.5) msg << "advective CFL number " << cfl << " exceeds 1/2; ";
    if (msg.str().empty()) return std::nullopt;
    return msg.str();
}

nlohmann::json to_json(const NsConfig& c) {
    return {{"resolution", c.resolution},
            {"viscosity", c.viscosity},
            {"dt", c.dt},
            {"record_interval", c.record_interval},
            {"records", c.records},
            {"forcing", c.forcing},
            {"seed", c.seed},
            {"pool", c.pool},
            {"grf", {{"tau", c.grf.tau}, {"alpha", c.grf.alpha}, {"scale", c.grf.scale}}}};
}

NsConfig ns_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw InvalidArgument("NS config must be a JSON object");
    NsConfig c;
    for (const auto& [key, v] : j.items()) {
        if (key == "resolution") c.resolution = v.get<std::size_t>();
        else if (key == "viscosity") c.viscosity = v.get<double>();
        else if (key == "dt") c.dt = v.get<double>();
        else if (key == "record_interval") c.record_interval = v.get<double>();
        else if (key == "records") c.records = v.get<std::size_t>();
        else if (key == "forcing") c.forcing = v.get<bool>();
        else if (key == "seed") c.seed = v.get<std::uint64_t>();
        else if (key == "pool") c.pool = v.get<std::size_t>();
        else if (key == "grf") {
            for (const auto& [gk, gv] : v.items()) {
                if (gk == "tau") c.grf.tau = gv.get<double>();
                else if (gk == "alpha") c.grf.alpha = gv.get<double>();
                else if (gk == "scale") c.grf.scale = gv.get<double>();
                else throw InvalidArgument("unknown key grf." + gk);
            }
        } else {
            throw InvalidArgument("unknown NS config key '" + key + "'");
        }
    }
    c.validate();
    return c;
}

// ---- solver -------------------------------------------------------------------

NsSolver::NsSolver(NsConfig config)
    : config_(std::move(config)), grid_(config_.fine_grid()), fft_(grid_.counts()) {
    config_.validate();
    const std::size_t N = config_.resolution, M = grid_.size();
    SpectralPlan plan(grid_);
    kx_.resize(M);
    ky_.resize(M);
    lap_.resize(M);
    keep_.resize(M);
    for (std::size_t i = 0; i < M; ++i) {
        const std::size_t a = i / N, b = i % N;
        kx_[i] = plan.wavenumber(0, a);
        ky_[i] = plan.wavenumber(1, b);
        lap_[i] = kappa_sq(grid_, i);
        keep_[i] = 3 * std::size_t(std::labs(signed_frequency(a, N))) <= N &&
                   3 * std::size_t(std::labs(signed_frequency(b, N))) <= N;
    }
    force_hat_.assign(M, 0.0);
    if (config_.forcing) {
        std::vector<double> f(M);
        for (std::size_t i = 0; i < M; ++i) {
            const double s = kTwoPi * (grid_.coord(i, 0) + grid_.coord(i, 1));
            f[i] = 0.1 * (std::sin(s) + std::cos(s));
        }
        fft_.forward_real(f, force_hat_);
    }
}

NsState NsSolver::initial_state(const Field& w0) const {
    require_grid2(w0, 1, "initial_state");
    if (!(*w0.domain().periodic() == grid_)) throw DomainMismatch("initial vorticity is not on the solver grid");
    NsState s;
    s.w_hat.resize(grid_.size());
    fft_.forward_real(w0.channel(0), s.w_hat);
    return s;
}

NsState NsSolver::initial_state(std::uint64_t seed) const {
    return initial_state(sample_initial_vorticity(config_.grf, grid_, seed));
}

void NsSolver::step(NsState& s) const {
    const std::size_t M = grid_.size();
    const double dt = config_.dt, nu = config_.viscosity;
    std::vector<Complex> uv(M), grad(M);
    // ifft(i ky psi + kx psi) = u_x + i u_y and ifft(i kx w - ky w) = w_x + i w_y
    for (std::size_t i = 0; i < M; ++i) {
        const Complex psi = lap_[i] > 0.0 ? s.w_hat[i] / lap_[i] : Complex(0.0);
        uv[i] = Complex(-ky_[i] * psi.imag() + kx_[i] * psi.real(), ky_[i] * psi.real() + kx_[i] * psi.imag());
        const Complex w = s.w_hat[i];
        grad[i] = Complex(-kx_[i] * w.imag() - ky_[i] * w.real(), kx_[i] * w.real() - ky_[i] * w.imag());
    }
    fft_.inverse(uv);
    fft_.inverse(grad);
    std::vector<Complex> adv(M);
    double check = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
        const double a = uv[i].real() * grad[i].real() + uv[i].imag() * grad[i].imag();
        adv[i] = a;
        check += a;
    }
    if (!std::isfinite(check))
        throw NumericalAbort("non-finite vorticity at step " + std::to_string(s.step + 1));
    fft_.forward(adv);
    for (std::size_t i = 0; i < M; ++i) {
        const double h = 0.5 * dt * nu * lap_[i];
        const Complex n = keep_[i] ? adv[i] : Complex(0.0);
        s.w_hat[i] = ((1.0 - h) * s.w_hat[i] - dt * n + dt * force_hat_[i]) / (1.0 + h);
    }
    ++s.step;
    s.time = double(s.step) * dt;
}

Field NsSolver::vorticity(const NsState& s) const {
    std::vector<Complex> buf = s.w_hat;
    fft_.inverse(buf);
    return Field(grid_, 1, real_part(buf));
}

Field NsSolver::velocity(const NsState& s) const { return velocity_from_vorticity(vorticity(s)); }

NsState ns_step(const NsState& state, const NsConfig& config) {
    NsSolver solver(config);
    NsState next = state;
    solver.step(next);
    return next;
}

NsTrajectory simulate(const NsConfig& config, std::uint64_t seed) {
    NsSolver solver(config);
    NsTrajectory traj;
    traj.seed = seed;
    NsState s = solver.initial_state(seed);
    const double mean0 = s.w_hat[0].real() / double(solver.grid().size());
    const std::size_t every = config.steps_per_record();
    SpectralPlan plan(solver.grid());
    for (std::size_t r = 0; r < config.records; ++r) {
        for (std::size_t k = 0; k < every; ++k) solver.step(s);
        Field w = solver.vorticity(s);
        Field u = velocity_from_vorticity(w);
        const double scale = rms(u);
        if (scale > 0.0) traj.fine_divergence = std::max(traj.fine_divergence, rms(divergence(u, plan)) / scale);
        traj.times.push_back(s.time);
        traj.vorticity.push_back(std::move(w));
        traj.velocity.push_back(std::move(u));
    }
    traj.steps = s.step;
    const double mean1 = s.w_hat[0].real() / double(solver.grid().size());
    traj.mean_drift = std::abs(mean1 - mean0) * 1000.0 / double(std::max<std::size_t>(s.step, 1));
    return traj;
}

Field mean_pool(const Field& field, std::size_t factor) {
    const auto* g = field.domain().periodic();
    if (!g) throw InvalidArgument("mean pooling needs a periodic grid field");
    if (factor == 1) return field;
    std::vector<std::size_t> counts;
    for (auto n : g->counts()) {
        if (n % factor || (n / factor) % 2)
            throw InvalidArgument("pooling factor must divide every count into an even count");
        counts.push_back(n / factor);
    }
    const PeriodicGrid coarse(g->lengths(), counts);
    Field out(coarse, field.channels());
    const double w = 1.0 / std::pow(double(factor), double(g->dim()));
    std::vector<std::size_t> ci(g->dim());
    for (std::size_t i = 0; i < g->size(); ++i) {
        const auto idx = g->unravel(i);
        for (std::size_t k = 0; k < g->dim(); ++k) ci[k] = idx[k] / factor;
        const std::size_t j = coarse.ravel(ci);
        for (std::size_t c = 0; c < field.channels(); ++c) out.at(c, j) += w * field.at(c, i);
    }
    return out;
}

Field stack_frames(const std::vector<Field>& frames) {
    if (frames.empty()) throw InvalidArgument("no frames to stack");
    const std::size_t c = frames[0].channels(), M = frames[0].points();
    Field out(frames[0].domain(), c * frames.size());
    for (std::size_t t = 0; t < frames.size(); ++t) {
        if (frames[t].channels() != c || !(frames[t].domain() == frames[0].domain()))
            throw DomainMismatch("frames differ in shape");
        std::copy(frames[t].values().begin(), frames[t].values().end(),
                  out.values().begin() + std::ptrdiff_t(t * c * M));
    }
    return out;
}

Field frame_window(const Field& sample, std::size_t t0, std::size_t count) {
    const std::size_t M = sample.points();
    if (2 * (t0 + count) > sample.channels())
        throw InvalidArgument("frame window " + std::to_string(t0) + "+" + std::to_string(count) +
                              " exceeds the " + std::to_string(sample.channels() / 2) + " stored frames");
    const auto first = sample.values().begin() + std::ptrdiff_t(2 * t0 * M);
    return Field(sample.domain(), 2 * count, std::vector<double>(first, first + std::ptrdiff_t(2 * count * M)));
}

Field frame(const Field& sample, std::size_t t) { return frame_window(sample, t, 1); }

// ---- datasets -----------------------------------------------------------------

std::uint64_t sample_seed(std::uint64_t base, std::size_t k) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (std::uint64_t(k) + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Field simulate_sample(const NsConfig& config, std::uint64_t seed, SampleRecord* record) {
    NsTrajectory traj = simulate(config, seed);
    std::vector<Field> pooled;
    double stored_div = 0.0, stored_rel = 0.0;
    for (const auto& u : traj.velocity) {
        pooled.push_back(mean_pool(u, config.pool));
        const double div = spectral_divergence_l2(pooled.back()), scale = rms(pooled.back());
        stored_div = std::max(stored_div, div);
        if (scale > 0.0) stored_rel = std::max(stored_rel, div / scale);
    }
    if (record) {
        record->seed = seed;
        record->fine_divergence = traj.fine_divergence;
        record->stored_divergence = stored_div;
        record->stored_divergence_relative = stored_rel;
        record->mean_drift = traj.mean_drift;
    }
    return stack_frames(pooled);
}

namespace {

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t file_checksum(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();
    return fnv1a(std::string_view(bytes));
}

nlohmann::json split_json(const DatasetSplit& s) {
    return {{"train", s.train}, {"validation", s.validation}, {"test", s.test}};
}

}  // namespace

nlohmann::json to_json(const DatasetManifest& m) {
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& s : m.samples)
        samples.push_back({{"index", s.index},
                           {"seed", s.seed},
                           {"file", s.file},
                           {"fnv1a", hex64(s.checksum)},
                           {"fine_divergence", s.fine_divergence},
                           {"stored_divergence", s.stored_divergence},
                           {"stored_divergence_relative", s.stored_divergence_relative},
                           {"mean_vorticity_drift_per_1000_steps", s.mean_drift}});
    nlohmann::json j = {{"format", "clawno-ns2d"},
                        {"version", 1},
                        {"config", to_json(m.config)},
                        {"layout", "channel 2t+c holds velocity component c of frame t"},
                        {"frame_times", nlohmann::json::array()},
                        {"stored_resolution", m.config.stored_resolution()},
                        {"samples", samples},
                        {"warnings", m.warnings}};
    for (std::size_t r = 1; r <= m.config.records; ++r)
        j["frame_times"].push_back(double(r * m.config.steps_per_record()) * m.config.dt);
    if (m.split) j["split"] = split_json(*m.split);
    return j;
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "clawno-ns2d") throw IoError("not a clawno-ns2d manifest");
    DatasetManifest m;
    m.config = ns_config_from_json(j.at("config"));
    for (const auto& s : j.at("samples")) {
        SampleRecord r;
        r.index = s.at("index").get<std::size_t>();
        r.seed = s.at("seed").get<std::uint64_t>();
        r.file = s.at("file").get<std::string>();
        r.checksum = std::stoull(s.at("fnv1a").get<std::string>(), nullptr, 16);
        r.fine_divergence = s.value("fine_divergence", 0.0);
        r.stored_divergence = s.value("stored_divergence", 0.0);
        r.stored_divergence_relative = s.value("stored_divergence_relative", 0.0);
        r.mean_drift = s.value("mean_vorticity_drift_per_1000_steps", 0.0);
        m.samples.push_back(std::move(r));
    }
    if (j.contains("split")) {
        DatasetSplit s;
        const auto& js = j.at("split");
        s.train = js.at("train").get<std::vector<std::size_t>>();
        s.validation = js.at("validation").get<std::vector<std::size_t>>();
        s.test = js.at("test").get<std::vector<std::size_t>>();
        m.split = s;
    }
    if (j.contains("warnings")) m.warnings = j.at("warnings").get<std::vector<std::string>>();
    return m;
}

DatasetManifest generate_dataset(const NsConfig& config, std::size_t n_samples, const std::filesystem::path& dir,
                                 std::optional<DatasetSplit> split) {
    config.validate();
    if (n_samples == 0) throw InvalidArgument("n_samples must be positive");
    if (split)
        for (const auto* part : {&split->train, &split->validation, &split->test})
            for (auto k : *part)
                if (k >= n_samples) throw InvalidArgument("split index " + std::to_string(k) + " out of range");
    std::filesystem::create_directories(dir);

    DatasetManifest m;
    m.config = config;
    m.split = std::move(split);
    m.samples.resize(n_samples);
    std::vector<std::string> errors(n_samples);
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t kk = 0; kk < std::ptrdiff_t(n_samples); ++kk) {
        const std::size_t k = std::size_t(kk);
        SampleRecord& r = m.samples[k];
        r.index = k;
        char name[32];
        std::snprintf(name, sizeof(name), "sample_%04zu.fld", k);
        r.file = name;
        try {
            Field sample = simulate_sample(config, sample_seed(config.seed, k), &r);
            save_field(sample, dir / r.file);
            r.checksum = file_checksum(dir / r.file);
        } catch (const std::exception& e) {
            errors[k] = "sample " + std::to_string(k) + ": " + e.what();
        }
    }
    for (std::size_t k = 0; k < n_samples; ++k) {
        if (errors[k].empty()) continue;
        if (errors[k].find("non-finite") != std::string::npos) throw NumericalAbort(errors[k]);
        throw IoError(errors[k]);
    }

    if (auto w = stability_warning(config)) m.warnings.push_back(*w);
    std::ofstream out(dir / "manifest.json");
    out << to_json(m).dump(2) << '\n';
    if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
    return m;
}

Dataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IoError("no manifest.json in " + dir.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed manifest: " + std::string(e.what()));
    }
    Dataset d;
    d.dir = dir;
    d.manifest = manifest_from_json(j);
    const auto grid = d.manifest.config.stored_grid();
    for (const auto& r : d.manifest.samples) {
        const auto path = dir / r.file;
        if (file_checksum(path) != r.checksum) throw IoError("checksum mismatch for " + path.string());
        Field f = load_field(path, grid.lengths());
        if (!(*f.domain().periodic() == grid) || f.channels() != 2 * d.manifest.config.records)
            throw IoError(path.string() + " does not match the manifest's grid and frame count");
        d.samples.push_back(std::move(f));
    }
    return d;
}

}  // namespace clawno
