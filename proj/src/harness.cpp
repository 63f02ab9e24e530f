#include "clawno/harness.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

#include "clawno/clawcore.hpp"
#include "clawno/field_io.hpp"
#include "clawno/meshfree.hpp"
#include "clawno/specdiff.hpp"

namespace clawno {

namespace {

constexpr const char* kCheckpointFormat = "clawno-ckpt";
constexpr int kCheckpointVersion = 1;

double sum_squares(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

double diff_squares(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

double relative_divergence(const Field& u) {
    const double scale = rms(u);
    return scale > 0.0 ? spectral_divergence_l2(u) / scale : 0.0;
}

std::string join_counts(const std::vector<std::size_t>& counts) {
    std::string s;
    for (std::size_t i = 0; i < counts.size(); ++i) s += (i ? "x" : "") + std::to_string(counts[i]);
    return s;
}

std::vector<std::size_t> split_counts(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, 'x')) out.push_back(std::stoull(part));
    return out;
}

}  // namespace

// ---- config ------------------------------------------------------------------

void TrainConfig::validate() const {
    auto positive = [](std::size_t v, const char* name) {
        if (v == 0) throw InvalidArgument(std::string(name) + " must be positive");
    };
    positive(width, "width");
    positive(layers, "layers");
    positive(modes, "modes");
    positive(proj_hidden, "proj_hidden");
    positive(epochs, "epochs");
    positive(batch_size, "batch_size");
    positive(t_in, "t_in");
    positive(t_out, "t_out");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        throw InvalidArgument("learning_rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw InvalidArgument("betas must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw InvalidArgument("epsilon must be positive");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay))
        throw InvalidArgument("weight_decay must be non-negative");
}

FnoConfig TrainConfig::model_config() const {
    FnoConfig f;
    f.in_channels = 2 * t_in;
    f.width = width;
    f.layers = layers;
    f.modes = modes;
    f.proj_hidden = proj_hidden;
    f.extra_channels = extra_channels;
    f.claw = claw;
    return f;
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"dataset", c.dataset},
            {"output", c.output},
            {"width", c.width},
            {"layers", c.layers},
            {"modes", c.modes},
            {"proj_hidden", c.proj_hidden},
            {"extra_channels", c.extra_channels},
            {"claw", c.claw},
            {"learning_rate", c.learning_rate},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"epsilon", c.epsilon},
            {"weight_decay", c.weight_decay},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"seed", c.seed},
            {"t_in", c.t_in},
            {"t_out", c.t_out}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw InvalidArgument("train config must be a JSON object");
    TrainConfig c;
    for (const auto& [key, v] : j.items()) {
        if (key == "dataset") c.dataset = v.get<std::string>();
        else if (key == "output") c.output = v.get<std::string>();
        else if (key == "width") c.width = v.get<std::size_t>();
        else if (key == "layers") c.layers = v.get<std::size_t>();
        else if (key == "modes") c.modes = v.get<std::size_t>();
        else if (key == "proj_hidden") c.proj_hidden = v.get<std::size_t>();
        else if (key == "extra_channels") c.extra_channels = v.get<std::size_t>();
        else if (key == "claw") c.claw = v.get<bool>();
        else if (key == "learning_rate") c.learning_rate = v.get<double>();
        else if (key == "beta1") c.beta1 = v.get<double>();
        else if (key == "beta2") c.beta2 = v.get<double>();
        else if (key == "epsilon") c.epsilon = v.get<double>();
        else if (key == "weight_decay") c.weight_decay = v.get<double>();
        else if (key == "epochs") c.epochs = v.get<std::size_t>();
        else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
        else if (key == "seed") c.seed = v.get<std::uint64_t>();
        else if (key == "t_in") c.t_in = v.get<std::size_t>();
        else if (key == "t_out") c.t_out = v.get<std::size_t>();
        else throw InvalidArgument("unknown train config key '" + key + "'");
    }
    c.validate();
    return c;
}

nlohmann::json to_json(const MetricsRecord& m) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : m.epochs)
        epochs.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"validation_error", e.validation_error},
                          {"validation_divergence", e.validation_divergence},
                          {"learning_rate", e.learning_rate}});
    return {{"evaluation", m.evaluation},
            {"epochs", epochs},
            {"step_error", m.step_error},
            {"step_divergence", m.step_divergence},
            {"test_error", m.test_error},
            {"test_loss", m.test_loss},
            {"divergence", m.divergence},
            {"error_increases", m.error_increases}};
}

MetricsRecord metrics_from_json(const nlohmann::json& j) {
    MetricsRecord m;
    m.evaluation = j.at("evaluation").get<std::string>();
    for (const auto& e : j.at("epochs")) {
        EpochMetrics r;
        r.epoch = e.at("epoch").get<std::size_t>();
        r.train_loss = e.at("train_loss").get<double>();
        r.validation_error = e.at("validation_error").get<double>();
        r.validation_divergence = e.at("validation_divergence").get<double>();
        r.learning_rate = e.at("learning_rate").get<double>();
        m.epochs.push_back(r);
    }
    m.step_error = j.at("step_error").get<std::vector<double>>();
    m.step_divergence = j.at("step_divergence").get<std::vector<double>>();
    m.test_error = j.at("test_error").get<double>();
    m.test_loss = j.at("test_loss").get<double>();
    m.divergence = j.at("divergence").get<double>();
    m.error_increases = j.at("error_increases").get<bool>();
    return m;
}

// ---- optimizer ------------------------------------------------------------------

double cosine_learning_rate(double base, std::size_t it, std::size_t total) {
    if (total == 0) return base;
    return 0.5 * base * (1.0 + std::cos(std::numbers::pi * double(it) / double(total)));
}

void AdamState::init(const std::vector<Parameter>& params) {
    m.assign(params.size(), {});
    v.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
        m[i].assign(params[i].values.size(), 0.0);
        v[i].assign(params[i].values.size(), 0.0);
    }
    step = 0;
}

void AdamState::update(std::vector<Parameter>& params, const std::vector<std::vector<double>>& grads, double lr,
                       const TrainConfig& c) {
    ++step;
    const double b1t = 1.0 - std::pow(c.beta1, double(step));
    const double b2t = 1.0 - std::pow(c.beta2, double(step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].values;
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double g = grads[i][k] + c.weight_decay * p[k];
            m[i][k] = c.beta1 * m[i][k] + (1.0 - c.beta1) * g;
            v[i][k] = c.beta2 * v[i][k] + (1.0 - c.beta2) * g * g;
            p[k] -= lr * (m[i][k] / b1t) / (std::sqrt(v[i][k] / b2t) + c.epsilon);
        }
    }
}

// ---- checkpoints ------------------------------------------------------------------

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    std::ostringstream out(std::ios::binary);
    out << "format=" << kCheckpointFormat << "\n";
    out << "version=" << kCheckpointVersion << "\n";
    out << "config=" << to_json(ck.config).dump() << "\n";
    out << "grid=" << join_counts(ck.grid_counts) << "\n";
    out << "epoch=" << ck.epoch << "\n";
    out << "best_validation=" << nlohmann::json(ck.best_validation).dump() << "\n";
    out << "adam_step=" << ck.adam.step << "\n";
    out << "metrics=" << to_json(ck.metrics).dump() << "\n";
    for (const auto& p : ck.params) out << "tensor=" << p.name << ":" << join_counts(p.shape) << "\n";
    out << "\n";
    const bool moments = ck.adam.m.size() == ck.params.size();
    for (std::size_t i = 0; i < ck.params.size(); ++i) {
        write_f64s(out, ck.params[i].values);
        if (moments) {
            write_f64s(out, ck.adam.m[i]);
            write_f64s(out, ck.adam.v[i]);
        } else {
            const std::vector<double> zero(ck.params[i].values.size(), 0.0);
            write_f64s(out, zero);
            write_f64s(out, zero);
        }
    }
    std::string body = out.str();
    std::ostringstream tail(std::ios::binary);
    write_u64(tail, fnv1a(std::string_view(body)));
    body += tail.str();

    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw IoError("cannot write " + tmp);
        f.write(body.data(), std::streamsize(body.size()));
        if (!f) throw IoError("short write to " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint " + path.string());
    std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (data.size() < 8) throw IoError(path.string() + ": truncated checkpoint");
    {
        std::istringstream tail(data.substr(data.size() - 8), std::ios::binary);
        const std::uint64_t stored = read_u64(tail);
        data.resize(data.size() - 8);
        if (stored != fnv1a(std::string_view(data))) throw IoError(path.string() + ": checksum mismatch");
    }

    Checkpoint ck;
    std::istringstream in(data, std::ios::binary);
    std::string line;
    std::vector<std::pair<std::string, std::vector<std::size_t>>> tensors;
    bool has_format = false;
    while (std::getline(in, line) && !line.empty()) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw IoError(path.string() + ": malformed header line");
        const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        if (key == "format") {
            if (value != kCheckpointFormat) throw IoError(path.string() + ": not a checkpoint");
            has_format = true;
        } else if (key == "version") {
            if (std::stoi(value) != kCheckpointVersion) throw IoError(path.string() + ": unsupported version " + value);
        } else if (key == "config") {
            ck.config = train_config_from_json(nlohmann::json::parse(value));
        } else if (key == "grid") {
            ck.grid_counts = split_counts(value);
        } else if (key == "epoch") {
            ck.epoch = std::stoull(value);
        } else if (key == "best_validation") {
            ck.best_validation = nlohmann::json::parse(value).get<double>();
        } else if (key == "adam_step") {
            ck.adam.step = std::stoull(value);
        } else if (key == "metrics") {
            ck.metrics = metrics_from_json(nlohmann::json::parse(value));
        } else if (key == "tensor") {
            const auto colon = value.rfind(':');
            tensors.emplace_back(value.substr(0, colon), split_counts(value.substr(colon + 1)));
        } else {
            throw IoError(path.string() + ": unknown header key '" + key + "'");
        }
    }
    if (!has_format) throw IoError(path.string() + ": missing format line");
    for (const auto& [name, shape] : tensors) {
        Parameter p{name, shape, {}};
        std::size_t n = 1;
        for (auto s : shape) n *= s;
        p.values.resize(n);
        std::vector<double> m(n), v(n);
        read_f64s(in, p.values);
        read_f64s(in, m);
        read_f64s(in, v);
        ck.params.push_back(std::move(p));
        ck.adam.m.push_back(std::move(m));
        ck.adam.v.push_back(std::move(v));
    }
    if (in.peek() != std::char_traits<char>::eof()) throw IoError(path.string() + ": trailing bytes");
    return ck;
}

void load_parameters(ClawFnoModel& model, const Checkpoint& ck) {
    auto& params = model.parameters();
    if (params.size() != ck.params.size())
        throw IoError("checkpoint holds " + std::to_string(ck.params.size()) + " tensors, model has " +
                      std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].name != ck.params[i].name || params[i].shape != ck.params[i].shape)
            throw IoError("checkpoint tensor '" + ck.params[i].name + "' does not match model tensor '" +
                          params[i].name + "'");
        params[i].values = ck.params[i].values;
    }
}

std::unique_ptr<ClawFnoModel> model_from_checkpoint(const Checkpoint& ck) {
    auto model = std::make_unique<ClawFnoModel>(ck.config.model_config(), ck.grid_counts.size(), ck.config.seed);
    load_parameters(*model, ck);
    return model;
}

// ---- evaluation -----------------------------------------------------------------

SampleSplit resolve_split(const Dataset& d) {
    const std::size_t n = d.samples.size();
    SampleSplit s;
    if (d.manifest.split) {
        s.train = d.manifest.split->train;
        s.validation = d.manifest.split->validation;
        s.test = d.manifest.split->test;
    } else {
        if (n < 2) throw InvalidArgument("need at least 2 samples to hold out a validation set");
        const std::size_t n_val = std::max<std::size_t>(1, (n + 4) / 5);
        for (std::size_t k = 0; k < n; ++k) (k < n - n_val ? s.train : s.validation).push_back(k);
    }
    for (const auto* part : {&s.train, &s.validation, &s.test})
        for (auto k : *part)
            if (k >= n) throw InvalidArgument("split refers to sample " + std::to_string(k) + " of " + std::to_string(n));
    return s;
}

std::vector<std::pair<std::size_t, std::size_t>> teacher_forcing_pairs(const std::vector<std::size_t>& samples,
                                                                      const TrainConfig& c) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (auto s : samples)
        for (std::size_t t = c.t_in; t < c.t_in + c.t_out; ++t) pairs.emplace_back(s, t);
    return pairs;
}

std::vector<Field> rollout(const Predictor& predict, const Field& sample, std::size_t t_in, std::size_t t_out) {
    std::vector<Field> history;
    for (std::size_t t = 0; t < t_in; ++t) history.push_back(frame(sample, t));
    std::vector<Field> out;
    for (std::size_t s = 0; s < t_out; ++s) {
        const std::vector<Field> window(history.end() - std::ptrdiff_t(t_in), history.end());
        Field next = predict(stack_frames(window));
        history.push_back(next);
        out.push_back(std::move(next));
    }
    return out;
}

MetricsRecord evaluate_rollout(const Predictor& predict, const std::vector<Field>& samples, std::size_t t_in,
                               std::size_t t_out) {
    MetricsRecord m;
    if (samples.empty()) return m;
    const std::size_t n = samples.size();
    std::vector<std::vector<double>> err(n), div(n);
    std::vector<std::vector<Field>> rolled(n);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t k = 0; k < n; ++k) {
        rolled[k] = rollout(predict, samples[k], t_in, t_out);
        for (std::size_t s = 0; s < t_out; ++s) {
            const Field truth = frame(samples[k], t_in + s);
            const double tn = std::sqrt(sum_squares(truth.values()));
            const double en = std::sqrt(diff_squares(rolled[k][s].values(), truth.values()));
            err[k].push_back(tn > 0.0 ? en / tn : en);
            div[k].push_back(relative_divergence(rolled[k][s]));
        }
    }
    std::vector<Field> preds, truths;
    for (std::size_t k = 0; k < n; ++k) {
        preds.push_back(stack_frames(rolled[k]));
        truths.push_back(frame_window(samples[k], t_in, t_out));
    }
    m.step_error.assign(t_out, 0.0);
    m.step_divergence.assign(t_out, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t s = 0; s < t_out; ++s) {
            m.step_error[s] += err[k][s] / double(n);
            m.step_divergence[s] += div[k][s] / double(n);
        }
        const double ratio = std::sqrt(diff_squares(preds[k].values(), truths[k].values()) /
                                       sum_squares(truths[k].values()));
        m.test_error += ratio / double(n);
    }
    m.test_loss = relative_l2_loss(preds, truths);
    for (double d : m.step_divergence) m.divergence += d / double(t_out);
    if (!std::isfinite(m.test_loss)) throw NumericalAbort("non-finite rollout error");

    double tm = 0.0, em = 0.0;
    for (std::size_t s = 0; s < t_out; ++s) {
        tm += double(s) / double(t_out);
        em += m.step_error[s] / double(t_out);
    }
    double slope = 0.0;
    for (std::size_t s = 0; s < t_out; ++s) slope += (double(s) - tm) * (m.step_error[s] - em);
    m.error_increases = slope > 0.0;
    return m;
}

// ---- training ----------------------------------------------------------------------

namespace {

Checkpoint make_checkpoint(const TrainConfig& c, const PeriodicGrid& grid, std::size_t epoch, double best,
                           const MetricsRecord& metrics, const ClawFnoModel& model, const AdamState& adam) {
    Checkpoint ck;
    ck.config = c;
    ck.grid_counts = grid.counts();
    ck.epoch = epoch;
    ck.best_validation = best;
    ck.metrics = metrics;
    ck.params = model.parameters();
    ck.adam = adam;
    return ck;
}

std::vector<Field> select(const Dataset& d, const std::vector<std::size_t>& idx) {
    std::vector<Field> out;
    for (auto k : idx) out.push_back(d.samples[k]);
    return out;
}

void require_frames(const Dataset& d, const TrainConfig& c) {
    if (d.samples.empty()) throw InvalidArgument("dataset " + d.dir.string() + " holds no samples");
    const std::size_t frames = d.samples[0].channels() / 2;
    if (c.t_in + c.t_out > frames)
        throw InvalidArgument("t_in + t_out = " + std::to_string(c.t_in + c.t_out) + " exceeds the " +
                              std::to_string(frames) + " frames per sample");
}

}  // namespace

TrainResult train(const TrainConfig& config, const TrainOptions& options) {
    config.validate();
    const Dataset data = load_dataset(config.dataset);
    require_frames(data, config);
    const SampleSplit split = resolve_split(data);
    if (split.train.empty()) throw InvalidArgument("no training samples");
    const PeriodicGrid grid = *data.samples[0].domain().periodic();
    const std::filesystem::path dir = config.output;
    std::filesystem::create_directories(dir);

    ClawFnoModel model(config.model_config(), grid.dim(), config.seed);
    AdamState adam;
    adam.init(model.parameters());
    MetricsRecord history;
    std::size_t first_epoch = 1;
    double best = std::numeric_limits<double>::infinity();

    const auto pairs_all = teacher_forcing_pairs(split.train, config);
    const std::size_t batches = (pairs_all.size() + config.batch_size - 1) / config.batch_size;
    const std::size_t total_steps = batches * config.epochs;
    const auto validation = select(data, split.validation);
    const Predictor predict = [&model](const Field& w) { return model.predict(w); };

    auto validate_into = [&](EpochMetrics& e) {
        if (validation.empty()) return;
        const MetricsRecord v = evaluate_rollout(predict, validation, config.t_in, config.t_out);
        e.validation_error = v.test_error;
        e.validation_divergence = v.divergence;
    };

    if (options.resume) {
        const Checkpoint ck = load_checkpoint(*options.resume);
        if (to_json(ck.config) != to_json(config))
            throw InvalidArgument("checkpoint " + options.resume->string() + " was written with another config");
        if (ck.grid_counts != grid.counts()) throw InvalidArgument("checkpoint grid differs from the dataset grid");
        load_parameters(model, ck);
        adam.m = ck.adam.m;
        adam.v = ck.adam.v;
        adam.step = ck.adam.step;
        history = ck.metrics;
        best = ck.best_validation;
        first_epoch = ck.epoch + 1;
    } else {
        EpochMetrics e0;
        double loss = 0.0;
        for (const auto& [s, t] : pairs_all) {
            const Field pred = model.predict(frame_window(data.samples[s], t - config.t_in, config.t_in));
            const Field truth = frame(data.samples[s], t);
            loss += diff_squares(pred.values(), truth.values()) / sum_squares(truth.values());
        }
        e0.train_loss = loss / double(pairs_all.size());
        e0.learning_rate = config.learning_rate;
        validate_into(e0);
        history.epochs.push_back(e0);
    }

    const std::size_t last_epoch = std::min(config.epochs, options.stop_after.value_or(config.epochs));
    for (std::size_t epoch = first_epoch; epoch <= last_epoch; ++epoch) {
        auto pairs = pairs_all;
        std::mt19937_64 rng(config.seed ^ (0x9e3779b97f4a7c15ULL * epoch));
        std::shuffle(pairs.begin(), pairs.end(), rng);

        EpochMetrics e;
        e.epoch = epoch;
        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < batches; ++b) {
            const std::size_t lo = b * config.batch_size, hi = std::min(pairs.size(), lo + config.batch_size);
            const std::size_t nb = hi - lo;
            std::vector<double> losses(nb);
            std::vector<std::vector<std::vector<double>>> grads(nb);
#pragma omp parallel for schedule(static)
            for (std::size_t k = 0; k < nb; ++k) {
                const auto [s, t] = pairs[lo + k];
                Tape tape;
                const auto pass = model.forward(tape, frame_window(data.samples[s], t - config.t_in, config.t_in));
                const DiffTensor loss = relative_l2(pass.output, frame(data.samples[s], t).values());
                tape.backward(loss);
                losses[k] = loss.item();
                grads[k].resize(pass.params.size());
                for (std::size_t i = 0; i < pass.params.size(); ++i) {
                    const auto g = pass.params[i].grad();
                    grads[k][i].assign(g.begin(), g.end());
                    grads[k][i].resize(pass.params[i].numel(), 0.0);
                }
            }
            std::vector<std::vector<double>> grad = std::move(grads[0]);
            double batch_loss = losses[0];
            for (std::size_t k = 1; k < nb; ++k) {
                batch_loss += losses[k];
                for (std::size_t i = 0; i < grad.size(); ++i)
                    for (std::size_t j = 0; j < grad[i].size(); ++j) grad[i][j] += grads[k][i][j];
            }
            for (auto& g : grad)
                for (auto& x : g) x /= double(nb);
            e.learning_rate = cosine_learning_rate(config.learning_rate, adam.step, total_steps);
            if (!std::isfinite(batch_loss)) {
                char msg[128];
                std::snprintf(msg, sizeof msg, "non-finite training loss at epoch %zu, batch %zu (learning rate %.3g)",
                              epoch, b, e.learning_rate);
                throw NumericalAbort(msg);
            }
            epoch_loss += batch_loss;
            adam.update(model.parameters(), grad, e.learning_rate, config);
        }
        e.train_loss = epoch_loss / double(pairs.size());
        validate_into(e);
        history.epochs.push_back(e);

        const double score = validation.empty() ? e.train_loss : e.validation_error;
        if (score < best) {
            best = score;
            save_checkpoint(make_checkpoint(config, grid, epoch, best, history, model, adam), dir / "best.ckpt");
        }
        save_checkpoint(make_checkpoint(config, grid, epoch, best, history, model, adam), dir / "last.ckpt");
    }

    std::ofstream(dir / "metrics.json") << to_json(history).dump(2) << "\n";
    return {history, dir / "best.ckpt", dir / "last.ckpt"};
}

MetricsRecord evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset,
                       const EvalOptions& options) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    const Dataset data = load_dataset(dataset);
    require_frames(data, ck.config);
    const PeriodicGrid& grid = *data.samples[0].domain().periodic();
    if (grid.counts() != ck.grid_counts && !options.super_resolution)
        throw InvalidArgument("model trained on " + join_counts(ck.grid_counts) + ", dataset is " +
                              join_counts(grid.counts()) + "; pass the super-resolution flag to evaluate anyway");
    if (grid.dim() != ck.grid_counts.size()) throw InvalidArgument("dataset dimension differs from the model's");

    std::vector<std::size_t> idx;
    if (options.subset == "all" || (options.subset == "test" && !data.manifest.split)) {
        for (std::size_t k = 0; k < data.samples.size(); ++k) idx.push_back(k);
    } else {
        const SampleSplit split = resolve_split(data);
        if (options.subset == "test") idx = split.test;
        else if (options.subset == "validation") idx = split.validation;
        else if (options.subset == "train") idx = split.train;
        else throw InvalidArgument("unknown subset '" + options.subset + "'");
        if (idx.empty()) {
            idx.resize(data.samples.size());
            std::iota(idx.begin(), idx.end(), std::size_t(0));
        }
    }

    const auto model = model_from_checkpoint(ck);
    const Predictor predict = [&model](const Field& w) { return model->predict(w); };
    MetricsRecord m = evaluate_rollout(predict, select(data, idx), ck.config.t_in, ck.config.t_out);
    m.epochs = ck.metrics.epochs;
    return m;
}

// ---- convergence study ----------------------------------------------------------------

namespace {

struct TestField {
    std::array<double, 2> (*u)(double x, double y);
    double (*div)(double x, double y);
};

TestField test_field(const std::string& name) {
    if (name == "sincos")
        return {[](double x, double y) { return std::array{std::sin(x) * std::sin(y), std::cos(x) * std::cos(y)}; },
                [](double, double) { return 0.0; }};
    if (name == "smooth")
        return {[](double x, double y) {
                    return std::array{std::sin(x + 0.3) * std::exp(std::cos(y)), std::exp(std::sin(x)) * std::cos(y)};
                },
                [](double x, double y) {
                    return std::cos(x + 0.3) * std::exp(std::cos(y)) - std::exp(std::sin(x)) * std::sin(y);
                }};
    throw InvalidArgument("unknown test field '" + name + "' (sincos, smooth)");
}

// RMS of the numerical minus the exact divergence at the given points.
double divergence_error(const DiffBackend& backend, const TestField& tf, const std::vector<double>& xy) {
    const std::size_t M = xy.size() / 2;
    Field u(backend.domain(), 2);
    for (std::size_t i = 0; i < M; ++i) {
        const auto v = tf.u(xy[2 * i], xy[2 * i + 1]);
        u.at(0, i) = v[0];
        u.at(1, i) = v[1];
    }
    const Field d = divergence(u, backend);
    double s = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
        const double e = d.at(0, i) - tf.div(xy[2 * i], xy[2 * i + 1]);
        s += e * e;
    }
    return std::sqrt(s / double(M));
}

}  // namespace

std::vector<ConvergenceRow> convergence_study(const ConvergenceConfig& config) {
    const TestField tf = test_field(config.field);
    const double L = 2.0 * std::numbers::pi;
    if (config.levels.empty()) throw InvalidArgument("no refinement levels");
    std::vector<ConvergenceRow> rows;
    for (const auto& backend : config.backends) {
        if (backend != "spectral" && backend != "fc" && backend != "meshfree")
            throw InvalidArgument("unknown backend '" + backend + "' (spectral, fc, meshfree)");
        const std::vector<std::size_t> orders =
            backend == "meshfree" ? config.orders : std::vector<std::size_t>{0};
        for (auto m : orders) {
            const ConvergenceRow* prev = nullptr;
            for (auto N : config.levels) {
                ConvergenceRow row{backend, N, 0.0, m, 0.0, std::numeric_limits<double>::quiet_NaN()};
                if (backend == "fc") {
                    const BoxGrid g({L, L}, {N, N});
                    std::vector<double> xy(2 * g.size());
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        xy[2 * i] = g.coord(i, 0);
                        xy[2 * i + 1] = g.coord(i, 1);
                    }
                    row.error = divergence_error(FcPlan(g), tf, xy);
                } else {
                    const PeriodicGrid g({L, L}, {N, N});
                    std::vector<double> xy(2 * g.size());
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        xy[2 * i] = g.coord(i, 0);
                        xy[2 * i + 1] = g.coord(i, 1);
                    }
                    if (backend == "spectral") {
                        row.error = divergence_error(SpectralPlan(g), tf, xy);
                    } else {
                        auto cloud = std::make_shared<const PointCloud>(cloud_from_grid(g, config.periodic_cloud));
                        const auto w = generate_weights(cloud, MeshfreeConfig{m, config.radius_ratio, true});
                        row.delta_ratio = w->delta() / cloud->fill_distance();
                        row.error = divergence_error(*w, tf, xy);
                    }
                }
                if (prev && prev->error > 0.0 && row.error > 0.0)
                    row.order = std::log(prev->error / row.error) / std::log(double(N) / double(prev->n));
                rows.push_back(row);
                prev = &rows.back();
            }
        }
    }
    return rows;
}

void write_convergence_csv(const std::vector<ConvergenceRow>& rows, std::ostream& out) {
    out << "backend,N,delta_ratio,m,error,order\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%zu,%.6g,%zu,%.6e,", r.backend.c_str(), r.n, r.delta_ratio, r.m, r.error);
        out << buf;
        if (std::isfinite(r.order)) {
            std::snprintf(buf, sizeof buf, "%.4f", r.order);
            out << buf;
        }
        out << "\n";
    }
}

// ---- reports ------------------------------------------------------------------------

void write_rollout_csv(const MetricsRecord& m, std::ostream& out) {
    out << "step,error,divergence\n";
    char buf[96];
    for (std::size_t s = 0; s < m.step_error.size(); ++s) {
        std::snprintf(buf, sizeof buf, "%zu,%.10e,%.10e\n", s + 1, m.step_error[s],
                      s < m.step_divergence.size() ? m.step_divergence[s] : 0.0);
        out << buf;
    }
}

void write_epochs_csv(const MetricsRecord& m, std::ostream& out) {
    out << "epoch,train_loss,validation_error,validation_divergence,learning_rate\n";
    char buf[160];
    for (const auto& e : m.epochs) {
        std::snprintf(buf, sizeof buf, "%zu,%.10e,%.10e,%.10e,%.10e\n", e.epoch, e.train_loss, e.validation_error,
                      e.validation_divergence, e.learning_rate);
        out << buf;
    }
}

void write_pgm(const Field& field, std::size_t channel, double lo, double hi, const std::filesystem::path& path) {
    const auto* g = field.domain().periodic();
    if (!g || g->dim() != 2) throw InvalidArgument("images need a field on a 2D periodic grid");
    const std::size_t rows = g->count(0), cols = g->count(1);
    const auto v = field.channel(channel);
    std::string pixels(rows * cols, '\0');
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double t = hi > lo ? (v[i] - lo) / (hi - lo) : 0.0;
        pixels[i] = char(std::lround(255.0 * std::clamp(t, 0.0, 1.0)));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "P5\n" << cols << " " << rows << "\n255\n";
    out.write(pixels.data(), std::streamsize(pixels.size()));
}

std::vector<std::filesystem::path> write_triptych(const Field& prediction, const Field& truth, std::size_t channel,
                                                  const std::filesystem::path& dir, const std::string& stem) {
    if (!(prediction.domain() == truth.domain()) || prediction.channels() != truth.channels())
        throw DomainMismatch("prediction and truth differ in shape");
    std::filesystem::create_directories(dir);
    const auto p = prediction.channel(channel), t = truth.channel(channel);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo, emax = 0.0;
    Field err(truth.domain(), 1);
    for (std::size_t i = 0; i < p.size(); ++i) {
        lo = std::min({lo, p[i], t[i]});
        hi = std::max({hi, p[i], t[i]});
        err.at(0, i) = std::abs(p[i] - t[i]);
        emax = std::max(emax, err.at(0, i));
    }
    const std::vector<std::filesystem::path> paths = {dir / (stem + "_prediction.pgm"), dir / (stem + "_truth.pgm"),
                                                      dir / (stem + "_error.pgm")};
    write_pgm(prediction, channel, lo, hi, paths[0]);
    write_pgm(truth, channel, lo, hi, paths[1]);
    write_pgm(err, 0, 0.0, emax, paths[2]);
    return paths;
}

void report(const MetricsRecord& m, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "metrics.json") << to_json(m).dump(2) << "\n";
    std::ofstream rollout_csv(dir / "rollout.csv");
    write_rollout_csv(m, rollout_csv);
    std::ofstream epochs_csv(dir / "epochs.csv");
    write_epochs_csv(m, epochs_csv);
}

}  // namespace clawno
