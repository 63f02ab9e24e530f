// Command-line front end: gen-data, train, eval, conv-study, report.
// Exit codes: 0 success, 2 invalid input, 3 numerical abort.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <omp.h>

#include "CLI11.hpp"
#include "clawno/datagen.hpp"
#include "clawno/field_io.hpp"
#include "clawno/harness.hpp"

using namespace clawno;

namespace {

constexpr int kInvalid = 2;
constexpr int kAbort = 3;

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    return nlohmann::json::parse(in);
}

void apply_threads() {
    if (const char* env = std::getenv("CLAWNO_THREADS")) {
        const int n = std::atoi(env);
        if (n < 1) throw InvalidArgument(std::string("CLAWNO_THREADS must be a positive integer, got '") + env + "'");
        omp_set_num_threads(n);
    }
}

void print_rollout(const MetricsRecord& m) {
    std::printf("evaluation: %s\n", m.evaluation.c_str());
    for (std::size_t s = 0; s < m.step_error.size(); ++s)
        std::printf("  step %2zu  error %.4e  divergence %.3e\n", s + 1, m.step_error[s], m.step_divergence[s]);
    std::printf("test error %.4e  test loss %.4e  divergence %.3e%s\n", m.test_error, m.test_loss, m.divergence,
                m.error_increases ? "  (error grows with the rollout step)" : "");
}

// Overrides collected from flags and applied on top of a JSON config.
struct Overrides {
    nlohmann::json values = nlohmann::json::object();

    template <class T>
    void add(CLI::App* app, const std::string& key, const std::string& help) {
        app->add_option_function<T>("--" + dash(key), [this, key](const T& v) { values[key] = v; }, help);
    }

    static std::string dash(std::string s) {
        for (auto& c : s)
            if (c == '_') c = '-';
        return s;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"clawno: divergence-free neural operators"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "simulate 2D Navier-Stokes samples into a dataset directory");
    std::string gen_config, gen_out;
    std::size_t gen_samples = 10;
    std::vector<std::size_t> gen_split;
    Overrides gen_over;
    gen->add_option("--config", gen_config, "JSON file with NS config keys");
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--samples", gen_samples, "number of samples");
    gen->add_option("--split", gen_split, "train,validation,test counts in sample order")->expected(3)->delimiter(',');
    gen_over.add<std::size_t>(gen, "resolution", "fine grid points per axis");
    gen_over.add<double>(gen, "viscosity", "kinematic viscosity");
    gen_over.add<double>(gen, "dt", "time step");
    gen_over.add<double>(gen, "record_interval", "time between stored frames");
    gen_over.add<std::size_t>(gen, "records", "stored frames per sample");
    gen_over.add<std::size_t>(gen, "pool", "mean-pooling factor");
    gen_over.add<std::uint64_t>(gen, "seed", "base seed");
    gen_over.add<bool>(gen, "forcing", "enable the forcing term");

    // train
    auto* tr = app.add_subcommand("train", "train a model on a dataset");
    std::string tr_config, tr_resume;
    std::size_t tr_stop = 0;
    Overrides tr_over;
    tr->add_option("--config", tr_config, "JSON file with train config keys");
    tr->add_option("--resume", tr_resume, "last.ckpt of an earlier run with the same config");
    tr->add_option("--stop-after", tr_stop, "stop once this many epochs are complete");
    tr_over.add<std::string>(tr, "dataset", "dataset directory");
    tr_over.add<std::string>(tr, "output", "run directory");
    tr_over.add<std::size_t>(tr, "width", "latent channels");
    tr_over.add<std::size_t>(tr, "layers", "Fourier layers");
    tr_over.add<std::size_t>(tr, "modes", "retained modes per axis");
    tr_over.add<std::size_t>(tr, "proj_hidden", "projection hidden width");
    tr_over.add<std::size_t>(tr, "extra_channels", "outputs that bypass the claw layer");
    tr_over.add<bool>(tr, "claw", "use the divergence layer");
    tr_over.add<double>(tr, "learning_rate", "initial step size");
    tr_over.add<double>(tr, "beta1", "first-moment decay");
    tr_over.add<double>(tr, "beta2", "second-moment decay");
    tr_over.add<double>(tr, "epsilon", "Adam epsilon");
    tr_over.add<double>(tr, "weight_decay", "L2 penalty");
    tr_over.add<std::size_t>(tr, "epochs", "epochs");
    tr_over.add<std::size_t>(tr, "batch_size", "pairs per step");
    tr_over.add<std::uint64_t>(tr, "seed", "initialization and shuffle seed");
    tr_over.add<std::size_t>(tr, "t_in", "input frames");
    tr_over.add<std::size_t>(tr, "t_out", "rollout length");

    // eval
    auto* ev = app.add_subcommand("eval", "autoregressive rollout of a checkpoint on a dataset");
    std::string ev_ckpt, ev_data, ev_out, ev_subset = "test";
    bool ev_super = false;
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
    ev->add_option("--dataset", ev_data, "dataset directory")->required();
    ev->add_option("--out", ev_out, "directory for metrics.json and CSV reports");
    ev->add_option("--subset", ev_subset, "test, validation, train or all");
    ev->add_flag("--super-resolution", ev_super, "allow a grid other than the training grid");

    // conv-study
    auto* cs = app.add_subcommand("conv-study", "divergence error of the differentiation backends under refinement");
    ConvergenceConfig cc;
    std::string cs_out;
    cs->add_option("--backends", cc.backends, "spectral, fc, meshfree")->delimiter(',');
    cs->add_option("--levels", cc.levels, "grid points per axis")->delimiter(',');
    cs->add_option("--orders", cc.orders, "meshfree polynomial orders")->delimiter(',');
    cs->add_option("--field", cc.field, "sincos or smooth");
    cs->add_flag("--periodic-cloud", cc.periodic_cloud, "wrap the meshfree cloud around the torus");
    cs->add_option("--radius-ratio", cc.radius_ratio, "meshfree delta / fill distance, 0 for the default");
    cs->add_option("--out", cs_out, "CSV file (default: stdout)");

    // report
    auto* rp = app.add_subcommand("report", "CSV files and heatmaps from metrics and a checkpoint");
    std::string rp_metrics, rp_out, rp_ckpt, rp_data;
    std::size_t rp_sample = 0, rp_step = 0, rp_channel = 0;
    rp->add_option("--metrics", rp_metrics, "metrics.json")->required();
    rp->add_option("--out", rp_out, "output directory")->required();
    rp->add_option("--checkpoint", rp_ckpt, "checkpoint for the heatmap triptych");
    rp->add_option("--dataset", rp_data, "dataset for the heatmap triptych");
    rp->add_option("--sample", rp_sample, "sample index");
    rp->add_option("--step", rp_step, "rollout step, from 0");
    rp->add_option("--channel", rp_channel, "velocity component");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kInvalid;
    }

    try {
        apply_threads();
        if (*gen) {
            nlohmann::json j = gen_config.empty() ? to_json(NsConfig{}) : read_json(gen_config);
            j.update(gen_over.values);
            const NsConfig c = ns_config_from_json(j);
            if (auto w = stability_warning(c)) std::fprintf(stderr, "warning: %s\n", w->c_str());
            std::optional<DatasetSplit> split;
            if (!gen_split.empty()) {
                if (gen_split[0] + gen_split[1] + gen_split[2] != gen_samples)
                    throw InvalidArgument("split counts must add up to --samples");
                DatasetSplit s;
                std::size_t k = 0;
                for (std::size_t i = 0; i < gen_split[0]; ++i) s.train.push_back(k++);
                for (std::size_t i = 0; i < gen_split[1]; ++i) s.validation.push_back(k++);
                for (std::size_t i = 0; i < gen_split[2]; ++i) s.test.push_back(k++);
                split = s;
            }
            const auto m = generate_dataset(c, gen_samples, gen_out, split);
            double div = 0, drift = 0;
            for (const auto& s : m.samples) {
                div = std::max(div, s.fine_divergence);
                drift = std::max(drift, s.mean_drift);
            }
            std::printf("%zu samples in %s: %zu frames at %zu^2, fine divergence <= %.2e, mean drift <= %.2e\n",
                        m.samples.size(), gen_out.c_str(), m.frames(), c.stored_resolution(), div, drift);
        } else if (*tr) {
            nlohmann::json j = tr_config.empty() ? to_json(TrainConfig{}) : read_json(tr_config);
            j.update(tr_over.values);
            const TrainConfig c = train_config_from_json(j);
            TrainOptions opt;
            if (!tr_resume.empty()) opt.resume = tr_resume;
            if (tr_stop > 0) opt.stop_after = tr_stop;
            const TrainResult r = train(c, opt);
            for (const auto& e : r.metrics.epochs)
                std::printf("epoch %3zu  loss %.4e  validation %.4e  divergence %.2e  lr %.2e\n", e.epoch,
                            e.train_loss, e.validation_error, e.validation_divergence, e.learning_rate);
            std::printf("best: %s\n", r.best.string().c_str());
        } else if (*ev) {
            const MetricsRecord m = evaluate(ev_ckpt, ev_data, {.super_resolution = ev_super, .subset = ev_subset});
            print_rollout(m);
            if (!ev_out.empty()) report(m, ev_out);
        } else if (*cs) {
            const auto rows = convergence_study(cc);
            if (cs_out.empty()) {
                write_convergence_csv(rows, std::cout);
            } else {
                std::ofstream out(cs_out);
                if (!out) throw IoError("cannot write " + cs_out);
                write_convergence_csv(rows, out);
            }
        } else if (*rp) {
            const MetricsRecord m = metrics_from_json(read_json(rp_metrics));
            report(m, rp_out);
            if (!rp_ckpt.empty() && !rp_data.empty()) {
                const Checkpoint ck = load_checkpoint(rp_ckpt);
                const auto model = model_from_checkpoint(ck);
                const Dataset d = load_dataset(rp_data);
                if (rp_sample >= d.samples.size()) throw InvalidArgument("sample index out of range");
                if (rp_step >= ck.config.t_out) throw InvalidArgument("step beyond the rollout length");
                const auto pred = rollout([&](const Field& w) { return model->predict(w); }, d.samples[rp_sample],
                                          ck.config.t_in, rp_step + 1);
                const Field truth = frame(d.samples[rp_sample], ck.config.t_in + rp_step);
                for (const auto& p : write_triptych(pred.back(), truth, rp_channel, rp_out,
                                                    "sample" + std::to_string(rp_sample) + "_step" +
                                                        std::to_string(rp_step + 1)))
                    std::printf("%s\n", p.string().c_str());
            }
        }
    } catch (const NumericalAbort& e) {
        std::fprintf(stderr, "numerical abort: %s\n", e.what());
        return kAbort;
    } catch (const nlohmann::json::exception& e) {
        std::fprintf(stderr, "invalid JSON: %s\n", e.what());
        return kInvalid;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kInvalid;
    }
    return 0;
}
