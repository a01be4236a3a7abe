// ============================================================================
// Command-line front end: simulate ambient records, corrupt them, identify
// source parameters, run Monte Carlo studies, tabulate closed-form curves,
// and recommend window/method settings from measured data.
//
// Exit codes: 0 success, 1 configuration or scenario errors, 2 data errors,
// 3 estimation failures.
// ============================================================================
#include <fstream>
#include <functional>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "tepid/harness.hpp"

namespace {

tepid::MeasurementSeries read_series(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw tepid::DataError("cannot open series file '" + path + "'");
    return tepid::read_series_csv(is);
}

void with_output(const std::string& path,
                 const std::function<void(std::ostream&)>& emit) {
    if (path.empty()) {
        emit(std::cout);
        return;
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw tepid::ConfigError("cannot open output file '" + path + "'");
    emit(os);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Thevenin equivalent parameter identification toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::string in_path;
    std::string out_path;
    std::string out_dir;
    std::string method_name;
    std::string regressor_name;
    std::string sweep_name;

    CLI::App* sim = app.add_subcommand(
        "simulate", "Write one clean ambient record (the series of trial 0)");
    sim->add_option("--config", config_path, "experiment config file")->required();
    sim->add_option("--out", out_path, "output series CSV (default stdout)");

    CLI::App* cor = app.add_subcommand(
        "corrupt", "Apply the config's corruption block to a series");
    cor->add_option("--config", config_path, "experiment config file")->required();
    cor->add_option("--in", in_path, "input series CSV")->required();
    cor->add_option("--out", out_path, "output series CSV (default stdout)");

    CLI::App* ident = app.add_subcommand(
        "identify", "Estimate source parameters from a measurement record");
    ident->add_option("--config", config_path, "experiment config file")->required();
    ident->add_option("--in", in_path, "input series CSV")->required();
    ident->add_option("--method", method_name,
                      "baseline|mean|variance (default: first config method)");
    ident->add_option("--regressor", regressor_name,
                      "ols|ridge|tls (default: first config regressor)");
    ident->add_option("--out", out_path, "output CSV (default stdout)");

    CLI::App* mc = app.add_subcommand(
        "montecarlo", "Run the config's Monte Carlo study and write CSV reports");
    mc->add_option("--config", config_path, "experiment config file")->required();
    mc->add_option("--out-dir", out_dir, "directory for trials.csv and summary.csv")
        ->required();

    CLI::App* thy =
        app.add_subcommand("theory", "Tabulate a closed-form curve as CSV");
    thy->add_option("--config", config_path, "experiment config file")->required();
    thy->add_option("--sweep", sweep_name, "snr|deviation|kappa")->required();
    thy->add_option("--out", out_path, "output CSV (default stdout)");

    CLI::App* rec = app.add_subcommand(
        "recommend", "Recommend a window and method from a measurement record");
    rec->add_option("--in", in_path, "input series CSV")->required();
    rec->add_option("--out", out_path, "output CSV (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (sim->parsed()) {
            const tepid::ExperimentConfig cfg = tepid::load_experiment_config(config_path);
            const std::uint64_t trial_seed = tepid::mix_seed(cfg.base_seed, 0);
            const tepid::MeasurementSeries series =
                tepid::simulate_ambient(cfg.tep, cfg.load, cfg.duration, cfg.ts,
                                        tepid::mix_seed(trial_seed, 1));
            with_output(out_path,
                        [&](std::ostream& os) { tepid::write_series_csv(series, os); });
        } else if (cor->parsed()) {
            const tepid::ExperimentConfig cfg = tepid::load_experiment_config(config_path);
            const std::uint64_t trial_seed = tepid::mix_seed(cfg.base_seed, 0);
            const tepid::MeasurementSeries series =
                tepid::corrupt(read_series(in_path), cfg.corruption,
                               tepid::mix_seed(trial_seed, 2));
            with_output(out_path,
                        [&](std::ostream& os) { tepid::write_series_csv(series, os); });
        } else if (ident->parsed()) {
            const tepid::ExperimentConfig cfg = tepid::load_experiment_config(config_path);
            const auto pairs = tepid::estimator_pairs(cfg);
            tepid::PipelineConfig pc;
            pc.method = method_name.empty() ? pairs.front().first
                                            : tepid::method_from_string(method_name);
            pc.regress.regressor = regressor_name.empty()
                                       ? pairs.front().second
                                       : tepid::regressor_from_string(regressor_name);
            pc.window = cfg.window;
            pc.regress.ridge_lambda = cfg.ridge_lambda;
            pc.screen_outliers = cfg.screen_outliers;
            pc.mad_factor = cfg.mad_factor;
            const tepid::EstimationResult result =
                tepid::identify_pipeline(read_series(in_path), pc);
            with_output(out_path, [&](std::ostream& os) {
                tepid::write_estimation_csv(result, os);
            });
        } else if (mc->parsed()) {
            const tepid::ExperimentConfig cfg = tepid::load_experiment_config(config_path);
            tepid::run_montecarlo(cfg, out_dir);
            if (cfg.track.enabled)
                std::cout << "wrote " << out_dir << "/tracking.csv over " << cfg.trials
                          << " trial(s)\n";
            else
                std::cout << "wrote " << out_dir << "/trials.csv and " << out_dir
                          << "/summary.csv over " << cfg.trials << " trial(s)\n";
        } else if (thy->parsed()) {
            const tepid::ExperimentConfig cfg = tepid::load_experiment_config(config_path);
            const tepid::SweepKind kind = tepid::sweep_from_string(sweep_name);
            with_output(out_path, [&](std::ostream& os) {
                tepid::write_theory_sweep(cfg, kind, os);
            });
        } else if (rec->parsed()) {
            const tepid::RecommendReport rep =
                tepid::recommend_from_series(read_series(in_path));
            with_output(out_path, [&](std::ostream& os) {
                tepid::write_recommend_csv(rep, os);
            });
        }
    } catch (const tepid::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return tepid::exit_code_for(e);
    }
    return 0;
}
