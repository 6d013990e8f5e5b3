// discor_lab: run, sweep, verify and compare fitted Q-iteration experiments.

#include "discor/discor.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

namespace fs = std::filesystem;
using namespace discor;

namespace {

enum Exit { ok = 0, config_error = 1, assertion_failure = 2, runtime_failure = 3 };

struct Overrides {
    std::string config_path;
    std::map<std::string, std::optional<std::string>> values;

    void attach(CLI::App* cmd, bool with_experiment_keys) {
        cmd->add_option("--config", config_path, "key = value configuration file")->check(CLI::ExistingFile);
        for (const auto& [key, help] : config_keys()) {
            const bool experiment = std::any_of(experiment_keys().begin(), experiment_keys().end(),
                                                [&](const auto& e) { return key == e.first; });
            if (experiment && !with_experiment_keys && key != "out") continue;
            cmd->add_option("--" + key, values[key], help);
        }
    }

    ExperimentConfig resolve(ExperimentConfig cfg) const {
        if (!config_path.empty()) apply_key_values(cfg, read_key_values(config_path));
        KeyValues cli;
        for (const auto& [k, v] : values)
            if (v) cli.set(k, *v, "command line");
        apply_key_values(cfg, cli);
        return cfg;
    }
};

std::string output_dir(const ExperimentConfig& cfg) { return cfg.out_dir.empty() ? default_output_root() : cfg.out_dir; }

int print_report(const VerifyReport& rep) {
    for (const auto& l : rep.lines) std::cout << l << '\n';
    std::cout << (rep.pass ? "PASS" : "FAIL") << '\n';
    return rep.pass ? ok : assertion_failure;
}

int cmd_run(const Overrides& o) {
    const ExperimentConfig cfg = o.resolve({});
    const RunOutput out = run_to_files(cfg.train, output_dir(cfg));
    std::cout << out.csv_path << '\n' << out.manifest_path << '\n';
    if (!out.records.empty()) {
        const RunRecord& r = out.records.back();
        std::cout << "iterations " << out.records.size() << ", final value error " << format_double(r.value_error)
                  << ", normalized return " << format_double(r.norm_return) << '\n';
    }
    return ok;
}

int cmd_sweep(const Overrides& o) {
    const ExperimentConfig cfg = o.resolve({});
    const std::string dir = output_dir(cfg);
    fs::create_directories(dir);
    const auto rows = run_sweep(cfg, dir, &std::cerr);
    const std::string path = (fs::path(dir) / "summary.csv").string();
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot write '" + path + "'");
    write_summary(os, rows);
    std::cout << path << '\n';
    long failed = 0;
    for (const auto& r : rows)
        if (r.seed != "median" && r.status != "ok") ++failed;
    if (failed) std::cerr << failed << " run(s) failed; see summary.csv\n";
    return failed ? runtime_failure : ok;
}

int cmd_verify(const std::string& check, const Overrides& o, int trials, bool corrupt) {
    int code = ok;
    auto merge = [&](int c) { code = std::max(code, c); };
    if (check == "lemma" || check == "all") {
        const ExperimentConfig cfg = o.resolve({});
        merge(print_report(verify_lemma_suite(trials, cfg.train.seed)));
    }
    if (check == "thm3" || check == "all") {
        ExperimentConfig base;
        base.train.env = "grid16onehotsparse";
        base.train.scheme = Scheme::discor;
        base.train.approx = ApproxKind::tabular;
        base.train.mode = Mode::exact;
        base.train.iterations = 300;
        base.train.discount = 0.95;
        base.train.delta_rate = 1.0;
        base.train.eval_episodes = 0;
        merge(print_report(verify_thm3(o.resolve(base).train, corrupt)));
    }
    if (check == "eq4" || check == "all") {
        ExperimentConfig base;
        base.train.env = "random:S=20,A=3";
        base.train.scheme = Scheme::uniform;
        base.train.approx = ApproxKind::linear;
        base.train.mode = Mode::exact;
        base.train.iterations = 50;
        base.train.delta_rate = 1.0;
        base.train.eval_episodes = 0;
        merge(print_report(verify_delta_expansion(o.resolve(base).train)));
    }
    if (check == "complexity" || check == "all") {
        const ExperimentConfig cfg = o.resolve({});
        ComplexitySweep sweep;
        sweep.base = cfg.train;
        sweep.base.eval_episodes = 0;
        std::vector<ComplexityRow> rows;
        const VerifyReport rep = verify_complexity(sweep, &rows);
        const std::string dir = output_dir(cfg);
        fs::create_directories(dir);
        const std::string path = (fs::path(dir) / "complexity.csv").string();
        std::ofstream os(path);
        os << "depth,scheme,seed,iterations,converged,budget,threshold,feature_residual,final_sup_error\n";
        for (const auto& r : rows)
            os << r.depth << ',' << scheme_name(r.scheme) << ',' << r.seed << ',' << r.iterations << ','
               << (r.converged ? 1 : 0) << ',' << r.budget << ',' << format_double(r.threshold) << ','
               << format_double(r.feature_residual) << ',' << format_double(r.final_sup_error) << '\n';
        std::cout << path << '\n';
        merge(print_report(rep));
    }
    return code;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& metric, const std::string& baseline) {
    std::vector<std::string> files;
    for (const auto& in : inputs) {
        if (fs::is_directory(in)) {
            for (const auto& e : fs::directory_iterator(in))
                if (e.path().extension() == ".csv" && e.path().filename() != "summary.csv" &&
                    e.path().filename() != "complexity.csv")
                    files.push_back(e.path().string());
        } else {
            files.push_back(in);
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ConfigError("report: no run CSVs found");

    std::map<std::pair<std::string, std::string>, std::vector<double>> groups;
    std::cout << "file,env,scheme,seed,iters,final_" << metric << '\n';
    for (const auto& f : files) {
        std::ifstream in(f);
        if (!in) throw ConfigError("report: cannot open '" + f + "'");
        const CsvTable t = read_csv(in, f);
        const auto meta = parse_meta(t.meta);
        const Index col = t.column(metric);
        const double last = t.rows.empty() ? std::numeric_limits<double>::quiet_NaN() : t.rows.back()[std::size_t(col)];
        const std::string env = meta.count("env") ? meta.at("env") : "?";
        const std::string scheme = meta.count("scheme") ? meta.at("scheme") : "?";
        std::cout << f << ',' << env << ',' << scheme << ',' << (meta.count("seed") ? meta.at("seed") : "?") << ','
                  << t.rows.size() << ',' << format_double(last) << '\n';
        groups[{env, scheme}].push_back(last);
    }
    std::cout << "\nenv,scheme,runs,median_final_" << metric << (baseline.empty() ? "" : ",minus_" + baseline) << '\n';
    for (const auto& [key, v] : groups) {
        std::cout << key.first << ',' << key.second << ',' << v.size() << ',' << format_double(median(v));
        if (!baseline.empty()) {
            const auto b = groups.find({key.first, baseline});
            std::cout << ',' << (b == groups.end() ? std::string("n/a") : format_double(median(v) - median(b->second)));
        }
        std::cout << '\n';
    }
    return ok;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"fitted Q-iteration laboratory with error-aware sampling distributions", "discor_lab"};
    app.set_version_flag("--version", std::string(lab_version));
    app.require_subcommand(1);

    Overrides run_o, sweep_o, verify_o;
    auto* run = app.add_subcommand("run", "train one configuration and write its CSV and manifest");
    run_o.attach(run, false);
    auto* sweep = app.add_subcommand("sweep", "train every env x scheme x seed and write summary.csv");
    sweep_o.attach(sweep, true);

    auto* verify = app.add_subcommand("verify", "check error bounds on configured runs");
    std::string check = "all";
    int trials = 1000;
    bool corrupt = false;
    verify->add_option("check", check, "lemma | thm3 | eq4 | complexity | all")
        ->check(CLI::IsMember({"lemma", "thm3", "eq4", "complexity", "all"}));
    verify->add_option("--trials", trials, "random trials for the one-step suite")->check(CLI::PositiveNumber);
    verify->add_flag("--corrupt-delta", corrupt, "negate the error model before checking (fault injection)");
    verify_o.attach(verify, false);

    auto* report = app.add_subcommand("report", "summarize run CSVs");
    std::vector<std::string> inputs;
    std::string metric = "norm_return", baseline;
    report->add_option("inputs", inputs, "CSV files or directories")->required();
    report->add_option("--metric", metric, "column to summarize");
    report->add_option("--baseline", baseline, "scheme to subtract from each median");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return config_error;
    }

    try {
        if (*run) return cmd_run(run_o);
        if (*sweep) return cmd_sweep(sweep_o);
        if (*verify) return cmd_verify(check, verify_o, trials, corrupt);
        if (*report) return cmd_report(inputs, metric, baseline);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return config_error;
    } catch (const InvalidArgument& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return config_error;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << '\n';
        return runtime_failure;
    }
    return ok;
}
