#pragma once

#include "discor/complexity.hpp"
#include "discor/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <mutex>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace discor {

inline constexpr const char* lab_version = "1.0.0";

/// Bad configuration; what() carries "origin:line: field 'key': ..." when known.
class ConfigError : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s, char sep = ';') {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep))
        if (!trim(item).empty()) out.push_back(trim(item));
    return out;
}

// ---------------------------------------------------------------------------
// key = value files

struct KeyValues {
    struct Entry {
        std::string value;
        std::string origin;
        int line = 0;
    };
    std::map<std::string, Entry> entries;

    void set(const std::string& key, const std::string& value, const std::string& origin = "override", int line = 0) {
        entries[key] = {value, origin, line};
    }
};

/// Parses `key = value` lines. `[section]` headers group keys visually and
/// do not namespace them; lines starting with '#' or ';' are comments.
inline KeyValues parse_key_values(std::istream& is, const std::string& origin) {
    KeyValues kv;
    std::string raw;
    int line = 0;
    while (std::getline(is, raw)) {
        ++line;
        const std::string text = trim(raw);
        if (text.empty() || text[0] == '#' || text[0] == ';') continue;
        if (text.front() == '[') {
            if (text.back() != ']' || text.size() < 3)
                throw ConfigError(origin + ":" + std::to_string(line) + ": malformed section header '" + text + "'");
            continue;
        }
        const auto eq = text.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(line) + ": expected key = value, got '" + text + "'");
        const std::string key = trim(text.substr(0, eq));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line) + ": empty key");
        if (kv.entries.count(key))
            throw ConfigError(origin + ":" + std::to_string(line) + ": field '" + key + "' given twice (first on line " +
                              std::to_string(kv.entries[key].line) + ")");
        kv.set(key, trim(text.substr(eq + 1)), origin, line);
    }
    return kv;
}

inline KeyValues read_key_values(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    return parse_key_values(in, path);
}

/// Everything a run or sweep needs.
struct ExperimentConfig {
    TrainConfig train;
    std::string out_dir;
    std::vector<std::string> envs;
    std::vector<std::string> schemes;
    std::vector<std::uint64_t> seeds;
    int jobs = 1;
};

namespace detail {

inline double parse_real(const std::string& v) {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    return x;
}

inline long parse_int(const std::string& v) {
    std::size_t used = 0;
    const long x = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    return x;
}

inline std::uint64_t parse_seed(const std::string& v) {
    std::size_t used = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("seed must be non-negative");
    const unsigned long long x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    return x;
}

inline std::string join_widths(const std::vector<Index>& w) {
    std::string s;
    for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + std::to_string(w[i]);
    return s;
}

struct Field {
    const char* key;
    const char* help;
    std::function<void(TrainConfig&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

inline const std::vector<Field>& train_fields() {
    using C = TrainConfig;
    static const std::vector<Field> fields = {
        {"env", "environment id", [](C& c, const std::string& v) { c.env = v; }, [](const C& c) { return c.env; }},
        {"scheme", "uniform|onpolicy|replay|per|discor|discor-oracle|optimal-p",
         [](C& c, const std::string& v) { c.scheme = parse_scheme(v); },
         [](const C& c) { return std::string(scheme_name(c.scheme)); }},
        {"approx", "tabular|linear|mlp", [](C& c, const std::string& v) { c.approx = parse_approx(v); },
         [](const C& c) { return std::string(approx_name(c.approx)); }},
        {"hidden", "mlp hidden widths, comma separated (empty for none)",
         [](C& c, const std::string& v) {
             c.hidden.clear();
             for (const auto& w : split_list(v, ',')) c.hidden.push_back(parse_int(w));
         },
         [](const C& c) { return join_widths(c.hidden); }},
        {"mode", "exact|sampled|bandit", [](C& c, const std::string& v) { c.mode = parse_mode(v); },
         [](const C& c) { return std::string(mode_name(c.mode)); }},
        {"iters", "iterations N", [](C& c, const std::string& v) { c.iterations = parse_int(v); },
         [](const C& c) { return std::to_string(c.iterations); }},
        {"samples", "environment steps per iteration M",
         [](C& c, const std::string& v) { c.samples_per_iter = parse_int(v); },
         [](const C& c) { return std::to_string(c.samples_per_iter); }},
        {"batch", "batch size", [](C& c, const std::string& v) { c.batch_size = parse_int(v); },
         [](const C& c) { return std::to_string(c.batch_size); }},
        {"grad_steps", "gradient steps G per projection (mlp)",
         [](C& c, const std::string& v) { c.grad_steps = int(parse_int(v)); },
         [](const C& c) { return std::to_string(c.grad_steps); }},
        {"lr", "mlp step size", [](C& c, const std::string& v) { c.step_size = parse_real(v); },
         [](const C& c) { return format_double(c.step_size); }},
        {"ridge", "ridge damping for linear projections", [](C& c, const std::string& v) { c.ridge = parse_real(v); },
         [](const C& c) { return format_double(c.ridge); }},
        {"init_scale", "std of random initial tabular/linear values",
         [](C& c, const std::string& v) { c.init_scale = parse_real(v); },
         [](const C& c) { return format_double(c.init_scale); }},
        {"exploration", "boltzmann|uniform", [](C& c, const std::string& v) { c.exploration = v; },
         [](const C& c) { return c.exploration; }},
        {"explore_temp", "initial Boltzmann temperature",
         [](C& c, const std::string& v) { c.explore_temp = parse_real(v); },
         [](const C& c) { return format_double(c.explore_temp); }},
        {"explore_decay", "per-iteration temperature decay",
         [](C& c, const std::string& v) { c.explore_decay = parse_real(v); },
         [](const C& c) { return format_double(c.explore_decay); }},
        {"explore_floor", "temperature floor", [](C& c, const std::string& v) { c.explore_floor = parse_real(v); },
         [](const C& c) { return format_double(c.explore_floor); }},
        {"seed", "random seed", [](C& c, const std::string& v) { c.seed = parse_seed(v); },
         [](const C& c) { return std::to_string(c.seed); }},
        {"discount", "discount override (empty keeps the environment default)",
         [](C& c, const std::string& v) {
             if (v.empty()) c.discount.reset();
             else c.discount = parse_real(v);
         },
         [](const C& c) { return c.discount ? format_double(*c.discount) : std::string(); }},
        {"capacity", "replay capacity, 0 = unbounded", [](C& c, const std::string& v) { c.capacity = parse_int(v); },
         [](const C& c) { return std::to_string(c.capacity); }},
        {"tau0", "initial DisCor temperature", [](C& c, const std::string& v) { c.tau0 = parse_real(v); },
         [](const C& c) { return format_double(c.tau0); }},
        {"tau_rate", "temperature moving-average rate", [](C& c, const std::string& v) { c.tau_rate = parse_real(v); },
         [](const C& c) { return format_double(c.tau_rate); }},
        {"tau_floor", "temperature floor", [](C& c, const std::string& v) { c.tau_floor = parse_real(v); },
         [](const C& c) { return format_double(c.tau_floor); }},
        {"delta_model", "tabular|mlp", [](C& c, const std::string& v) { c.delta_model = parse_approx(v); },
         [](const C& c) { return std::string(approx_name(c.delta_model)); }},
        {"delta_rate", "soft update rate of the error model target, -1 = default",
         [](C& c, const std::string& v) { c.delta_rate = parse_real(v); },
         [](const C& c) { return format_double(c.delta_rate); }},
        {"per_alpha", "priority exponent", [](C& c, const std::string& v) { c.per_alpha = parse_real(v); },
         [](const C& c) { return format_double(c.per_alpha); }},
        {"per_eps", "priority offset", [](C& c, const std::string& v) { c.per_eps = parse_real(v); },
         [](const C& c) { return format_double(c.per_eps); }},
        {"oracle_side", "target|source", [](C& c, const std::string& v) { c.oracle_side = v; },
         [](const C& c) { return c.oracle_side; }},
        {"marginal", "sa|state marginal for the cosine diagnostic", [](C& c, const std::string& v) { c.marginal = v; },
         [](const C& c) { return c.marginal; }},
        {"eval_episodes", "greedy evaluation rollouts, 0 = exact expected return",
         [](C& c, const std::string& v) { c.eval_episodes = int(parse_int(v)); },
         [](const C& c) { return std::to_string(c.eval_episodes); }},
    };
    return fields;
}

} // namespace detail

/// Keys that apply to the experiment rather than a single run.
inline const std::vector<std::pair<const char*, const char*>>& experiment_keys() {
    static const std::vector<std::pair<const char*, const char*>> keys = {
        {"out", "output directory"},
        {"envs", "sweep environments, ';' separated"},
        {"schemes", "sweep schemes, ';' separated"},
        {"seeds", "sweep seeds, ';' or ',' separated"},
        {"jobs", "concurrent runs"},
    };
    return keys;
}

inline std::vector<std::pair<std::string, std::string>> config_keys() {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& f : detail::train_fields()) out.emplace_back(f.key, f.help);
    for (const auto& [k, h] : experiment_keys()) out.emplace_back(k, h);
    return out;
}

inline void apply_key_values(ExperimentConfig& cfg, const KeyValues& kv) {
    for (const auto& [key, e] : kv.entries) {
        const std::string where = e.line > 0 ? e.origin + ":" + std::to_string(e.line) + ": " : e.origin + ": ";
        try {
            const auto& fields = detail::train_fields();
            const auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return key == f.key; });
            if (it != fields.end()) {
                it->set(cfg.train, e.value);
            } else if (key == "out") {
                cfg.out_dir = e.value;
            } else if (key == "envs") {
                cfg.envs = split_list(e.value);
            } else if (key == "schemes") {
                cfg.schemes = split_list(e.value);
                for (const auto& s : cfg.schemes) parse_scheme(s);
            } else if (key == "seeds") {
                std::string v = e.value;
                std::replace(v.begin(), v.end(), ',', ';');
                cfg.seeds.clear();
                for (const auto& s : split_list(v)) cfg.seeds.push_back(detail::parse_seed(s));
            } else if (key == "jobs") {
                cfg.jobs = int(detail::parse_int(e.value));
                if (cfg.jobs < 1) throw std::invalid_argument("jobs must be >= 1");
            } else {
                throw ConfigError(where + "unknown field '" + key + "'");
            }
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& ex) {
            throw ConfigError(where + "field '" + key + "': bad value '" + e.value + "': " + ex.what());
        }
    }
    try {
        cfg.train.validate();
    } catch (const InvalidArgument& ex) {
        throw ConfigError(std::string("invalid configuration: ") + ex.what());
    }
}

/// Every run field, one `key = value` line each, in a fixed order.
inline std::string resolved_config_text(const TrainConfig& c) {
    std::string s = "[run]\n";
    for (const auto& f : detail::train_fields()) s += std::string(f.key) + " = " + f.get(c) + "\n";
    return s;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string config_hash(const TrainConfig& c) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(resolved_config_text(c))));
    return buf;
}

inline std::string default_output_root() {
    if (const char* env = std::getenv("DISCOR_LAB_OUT"); env && *env) return env;
    return "discor_out";
}

// ---------------------------------------------------------------------------
// CSV

inline const char* csv_header =
    "iter,value_error,return,norm_return,cosine_sim,w_mean,w_min,w_max,tau,c1,c2,slack_thm3,slack_lemma,dtv,wall_ms";

inline std::string csv_meta(const TrainConfig& c, double discount) {
    return std::string("# meta: env=") + c.env + ",scheme=" + scheme_name(c.scheme) + ",seed=" + std::to_string(c.seed) +
           ",gamma=" + format_double(discount) + ",mode=" + mode_name(c.mode) + ",approx=" + approx_name(c.approx) +
           ",config_hash=" + config_hash(c) + ",version=" + lab_version +
           ",norm_return=(return-random)/(optimal-random)";
}

inline void write_csv(std::ostream& os, const std::string& meta, const std::vector<RunRecord>& rows) {
    os << meta << '\n' << csv_header << '\n';
    for (const auto& r : rows) {
        os << r.iter;
        for (double v : {r.value_error, r.eval_return, r.norm_return, r.cosine_sim, r.w_mean, r.w_min, r.w_max, r.tau,
                         r.c1, r.c2, r.slack_thm3, r.slack_lemma, r.dtv, r.wall_ms})
            os << ',' << format_double(v);
        os << '\n';
    }
}

struct CsvTable {
    std::string meta;
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    Index column(const std::string& name) const {
        for (std::size_t i = 0; i < columns.size(); ++i)
            if (columns[i] == name) return Index(i);
        throw InvalidArgument("csv: no column '" + name + "'");
    }
};

inline CsvTable read_csv(std::istream& is, const std::string& origin = "csv") {
    CsvTable t;
    std::string line;
    int n = 0;
    while (std::getline(is, line)) {
        ++n;
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (line.rfind("# meta:", 0) == 0) t.meta = trim(line.substr(7));
            continue;
        }
        const auto cells = split_list(line, ',');
        if (t.columns.empty()) {
            t.columns = cells;
            continue;
        }
        if (cells.size() != t.columns.size())
            throw InvalidArgument(origin + ":" + std::to_string(n) + ": expected " + std::to_string(t.columns.size()) +
                                  " cells");
        std::vector<double> row;
        for (const auto& c : cells) row.push_back(detail::parse_real(c));
        t.rows.push_back(std::move(row));
    }
    if (t.columns.empty()) throw InvalidArgument(origin + ": no header row");
    return t;
}

inline std::map<std::string, std::string> parse_meta(const std::string& meta) {
    std::map<std::string, std::string> out;
    for (const auto& item : split_list(meta, ',')) {
        const auto eq = item.find('=');
        if (eq != std::string::npos) out[item.substr(0, eq)] = item.substr(eq + 1);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Runs and sweeps

inline std::string run_stem(const TrainConfig& c) {
    std::string env = c.env;
    for (char& ch : env)
        if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '.' && ch != '-') ch = '_';
    return env + "__" + scheme_name(c.scheme) + "__s" + std::to_string(c.seed);
}

struct RunOutput {
    std::string csv_path;
    std::string manifest_path;
    std::vector<RunRecord> records;
};

/// Runs one configuration and writes `<stem>.csv` and `<stem>.manifest` into `dir`.
/// The manifest is itself a config file that reproduces the CSV.
inline RunOutput run_to_files(const TrainConfig& cfg, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("output directory '" + dir + "' is not writable: " + ec.message());

    Environment env = make_environment(cfg.env, cfg.seed, cfg.discount);
    const double discount = env.mdp.discount;
    Trainer trainer(cfg, std::move(env));
    RunOutput out;
    out.records = trainer.run();

    const std::string stem = run_stem(cfg);
    out.csv_path = (fs::path(dir) / (stem + ".csv")).string();
    out.manifest_path = (fs::path(dir) / (stem + ".manifest")).string();
    {
        std::ofstream csv(out.csv_path);
        if (!csv) throw ConfigError("cannot write '" + out.csv_path + "'");
        write_csv(csv, csv_meta(cfg, discount), out.records);
    }
    {
        std::ofstream man(out.manifest_path);
        if (!man) throw ConfigError("cannot write '" + out.manifest_path + "'");
        man << "# discor-lab manifest\n# version: " << lab_version << "\n# config_hash: " << config_hash(cfg)
            << "\n# seed: " << cfg.seed << "\n# csv: " << fs::path(out.csv_path).filename().string() << "\n"
            << resolved_config_text(cfg);
    }
    return out;
}

struct SweepRow {
    std::string env;
    std::string scheme;
    std::string seed;    ///< seed number, or "median"
    std::string status;  ///< ok | error: ...
    double iterations = 0;
    double value_error = 0;
    double eval_return = 0;
    double norm_return = 0;
    double cosine_sim = 0;
    double dtv = 0;
};

inline double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Runs every (env, scheme, seed) triple, `jobs` at a time, isolating failures.
/// Returns per-run rows followed by one median row per (env, scheme).
inline std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const std::string& dir,
                                       std::ostream* log = nullptr) {
    struct Task {
        TrainConfig train;
    };
    std::vector<Task> tasks;
    const auto envs = cfg.envs.empty() ? std::vector<std::string>{cfg.train.env} : cfg.envs;
    const auto schemes =
        cfg.schemes.empty() ? std::vector<std::string>{scheme_name(cfg.train.scheme)} : cfg.schemes;
    const auto seeds = cfg.seeds.empty() ? std::vector<std::uint64_t>{cfg.train.seed} : cfg.seeds;
    for (const auto& e : envs)
        for (const auto& s : schemes)
            for (auto seed : seeds) {
                TrainConfig t = cfg.train;
                t.env = e;
                t.scheme = parse_scheme(s);
                t.seed = seed;
                for (const auto& other : tasks)
                    if (other.train.env == e && other.train.scheme == t.scheme && other.train.seed == seed)
                        throw ConfigError("sweep lists (" + e + ", " + s + ", " + std::to_string(seed) + ") twice");
                tasks.push_back({t});
            }

    std::vector<SweepRow> rows(tasks.size());
    std::atomic<std::size_t> next{0};
    std::mutex log_mutex;
    auto worker = [&]() {
        for (std::size_t i = next++; i < tasks.size(); i = next++) {
            const TrainConfig& t = tasks[i].train;
            SweepRow& row = rows[i];
            row.env = t.env;
            row.scheme = scheme_name(t.scheme);
            row.seed = std::to_string(t.seed);
            try {
                const RunOutput out = run_to_files(t, dir);
                row.status = "ok";
                row.iterations = double(out.records.size());
                if (!out.records.empty()) {
                    const RunRecord& r = out.records.back();
                    row.value_error = r.value_error;
                    row.eval_return = r.eval_return;
                    row.norm_return = r.norm_return;
                    row.cosine_sim = r.cosine_sim;
                    row.dtv = r.dtv;
                }
            } catch (const std::exception& ex) {
                std::string msg = ex.what();
                std::replace(msg.begin(), msg.end(), ',', ';');
                std::replace(msg.begin(), msg.end(), '\n', ' ');
                row.status = "error: " + msg;
                const double nan = std::numeric_limits<double>::quiet_NaN();
                row.iterations = row.value_error = row.eval_return = row.norm_return = row.cosine_sim = row.dtv = nan;
            }
            if (log) {
                std::lock_guard<std::mutex> lock(log_mutex);
                *log << row.env << ' ' << row.scheme << " seed " << row.seed << ": " << row.status << '\n';
            }
        }
    };
    const int jobs = std::max(1, std::min<int>(cfg.jobs, int(tasks.size())));
    std::vector<std::thread> pool;
    for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    for (const auto& e : envs)
        for (const auto& s : schemes) {
            SweepRow m{e, scheme_name(parse_scheme(s)), "median", "ok"};
            std::vector<double> it, ve, er, nr, cs, dt;
            for (const auto& r : rows) {
                if (r.env != e || r.scheme != m.scheme || r.status != "ok") continue;
                it.push_back(r.iterations);
                ve.push_back(r.value_error);
                er.push_back(r.eval_return);
                nr.push_back(r.norm_return);
                cs.push_back(r.cosine_sim);
                dt.push_back(r.dtv);
            }
            if (it.empty()) m.status = "error: no successful runs";
            m.iterations = median(it);
            m.value_error = median(ve);
            m.eval_return = median(er);
            m.norm_return = median(nr);
            m.cosine_sim = median(cs);
            m.dtv = median(dt);
            rows.push_back(m);
        }
    return rows;
}

inline void write_summary(std::ostream& os, const std::vector<SweepRow>& rows) {
    os << "env,scheme,seed,status,iters,final_value_error,final_return,final_norm_return,final_cosine_sim,final_dtv\n";
    for (const auto& r : rows) {
        os << r.env << ',' << r.scheme << ',' << r.seed << ',' << r.status;
        for (double v : {r.iterations, r.value_error, r.eval_return, r.norm_return, r.cosine_sim, r.dtv})
            os << ',' << format_double(v);
        os << '\n';
    }
}

// ---------------------------------------------------------------------------
// Bound verification

struct VerifyReport {
    bool pass = true;
    std::vector<std::string> lines;

    void note(const std::string& s) { lines.push_back(s); }
    void fail(const std::string& s) {
        pass = false;
        lines.push_back("FAIL " + s);
    }
};

/// One-step error recursion on random MDPs and random bounded Q tables.
inline VerifyReport verify_lemma_suite(int trials, std::uint64_t seed, double tolerance = 1e-9) {
    VerifyReport rep;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Index> states(2, 10), actions(1, 4);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double worst = std::numeric_limits<double>::infinity();
    std::string worst_at;
    long violations = 0;
    for (int t = 0; t < trials; ++t) {
        const Index S = states(rng), A = actions(rng);
        const double g = 0.5 + 0.49 * unit(rng);
        const Index term = unit(rng) < 0.3 ? 1 : 0;
        const TabularMdp m = random_mdp(S, A, rng(), g, 1 + Index(unit(rng) * 3), term);
        const QTable q_star = value_iteration(m);
        const double bound = std::max(m.r_max(), 1e-12) / (1.0 - g);
        QTable q_prev(S, A), q_next(S, A);
        for (Index i = 0; i < q_prev.size(); ++i) {
            q_prev.data()[i] = bound * (2.0 * unit(rng) - 1.0);
            q_next.data()[i] = bound * (2.0 * unit(rng) - 1.0);
        }
        // a third of the trials put Q_{k-1} near the optimum so the greedy policies agree
        if (t % 3 == 0) q_prev = q_star + 0.01 * bound * q_prev / bound;
        const Slack s = lemma_b1_slack(m, q_prev, q_next, q_star);
        if (s.value < worst) {
            worst = s.value;
            worst_at = "trial " + std::to_string(t) + ", s=" + std::to_string(s.pair / A) +
                       ", a=" + std::to_string(s.pair % A);
        }
        if (s.value < -tolerance) {
            ++violations;
            rep.fail("trial " + std::to_string(t) + ": slack " + format_double(s.value) + " at s=" +
                     std::to_string(s.pair / A) + ", a=" + std::to_string(s.pair % A));
        }
    }
    rep.note("lemma suite: " + std::to_string(trials) + " trials, " + std::to_string(violations) +
             " violations, worst slack " + format_double(worst) + " (" + worst_at + ")");
    return rep;
}

/// Runs a tabular-Delta exact run and checks Delta_k + sum gamma^{k-i} alpha_i >= |Q_k - Q*|
/// pointwise for k >= k0. `corrupt_delta` negates Delta before the check (fault injection).
inline VerifyReport verify_thm3(const TrainConfig& cfg, bool corrupt_delta = false, double tolerance = 1e-6) {
    VerifyReport rep;
    if (cfg.delta_model != ApproxKind::tabular)
        throw InvalidArgument("the accumulated-error bound is only checked for a tabular error model");
    Environment env = make_environment(cfg.env, cfg.seed, cfg.discount);
    Trainer t(cfg, std::move(env));
    const long k0 = k0_threshold(t.mdp().discount);
    const Index A = t.mdp().num_actions;
    std::vector<double> series;
    std::vector<Index> where;
    while (t.iteration() < cfg.iterations) {
        t.step();
        QTable delta = t.delta();
        if (corrupt_delta) delta = -delta;
        const Slack s = min_slack(thm3_margin(delta, t.alpha_sum(), t.q(), t.q_star()));
        series.push_back(s.value);
        where.push_back(s.pair);
    }
    const BoundCheck c = check_slack_series(series, k0, tolerance);
    rep.note("bound check on " + cfg.env + ": k0 = " + std::to_string(k0) + ", iterations = " +
             std::to_string(series.size()));
    if (c.worst_iter > 0) {
        const Index p = where[std::size_t(c.worst_iter - 1)];
        rep.note("worst slack " + format_double(c.worst) + " at k=" + std::to_string(c.worst_iter) +
                 ", s=" + std::to_string(p / A) + ", a=" + std::to_string(p % A));
    }
    if (c.violations > 0) {
        const Index p = where[std::size_t(c.first_violation - 1)];
        rep.fail(std::to_string(c.violations) + " iterations below -" + format_double(tolerance) +
                 "; first violation at k=" + std::to_string(c.first_violation) + ", s=" + std::to_string(p / A) +
                 ", a=" + std::to_string(p % A) + ", slack " + format_double(series[std::size_t(c.first_violation - 1)]));
    }
    if (long(series.size()) < k0) rep.fail("run shorter than k0; nothing checked");
    return rep;
}

/// Checks the tabular error model against the explicit expansion
/// sum_i gamma^{k-i} (P_{k-1} ... P_i) |Q_i - B*Q_{i-1}|.
inline VerifyReport verify_delta_expansion(const TrainConfig& cfg, double tolerance = 1e-8) {
    VerifyReport rep;
    if (cfg.mode != Mode::exact || cfg.delta_model != ApproxKind::tabular)
        throw InvalidArgument("the expansion check needs exact mode with a tabular error model");
    Environment env = make_environment(cfg.env, cfg.seed, cfg.discount);
    Trainer t(cfg, std::move(env));
    const TabularMdp& m = t.mdp();
    const double g = m.discount;
    std::vector<Vector> errors;          // e_i, i = 1..k
    std::vector<Eigen::MatrixXd> steps;  // P_i = backup operator of greedy(Q_i), i = 0..k
    steps.push_back(Eigen::MatrixXd(backup_matrix(m, greedy_policy(t.q()))));
    double worst = 0.0;
    long worst_k = 0;
    while (t.iteration() < cfg.iterations) {
        t.step();
        const long k = t.iteration();
        errors.push_back((as_pairs(t.q()) - as_pairs(bellman_backup(m, t.q_prev()))).cwiseAbs());
        steps.push_back(Eigen::MatrixXd(backup_matrix(m, greedy_policy(t.q()))));
        Vector expected = Vector::Zero(m.num_pairs());
        Eigen::MatrixXd chain = Eigen::MatrixXd::Identity(m.num_pairs(), m.num_pairs());
        for (long i = k; i >= 1; --i) {
            expected += std::pow(g, double(k - i)) * (chain * errors[std::size_t(i - 1)]);
            chain = chain * steps[std::size_t(i - 1)];
        }
        const double diff = (as_pairs(t.delta()) - expected).cwiseAbs().maxCoeff();
        if (diff > worst) {
            worst = diff;
            worst_k = k;
        }
    }
    rep.note("expansion check on " + cfg.env + ": " + std::to_string(cfg.iterations) + " iterations, max deviation " +
             format_double(worst) + (worst_k ? " at k=" + std::to_string(worst_k) : std::string()));
    if (worst > tolerance) rep.fail("error model deviates from the explicit expansion by " + format_double(worst));
    return rep;
}

/// Tree separation: on-policy iterations non-decreasing in H and above 4 H^2
/// (or unconverged) at the deepest H, DisCor within 4 H^2 everywhere, and
/// DisCor never slower than on-policy.
inline VerifyReport verify_complexity(const ComplexitySweep& sweep, std::vector<ComplexityRow>* rows_out = nullptr) {
    VerifyReport rep;
    const auto rows = iteration_complexity_sweep(sweep);
    if (rows_out) *rows_out = rows;
    auto iters = [](const ComplexityRow& r) {
        return r.converged ? double(r.iterations) : std::numeric_limits<double>::infinity();
    };
    for (const auto& r : rows)
        rep.note("H=" + std::to_string(r.depth) + " " + scheme_name(r.scheme) + " seed " + std::to_string(r.seed) +
                 ": " + (r.converged ? std::to_string(r.iterations) + " iterations" : std::string("not converged")) +
                 " (threshold " + format_double(r.threshold) + ", feature residual " +
                 format_double(r.feature_residual) + ")");
    const int h_max = *std::max_element(sweep.depths.begin(), sweep.depths.end());
    for (auto seed : sweep.seeds) {
        double last = 0.0;
        for (int h : sweep.depths) {
            const ComplexityRow* on = nullptr;
            const ComplexityRow* dc = nullptr;
            for (const auto& r : rows) {
                if (r.seed != seed || r.depth != h) continue;
                if (r.scheme == Scheme::onpolicy) on = &r;
                if (r.scheme == Scheme::discor) dc = &r;
            }
            const double bound = 4.0 * h * h;
            if (on) {
                if (iters(*on) < last)
                    rep.fail("on-policy iterations decrease at H=" + std::to_string(h) + ", seed " + std::to_string(seed));
                last = iters(*on);
                if (h == h_max && iters(*on) <= bound)
                    rep.fail("on-policy converges within 4H^2 = " + std::to_string(int(bound)) + " at H=" +
                             std::to_string(h) + ", seed " + std::to_string(seed) + " (" +
                             std::to_string(on->iterations) + " iterations)");
            }
            if (dc && iters(*dc) > bound)
                rep.fail("discor needs more than 4H^2 iterations at H=" + std::to_string(h) + ", seed " +
                         std::to_string(seed));
            if (on && dc && iters(*dc) > iters(*on))
                rep.fail("scheme order inverted at H=" + std::to_string(h) + ", seed " + std::to_string(seed));
        }
    }
    return rep;
}

} // namespace discor
