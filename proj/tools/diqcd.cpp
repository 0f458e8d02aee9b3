// Command-line driver: data generation, training, simulation, and mobility
// estimation from JSON configs with reproducible seeds.
//
// Exit codes: 0 success, 2 config/validation, 3 numerical failure,
// 4 regime rejection.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "diqcd.hpp"

#ifndef DIQCD_VERSION
#define DIQCD_VERSION "dev"
#endif

using nlohmann::json;
using namespace diqcd;

namespace {

// ---------------------------------------------------------------------------
// Presets.

const char* preset_text(const std::string& name) {
    if (name == "caf-synth")
        return R"({
  "case": "caf",
  "params": {"line_amp": [0.15, 0.10, 0.07, 0.05], "ou_amp": 0.25,
             "ou_tau": 12.0, "static_w": 0.6, "gamma_x": 0.01,
             "gamma_z": 0.05, "pulse_err": 0.004},
  "generate": {"batch": 2048},
  "data": {"plain": "caf_plain.csv", "echo": "caf_echo.csv",
           "xy8": "caf_xy8.csv"}
})";
    if (name == "caf-fit")
        return R"({
  "case": "caf",
  "params": {"line_amp": [0.10, 0.10, 0.10, 0.10], "ou_amp": 0.15,
             "ou_tau": 8.0, "static_w": 0.4, "gamma_x": 0.02,
             "gamma_z": 0.02, "pulse_err": 0.002},
  "fit": {"batch": 128, "epochs": 200, "lr": [0.1, 0.001],
          "freeze_noise": false, "log_every": 10},
  "simulate": {"scheme": "plain", "batch": 2048, "dt_ms": 0.01,
               "t_final_ms": 3.5, "sample_every_ms": 0.5},
  "data": {"plain": "caf_plain.csv", "echo": "caf_echo.csv",
           "xy8": "caf_xy8.csv"}
})";
    if (name == "bell-ideal")
        return R"({
  "case": "bell",
  "model": {"separation_um": 2.0, "pinned": true, "with_noise": false,
            "with_xy8": false},
  "params": {"line_amp": [0.15, 0.10, 0.07, 0.05], "ou_amp": 0.25,
             "ou_tau": 12.0, "static_w": 0.6, "gamma_x": 1e-30,
             "gamma_z": 1e-30, "pulse_err": 1e-12},
  "simulate": {"batch": 1, "dt_ms": 0.002, "t_final_ms": 52.0,
               "sample_every_ms": 0.52}
})";
    if (name == "bell-md")
        return R"({
  "case": "bell",
  "model": {"separation_um": 1.93, "pinned": false, "with_noise": true,
            "with_xy8": true},
  "params": {"line_amp": [0.15, 0.10, 0.07, 0.05], "ou_amp": 0.25,
             "ou_tau": 12.0, "static_w": 0.6, "gamma_x": 0.01,
             "gamma_z": 0.05, "pulse_err": 0.004},
  "simulate": {"batch": 64, "dt_ms": 0.002, "t_final_ms": 6.4,
               "sample_every_ms": 0.1}
})";
    if (name == "rubrene-300K-small")
        return R"({
  "case": "rubrene",
  "model": {"n_modes": 3, "temp_K": 300.0, "phi": 0.1},
  "params": {"eps0": -30.0, "gamma": 50.0, "amp": [220.0, 160.0, 200.0]},
  "generate": {"batch": 64, "dt_fs": 0.01, "t_final_fs": 100.0,
               "taylor_order": 6, "dim_cap": 200000},
  "fit": {"batch": 512, "dt_fs": 0.05, "epochs": 200, "lr": [0.3],
          "std_weight": 0.1, "fit_horizon_fs": 70.0, "freeze_noise": false,
          "log_every": 10},
  "simulate": {"batch": 512, "dt_fs": 0.05, "t_final_fs": 100.0,
               "sample_every_fs": 1.0},
  "lattice": {"sites": 50, "boundary_sites": 5, "batch": 64, "dt_fs": 0.05,
              "t_final_fs": 60.0, "sample_every_fs": 1.0, "with_noise": true,
              "with_jumps": true},
  "data": {"series": "rubrene_data.csv"}
})";
    if (name == "rubrene-300K-full")
        return R"({
  "case": "rubrene",
  "model": {"n_modes": 9, "temp_K": 300.0, "phi": 0.1},
  "params": {"eps0": -30.0, "gamma": 50.0,
             "amp": [255.0, 160.0, 235.0, 285.0, 255.0, 590.0, 250.0, 435.0, 700.0]},
  "generate": {"batch": 512, "dt_fs": 0.01, "t_final_fs": 100.0,
               "taylor_order": 6, "dim_cap": 200000},
  "fit": {"batch": 512, "dt_fs": 0.05, "epochs": 200, "lr": [0.3],
          "std_weight": 0.1, "fit_horizon_fs": 70.0, "freeze_noise": false,
          "log_every": 10},
  "simulate": {"batch": 512, "dt_fs": 0.05, "t_final_fs": 100.0,
               "sample_every_fs": 1.0},
  "lattice": {"sites": 150, "boundary_sites": 5, "batch": 512, "dt_fs": 0.05,
              "t_final_fs": 300.0, "sample_every_fs": 1.0, "with_noise": true,
              "with_jumps": true},
  "data": {"series": "rubrene_data.csv"}
})";
    throw ConfigError("unknown preset '" + name +
                      "' (available: caf-synth, caf-fit, bell-ideal, bell-md, "
                      "rubrene-300K-small, rubrene-300K-full)");
}

// ---------------------------------------------------------------------------
// Config schema: every key any command reads, with its expected type.

const json& schema() {
    static const json s = json::parse(R"({
      "case": "string",
      "model": {
        "scheme": "string", "separation_um": "number", "pinned": "bool",
        "with_noise": "bool", "with_xy8": "bool", "n_modes": "uint",
        "temp_K": "number", "phi": "number"
      },
      "params": {
        "line_amp": "numbers", "ou_amp": "number", "ou_tau": "number",
        "static_w": "number", "gamma_x": "number", "gamma_z": "number",
        "pulse_err": "number", "eps0": "number", "gamma": "number",
        "amp": "numbers"
      },
      "generate": {
        "batch": "uint", "dt_fs": "number", "t_final_fs": "number",
        "taylor_order": "uint", "dim_cap": "uint"
      },
      "fit": {
        "batch": "uint", "dt_fs": "number", "epochs": "uint",
        "lr": "numbers", "std_weight": "number", "fit_horizon_fs": "number",
        "freeze_noise": "bool", "log_every": "uint"
      },
      "simulate": {
        "scheme": "string", "batch": "uint",
        "dt_ms": "number", "t_final_ms": "number", "sample_every_ms": "number",
        "sample_times_ms": "numbers",
        "dt_fs": "number", "t_final_fs": "number", "sample_every_fs": "number",
        "sample_times_fs": "numbers"
      },
      "lattice": {
        "sites": "uint", "boundary_sites": "uint", "batch": "uint",
        "dt_fs": "number", "t_final_fs": "number", "sample_every_fs": "number",
        "with_noise": "bool", "with_jumps": "bool"
      },
      "data": {
        "series": "string", "plain": "string", "echo": "string", "xy8": "string"
      }
    })");
    return s;
}

void check_schema(const json& cfg, const json& sch, const std::string& path) {
    if (!cfg.is_object())
        throw ConfigError("config section " + (path.empty() ? "<root>" : path) +
                          " must be an object");
    for (const auto& [k, v] : cfg.items()) {
        const std::string p = path.empty() ? k : path + "." + k;
        if (!sch.contains(k)) throw ConfigError("unknown config key: " + p);
        const json& s = sch.at(k);
        if (s.is_object()) {
            check_schema(v, s, p);
            continue;
        }
        const std::string t = s.get<std::string>();
        bool ok = false;
        if (t == "string") ok = v.is_string();
        else if (t == "bool") ok = v.is_boolean();
        else if (t == "number") ok = v.is_number();
        else if (t == "uint")
            ok = v.is_number_integer() && v.get<long long>() >= 0;
        else if (t == "numbers") {
            ok = v.is_array();
            if (ok)
                for (const auto& e : v) ok = ok && e.is_number();
        }
        if (!ok) throw ConfigError("config key " + p + " must be: " + t);
    }
}

json deep_merge(json base, const json& over) {
    if (!base.is_object() || !over.is_object()) return over;
    for (const auto& [k, v] : over.items())
        base[k] = base.contains(k) ? deep_merge(base[k], v) : v;
    return base;
}

json load_json(const std::string& path) {
    try {
        return json::parse(dataio::read_file(path));
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Typed config access with config-path error messages.

const json& sec(const json& cfg, const std::string& name) {
    static const json empty = json::object();
    if (!cfg.contains(name)) return empty;
    return cfg.at(name);
}

const json& req(const json& s, const std::string& section,
                const std::string& key) {
    if (!s.contains(key))
        throw ConfigError("config is missing " +
                          (section.empty() ? key : section + "." + key));
    return s.at(key);
}

double num_at(const json& s, const std::string& section, const std::string& key) {
    return req(s, section, key).get<double>();
}
int int_at(const json& s, const std::string& section, const std::string& key) {
    return int(req(s, section, key).get<long long>());
}
bool bool_at(const json& s, const std::string& section, const std::string& key) {
    return req(s, section, key).get<bool>();
}
std::string str_at(const json& s, const std::string& section,
                   const std::string& key) {
    return req(s, section, key).get<std::string>();
}
std::vector<double> arr_at(const json& s, const std::string& section,
                           const std::string& key) {
    return req(s, section, key).get<std::vector<double>>();
}

// ---------------------------------------------------------------------------
// Manifest plumbing.

void flatten_config(dataio::RunManifest& m, const json& j,
                    const std::string& prefix) {
    if (j.is_object()) {
        for (const auto& [k, v] : j.items()) flatten_config(m, v, prefix + "." + k);
        return;
    }
    m.set(prefix, j.dump());
}

json config_from_manifest(const dataio::RunManifest& m) {
    json cfg = json::object();
    for (const auto& kv : m.entries) {
        if (kv.first.rfind("cfg.", 0) != 0) continue;
        std::vector<std::string> parts;
        std::string rest = kv.first.substr(4);
        size_t pos;
        while ((pos = rest.find('.')) != std::string::npos) {
            parts.push_back(rest.substr(0, pos));
            rest = rest.substr(pos + 1);
        }
        parts.push_back(rest);
        json* cur = &cfg;
        for (size_t i = 0; i + 1 < parts.size(); ++i) cur = &((*cur)[parts[i]]);
        try {
            (*cur)[parts.back()] = json::parse(kv.second);
        } catch (const json::exception&) {
            throw ConfigError("manifest entry " + kv.first + " is not valid");
        }
    }
    if (cfg.empty()) throw ConfigError("manifest carries no configuration");
    return cfg;
}

std::string iso_now() {
    const std::time_t t = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

struct Ctx {
    json cfg;
    std::uint64_t seed = 1;
    std::string out = ".";
    int threads = 1;
    dataio::RunManifest source;  // --manifest or --resume input
    bool rerun = false;
    bool resume = false;
    std::string params_path;
};

dataio::RunManifest base_manifest(const std::string& cmd, const Ctx& c) {
    dataio::RunManifest m;
    m.set("command", cmd);
    m.set("version", DIQCD_VERSION);
    flatten_config(m, c.cfg, "cfg");
    m.set("seed", c.seed);
    return m;
}

void write_manifest(dataio::RunManifest& m, const std::string& path) {
    m.set("wall_clock", iso_now());
    m.save(path);
}

caf::CaFConfig caf_config(const json& P) {
    caf::CaFConfig c;
    const std::vector<double> la = arr_at(P, "params", "line_amp");
    if (la.size() != 4)
        throw ConfigError("params.line_amp must hold 4 amplitudes");
    for (size_t i = 0; i < 4; ++i) c.line_amp[i] = la[i];
    c.ou_amp = num_at(P, "params", "ou_amp");
    c.ou_tau = num_at(P, "params", "ou_tau");
    c.static_w = num_at(P, "params", "static_w");
    c.gamma_x = num_at(P, "params", "gamma_x");
    c.gamma_z = num_at(P, "params", "gamma_z");
    c.pulse_err = num_at(P, "params", "pulse_err");
    return c;
}

rubrene::RubreneParams rubrene_register(ParamStore& store, const json& cfg) {
    const json& model = sec(cfg, "model");
    const json& P = sec(cfg, "params");
    const int n_modes = int_at(model, "model", "n_modes");
    const std::vector<double> amp = arr_at(P, "params", "amp");
    if (int(amp.size()) != n_modes)
        throw ConfigError("params.amp must hold model.n_modes amplitudes");
    return rubrene::register_params(store, amp, num_at(P, "params", "eps0"),
                                    num_at(P, "params", "gamma"));
}

std::vector<double> sample_grid(double every, double t_final, double dt) {
    if (every <= 0.0) throw ConfigError("sample interval must be > 0");
    (void)dt;
    std::vector<double> t;
    for (int i = 0;; ++i) {
        const double ti = i * every;
        if (ti > t_final + 1e-9) break;
        t.push_back(ti);
    }
    return t;
}

// ---------------------------------------------------------------------------
// gen-data

void cmd_gen_data(Ctx& c) {
    const std::string cas = str_at(c.cfg, "", "case");
    dataio::RunManifest man = base_manifest("gen-data", c);
    if (cas == "caf") {
        ParamStore store;
        const caf::CaFConfig gt = caf_config(sec(c.cfg, "params"));
        const caf::CaFParams p = caf::register_params(store, gt);
        dataio::snapshot_params(man, store);
        const std::string hash = man.hash_hex();
        const int batch = int_at(sec(c.cfg, "generate"), "generate", "batch");
        const json& data = sec(c.cfg, "data");
        const caf::Scheme schemes[] = {caf::Scheme::plain, caf::Scheme::echo,
                                       caf::Scheme::xy8};
        for (int i = 0; i < 3; ++i) {
            const caf::Scheme sc = schemes[i];
            const auto sp = caf::gen_scheme_data(
                store, p, gt, sc, caf::scheme_times(sc), batch,
                c.seed + 1000003ULL * std::uint64_t(i), c.threads);
            dataio::Dataset ds;
            ds.comments = {std::string("provenance: synthetic ") +
                               caf::scheme_name(sc) +
                               " contrast, generator seed " +
                               std::to_string(c.seed),
                           "manifest_hash=" + hash};
            ds.columns = {"t_ms", "contrast"};
            for (size_t j = 0; j < sp.t.size(); ++j)
                ds.rows.push_back({sp.t[j], sp.c[j]});
            dataio::save_dataset(
                ds, c.out + "/" + str_at(data, "data", caf::scheme_name(sc)));
        }
        write_manifest(man, c.out + "/manifest_gen_data.txt");
    } else if (cas == "rubrene") {
        const json& model = sec(c.cfg, "model");
        const json& gen = sec(c.cfg, "generate");
        rubrene::GenConfig gc;
        gc.n_modes = int_at(model, "model", "n_modes");
        gc.temp_K = num_at(model, "model", "temp_K");
        gc.phi = num_at(model, "model", "phi");
        gc.batch = int_at(gen, "generate", "batch");
        gc.dt_fs = num_at(gen, "generate", "dt_fs");
        gc.t_final_fs = num_at(gen, "generate", "t_final_fs");
        gc.taylor_order = int_at(gen, "generate", "taylor_order");
        gc.dim_cap = req(gen, "generate", "dim_cap").get<long long>();
        gc.seed = c.seed;
        const rubrene::GenResult gr = rubrene::gen_one_molecule_data(gc);
        man.set("joint_dimension", std::uint64_t(gr.dim));
        man.set("max_sz_drift", gr.max_sz_drift);
        std::string levels;
        for (size_t i = 0; i < gr.levels.size(); ++i)
            levels += (i ? "," : "") + std::to_string(gr.levels[i]);
        man.set("fock_levels", levels);
        const std::string hash = man.hash_hex();
        dataio::Dataset ds;
        ds.comments = {"provenance: vibronic generator, seed " +
                           std::to_string(c.seed),
                       "fock_levels=" + levels, "manifest_hash=" + hash};
        ds.columns = {"t_fs", "mean_sx", "mean_sy", "std_sx", "std_sy"};
        for (size_t i = 0; i < gr.t.size(); ++i)
            ds.rows.push_back({gr.t[i], gr.mean_sx[i], gr.mean_sy[i],
                               gr.std_sx[i], gr.std_sy[i]});
        dataio::save_dataset(ds,
                             c.out + "/" + str_at(sec(c.cfg, "data"), "data",
                                                  "series"));
        write_manifest(man, c.out + "/manifest_gen_data.txt");
    } else {
        throw ConfigError("gen-data supports case 'caf' or 'rubrene'");
    }
}

// ---------------------------------------------------------------------------
// train

void cmd_train(Ctx& c) {
    const std::string cas = str_at(c.cfg, "", "case");
    dataio::RunManifest man = base_manifest("train", c);
    const json& fit = sec(c.cfg, "fit");
    TrainOptions opt;
    opt.epochs = int_at(fit, "fit", "epochs");
    opt.lr = arr_at(fit, "fit", "lr");
    opt.freeze_noise = bool_at(fit, "fit", "freeze_noise");
    opt.log_every = int_at(fit, "fit", "log_every");
    opt.seed = c.seed;

    ParamStore store;
    std::vector<Run> runs;
    std::vector<LossTerm> terms;
    if (cas == "caf") {
        const caf::CaFConfig init = caf_config(sec(c.cfg, "params"));
        const caf::CaFParams p = caf::register_params(store, init);
        const json& data = sec(c.cfg, "data");
        std::vector<caf::SchemePoints> points;
        for (const char* name : {"plain", "echo", "xy8"}) {
            const dataio::Dataset ds = dataio::load_dataset(
                c.out + "/" + str_at(data, "data", name), "ms", {"contrast"});
            caf::SchemePoints sp;
            sp.scheme = caf::scheme_from_name(name);
            sp.t = ds.values(0);
            sp.c = ds.values(1);
            points.push_back(std::move(sp));
        }
        auto tr = caf::build_caf_training(p, init, points,
                                          int_at(fit, "fit", "batch"),
                                          c.threads);
        runs = std::move(tr.runs);
        terms = std::move(tr.terms);
    } else if (cas == "rubrene") {
        const rubrene::RubreneParams p = rubrene_register(store, c.cfg);
        const dataio::Dataset ds = dataio::load_dataset(
            c.out + "/" + str_at(sec(c.cfg, "data"), "data", "series"), "fs",
            {"mean_sx", "mean_sy", "std_sx", "std_sy"});
        rubrene::GenResult gr;
        gr.t = ds.values(0);
        gr.mean_sx = ds.values("mean_sx");
        gr.mean_sy = ds.values("mean_sy");
        gr.std_sx = ds.values("std_sx");
        gr.std_sy = ds.values("std_sy");
        auto tr = rubrene::build_training(
            p, gr, num_at(sec(c.cfg, "model"), "model", "phi"),
            num_at(fit, "fit", "fit_horizon_fs"),
            num_at(fit, "fit", "std_weight"), int_at(fit, "fit", "batch"),
            num_at(fit, "fit", "dt_fs"), c.threads);
        runs = std::move(tr.runs);
        terms = std::move(tr.terms);
    } else {
        throw ConfigError("train supports case 'caf' or 'rubrene'");
    }

    AdamState adam;
    std::uint64_t epochs_prev = 0;
    if (c.resume) {
        dataio::restore_params(c.source, store);
        adam = dataio::restore_adam(c.source, store);
        epochs_prev = c.source.get_u64("epochs_done");
        opt.seed = c.seed + epochs_prev;
    }
    const TrainResult res = train(runs, terms, store, opt, &adam);

    man.set("epochs_done", epochs_prev + std::uint64_t(opt.epochs));
    man.set("final_loss", res.loss_history.back());
    dataio::snapshot_params(man, store);
    dataio::snapshot_adam(man, store, adam);
    const std::string hash = man.hash_hex();
    dataio::save_loss_history(res.loss_history, c.out + "/loss_history.csv",
                              hash);
    write_manifest(man, c.out + "/manifest_train.txt");
}

// ---------------------------------------------------------------------------
// simulate

void cmd_simulate(Ctx& c) {
    const std::string cas = str_at(c.cfg, "", "case");
    const json& sim = sec(c.cfg, "simulate");
    const bool fs = cas == "rubrene";
    const std::string sfx = fs ? "_fs" : "_ms";

    ParamStore store;
    ModelSpec model;
    const double t_final = num_at(sim, "simulate", "t_final" + sfx);
    if (cas == "bell") {
        const json& mj = sec(c.cfg, "model");
        const caf::CaFConfig pc = caf_config(sec(c.cfg, "params"));
        const caf::CaFParams p = caf::register_params(store, pc);
        model = caf::two_molecule_model(
            p, pc, num_at(mj, "model", "separation_um"), t_final,
            bool_at(mj, "model", "with_xy8"), bool_at(mj, "model", "pinned"),
            bool_at(mj, "model", "with_noise"));
    } else if (cas == "caf") {
        const caf::CaFConfig pc = caf_config(sec(c.cfg, "params"));
        const caf::CaFParams p = caf::register_params(store, pc);
        model = caf::one_molecule_model(
            p, caf::scheme_from_name(str_at(sim, "simulate", "scheme")),
            t_final);
    } else if (cas == "rubrene") {
        const rubrene::RubreneParams p = rubrene_register(store, c.cfg);
        model = rubrene::one_molecule_fit_model(
            p, num_at(sec(c.cfg, "model"), "model", "phi"));
    } else {
        throw ConfigError("simulate supports case 'caf', 'bell' or 'rubrene'");
    }
    if (!c.params_path.empty())
        dataio::restore_params(dataio::RunManifest::load(c.params_path), store);
    else if (c.rerun && c.source.has("n_params"))
        dataio::restore_params(c.source, store);

    SimOptions so;
    so.batch = int_at(sim, "simulate", "batch");
    so.dt = num_at(sim, "simulate", "dt" + sfx);
    so.t_final = t_final;
    so.seed = c.seed;
    so.threads = c.threads;
    if (sim.contains("sample_times" + sfx)) {
        so.sample_times = arr_at(sim, "simulate", "sample_times" + sfx);
        for (double t : so.sample_times)
            if (t < 0.0 || t > t_final)
                throw ConfigError("simulate.sample_times: time outside [0, " +
                                  dataio::format_g12(t_final) + "]");
    } else {
        so.sample_times = sample_grid(
            num_at(sim, "simulate", "sample_every" + sfx), t_final, so.dt);
    }
    const TrajectoryStats st = simulate_ensemble(model, store, so);

    dataio::RunManifest man = base_manifest("simulate", c);
    dataio::snapshot_params(man, store);
    const std::string hash = man.hash_hex();
    dataio::Dataset ds =
        dataio::stats_dataset(st, fs ? "t_fs" : "t_ms", model.track_trap_loss);
    if (cas == "caf") {
        ds.columns.push_back("contrast");
        for (auto& row : ds.rows)
            row.push_back(std::abs(row[1] - row[3]));  // pup_pi - pup_0 means
    }
    ds.comments = {"provenance: ensemble simulation, seed " +
                       std::to_string(c.seed),
                   "manifest_hash=" + hash};
    dataio::save_dataset(ds, c.out + "/sim_stats.csv");
    write_manifest(man, c.out + "/manifest_simulate.txt");
}

// ---------------------------------------------------------------------------
// mobility

void cmd_mobility(Ctx& c) {
    if (str_at(c.cfg, "", "case") != "rubrene")
        throw ConfigError("mobility requires case 'rubrene'");
    ParamStore store;
    const rubrene::RubreneParams p = rubrene_register(store, c.cfg);
    if (!c.params_path.empty())
        dataio::restore_params(dataio::RunManifest::load(c.params_path), store);
    else if (c.rerun && c.source.has("n_params"))
        dataio::restore_params(c.source, store);

    const json& lj = sec(c.cfg, "lattice");
    rubrene::LatticeConfig lc;
    lc.sites = int_at(lj, "lattice", "sites");
    lc.boundary_sites = int_at(lj, "lattice", "boundary_sites");
    lc.batch = int_at(lj, "lattice", "batch");
    lc.dt_fs = num_at(lj, "lattice", "dt_fs");
    lc.t_final_fs = num_at(lj, "lattice", "t_final_fs");
    lc.sample_every_fs = num_at(lj, "lattice", "sample_every_fs");
    lc.temp_K = num_at(sec(c.cfg, "model"), "model", "temp_K");
    lc.threads = c.threads;
    const ModelSpec lat =
        rubrene::lattice_model(p, lc, bool_at(lj, "lattice", "with_noise"),
                               bool_at(lj, "lattice", "with_jumps"));
    SimOptions so = rubrene::lattice_options(lc, c.seed);
    const TrajectoryStats st = simulate_ensemble(lat, store, so);
    const std::vector<double> msd = rubrene::msd_series(st);

    dataio::RunManifest man = base_manifest("mobility", c);
    dataio::snapshot_params(man, store);
    const std::string hash = man.hash_hex();  // configuration + parameters

    // the raw series goes to disk before the regime check, so a rejection
    // still leaves the diagnostics
    dataio::Dataset ds;
    ds.comments = {"provenance: lattice transport ensemble, seed " +
                       std::to_string(c.seed),
                   "manifest_hash=" + hash};
    ds.columns = {"t_fs", "msd_site2", "edge_occupation", "norm_mean"};
    for (size_t i = 0; i < st.times.size(); ++i)
        ds.rows.push_back({st.times[i], msd[i], st.mean[2][i], st.mean[3][i]});
    dataio::save_dataset(ds, c.out + "/msd.csv");

    const rubrene::MobilityReport rep =
        rubrene::mobility(st.times, msd, st.mean[2], lc.temp_K);
    man.set("mu_cm2_per_Vs", rep.mu_cm2_per_Vs);
    man.set("msd_slope_site2_per_fs", rep.slope_site2_per_fs);
    man.set("r2", rep.r2);

    dataio::RunManifest report;
    report.set("mu_cm2_per_Vs", rep.mu_cm2_per_Vs);
    report.set("msd_slope_site2_per_fs", rep.slope_site2_per_fs);
    report.set("intercept_site2", rep.intercept);
    report.set("r2", rep.r2);
    report.set("window_lo_fs", rep.t_lo);
    report.set("window_hi_fs", rep.t_hi);
    report.set("window_points", rep.n_points);
    report.set("boundary_occupation", rep.boundary_occupation);
    report.set("temperature_K", lc.temp_K);
    report.set("site_spacing_cm", rubrene::site_spacing_cm);
    report.set("manifest_hash", hash);
    report.save(c.out + "/mobility_report.txt");
    write_manifest(man, c.out + "/manifest_mobility.txt");
}

// ---------------------------------------------------------------------------

struct Flags {
    std::string config, preset, out = ".", manifest, params, resume;
    std::uint64_t seed = 1;
    int threads = 0;
};

int resolve_threads(int flag) {
    if (flag > 0) return flag;
    if (const char* env = std::getenv("DIQCD_THREADS")) {
        const int n = std::atoi(env);
        if (n < 1) throw ConfigError("DIQCD_THREADS must be a positive integer");
        return n;
    }
    return 1;
}

void run_command(const std::string& cmd, const Flags& f, bool seed_given) {
    Ctx c;
    if (!f.manifest.empty()) {
        if (!f.config.empty() || !f.preset.empty())
            throw ConfigError("--manifest replaces --config/--preset");
        c.source = dataio::RunManifest::load(f.manifest);
        if (c.source.get("command") != cmd)
            throw ConfigError("manifest was written by '" +
                              c.source.get("command") + "', not '" + cmd + "'");
        c.cfg = config_from_manifest(c.source);
        c.seed = seed_given ? f.seed : c.source.get_u64("seed");
        c.rerun = true;
    } else if (!f.resume.empty()) {
        c.source = dataio::RunManifest::load(f.resume);
        if (c.source.get("command") != "train")
            throw ConfigError("--resume expects a training manifest");
        c.cfg = config_from_manifest(c.source);
        if (!f.config.empty()) c.cfg = deep_merge(c.cfg, load_json(f.config));
        c.seed = seed_given ? f.seed : c.source.get_u64("seed");
        c.resume = true;
    } else {
        json cfg = json::object();
        if (!f.preset.empty()) cfg = json::parse(preset_text(f.preset));
        if (!f.config.empty()) cfg = deep_merge(cfg, load_json(f.config));
        if (cfg.empty())
            throw ConfigError("provide --preset and/or --config");
        c.cfg = cfg;
        c.seed = f.seed;
    }
    check_schema(c.cfg, schema(), "");
    c.out = f.out;
    c.threads = resolve_threads(f.threads);
    c.params_path = f.params;
    std::error_code ec;
    std::filesystem::create_directories(c.out, ec);
    if (ec) throw ConfigError("cannot create output directory " + c.out);

    if (cmd == "gen-data") cmd_gen_data(c);
    else if (cmd == "train") cmd_train(c);
    else if (cmd == "simulate") cmd_simulate(c);
    else cmd_mobility(c);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"differentiable open-system dynamics: data generation, "
                 "training, simulation, mobility"};
    app.require_subcommand(1);

    const char* common_keys =
        "Common config keys:\n"
        "  case                      \"caf\" | \"bell\" | \"rubrene\"\n"
        "  params.line_amp[4], params.ou_amp, params.ou_tau, params.static_w,\n"
        "  params.gamma_x, params.gamma_z, params.pulse_err     (caf / bell)\n"
        "  params.eps0, params.gamma, params.amp[n_modes]       (rubrene)\n";
    const std::string gen_keys =
        std::string(common_keys) +
        "gen-data keys:\n"
        "  generate.batch                                       (caf)\n"
        "  model.n_modes, model.temp_K, model.phi,\n"
        "  generate.batch, generate.dt_fs, generate.t_final_fs,\n"
        "  generate.taylor_order, generate.dim_cap              (rubrene)\n"
        "  data.plain, data.echo, data.xy8 | data.series        (outputs)\n";
    const std::string train_keys =
        std::string(common_keys) +
        "train keys:\n"
        "  fit.batch, fit.epochs, fit.lr[], fit.freeze_noise, fit.log_every\n"
        "  fit.dt_fs, fit.std_weight, fit.fit_horizon_fs,\n"
        "  model.n_modes, model.temp_K, model.phi               (rubrene)\n"
        "  data.plain, data.echo, data.xy8 | data.series        (inputs)\n";
    const std::string sim_keys =
        std::string(common_keys) +
        "simulate keys:\n"
        "  simulate.batch, simulate.dt_ms, simulate.t_final_ms,\n"
        "  simulate.sample_every_ms | simulate.sample_times_ms[]  (caf/bell)\n"
        "  simulate.scheme                                        (caf)\n"
        "  model.separation_um, model.pinned, model.with_noise,\n"
        "  model.with_xy8                                         (bell)\n"
        "  simulate.batch, simulate.dt_fs, simulate.t_final_fs,\n"
        "  simulate.sample_every_fs | simulate.sample_times_fs[],\n"
        "  model.n_modes, model.temp_K, model.phi                 (rubrene)\n";
    const std::string mob_keys =
        std::string(common_keys) +
        "mobility keys:\n"
        "  model.n_modes, model.temp_K\n"
        "  lattice.sites, lattice.boundary_sites, lattice.batch,\n"
        "  lattice.dt_fs, lattice.t_final_fs, lattice.sample_every_fs,\n"
        "  lattice.with_noise, lattice.with_jumps\n";

    struct Sub {
        CLI::App* app = nullptr;
        Flags flags;
        CLI::Option* seed_opt = nullptr;
    };
    Sub subs[4];
    const char* names[4] = {"gen-data", "train", "simulate", "mobility"};
    const char* descs[4] = {
        "generate synthetic datasets (writes dataset CSVs + manifest)",
        "fit model parameters to datasets (writes manifest + loss history)",
        "run an ensemble and export observable statistics",
        "lattice transport run, MSD linear fit, mobility report"};
    const std::string* keys[4] = {&gen_keys, &train_keys, &sim_keys, &mob_keys};
    for (int i = 0; i < 4; ++i) {
        Sub& s = subs[i];
        s.app = app.add_subcommand(names[i], descs[i]);
        s.app->add_option("--config", s.flags.config,
                          "JSON config merged over the preset");
        s.app->add_option("--preset", s.flags.preset,
                          "caf-synth | caf-fit | bell-ideal | bell-md | "
                          "rubrene-300K-small | rubrene-300K-full");
        s.seed_opt = s.app->add_option("--seed", s.flags.seed,
                                       "master RNG seed (default 1)");
        s.app->add_option("--out", s.flags.out, "output directory");
        s.app->add_option("--threads", s.flags.threads,
                          "worker threads (default: DIQCD_THREADS or 1)");
        s.app->add_option("--manifest", s.flags.manifest,
                          "rerun exactly from a previous run's manifest");
        if (i == 1)
            s.app->add_option("--resume", s.flags.resume,
                              "continue training from a training manifest");
        if (i == 2 || i == 3)
            s.app->add_option("--params", s.flags.params,
                              "load parameter values from a manifest "
                              "(e.g. a training result)");
        s.app->footer(*keys[i]);
    }

    CLI11_PARSE(app, argc, argv);

    try {
        for (int i = 0; i < 4; ++i)
            if (subs[i].app->parsed())
                run_command(names[i], subs[i].flags,
                            subs[i].seed_opt->count() > 0);
        return 0;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const RegimeError& e) {
        std::fprintf(stderr, "regime rejection: %s\n", e.what());
        return 4;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const json::exception& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
