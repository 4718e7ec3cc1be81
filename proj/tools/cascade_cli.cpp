// cascade: command-line driver for the SSM/LM cascade workflow.
//
//   simulate -> ingest -> eval-backend / rank -> calibrate -> route -> report
//   partition -> export-manifest -> (external training) -> register-assm

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "cascade/augment.hpp"
#include "cascade/config.hpp"
#include "cascade/error.hpp"
#include "cascade/metrics.hpp"
#include "cascade/router.hpp"
#include "cascade/simulator.hpp"
#include "cascade/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cascade;

namespace {

struct Options {
    std::string config;
    std::string out;
    std::string split;
    std::string plan;
    std::optional<double> tau;
    std::optional<std::uint64_t> seed;
    int jobs = -1;
    bool json_summary = false;
    bool skip_errors = false;

    // subcommand specific
    std::vector<std::string> backends;
    std::string grid;
    std::optional<double> budget;
    bool full = false;
    std::string variant = "ea";
    std::string id;
    std::string predictions;
    std::string manifest;
    std::string provenance;
    std::string traces;
    std::string preset;
    std::string world;
};

/// Shared state for config-driven subcommands.
struct Session {
    RunConfig cfg;
    fs::path out;
    ExecOptions exec;

    explicit Session(const Options& o) : cfg(RunConfig::load(o.config)) {
        out = o.out.empty() ? cfg.output_dir : fs::path(o.out);
        if (o.seed) cfg.seed = *o.seed;
        if (o.tau) cfg.tau = *o.tau;
        exec.jobs = o.jobs >= 0 ? o.jobs : cfg.jobs;
    }

    std::optional<SliceAssignment> slices(const DatasetBundle& bundle) const {
        if (!bundle.has_split(kTrain)) return std::nullopt;
        return assign_slices(bundle, cfg.slices ? *cfg.slices : default_slice_boundaries(bundle));
    }

    /// Plan lookup order: --plan, [plan].file, calibrated plan, ranked plan,
    /// otherwise rank on the validation split now.
    CascadePlan plan(const Options& o, const Registry& reg, const DatasetBundle& bundle) const {
        std::optional<CascadePlan> p;
        if (!o.plan.empty()) {
            p = load_plan(o.plan);
        } else if (cfg.plan_file) {
            p = load_plan(*cfg.plan_file);
        } else if (fs::exists(out / "plan_calibrated.toml")) {
            p = load_plan(out / "plan_calibrated.toml");
        } else if (fs::exists(out / "plan.toml")) {
            p = load_plan(out / "plan.toml");
        } else {
            p = build_plan(reg, bundle, kVal, cfg.tau, exec);
        }
        if (o.tau) *p = p->with_global_tau(*o.tau);
        p->validate(reg);
        return *p;
    }
};

void summarize(const Options& o, const std::string& command, const json& fields, const std::string& text) {
    if (o.json_summary) {
        json j = fields;
        j["command"] = command;
        j["status"] = "ok";
        std::cout << j.dump() << "\n";
    } else {
        std::cout << command << ": " << text << "\n";
    }
}

std::vector<double> parse_grid(const std::string& text) {
    std::vector<double> grid;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            grid.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::logic_error&) {
            throw Error(ErrorKind::InvalidConfig, "bad grid value '" + item + "'");
        }
    }
    return grid;
}

// ---------------------------------------------------------------------------

int cmd_ingest(const Options& o) {
    Session s(o);
    const auto bundle = s.cfg.load_bundle();
    json splits = json::object();
    for (const auto& [name, ex] : bundle.splits) splits[name] = ex.size();
    json j = {{"dataset_hash", bundle.provenance.content_hash}, {"labels", bundle.label_space.labels()}, {"splits", splits}};
    if (auto sl = s.slices(bundle)) {
        json per_class = json::object();
        for (std::size_t c = 0; c < sl->per_class.size(); ++c) {
            per_class[bundle.label_space.label(c)] = {{"slice", to_string(sl->per_class[c])}, {"train_count", sl->train_counts[c]}};
        }
        j["slices"] = {{"t_head", sl->boundaries.t_head}, {"t_tail", sl->boundaries.t_tail}, {"classes", per_class}};
    }
    write_file(s.out / "dataset_summary.json", j.dump(2) + "\n");
    std::size_t total = 0;
    for (const auto& [name, ex] : bundle.splits) total += ex.size();
    summarize(o, "ingest", {{"examples", total}, {"labels", bundle.label_space.size()}, {"dataset_hash", bundle.provenance.content_hash}},
              fmt::format("{} examples, K={}, hash {}", total, bundle.label_space.size(), bundle.provenance.content_hash.substr(0, 12)));
    return 0;
}

int cmd_eval(const Options& o) {
    Session s(o);
    const auto bundle = s.cfg.load_bundle();
    const auto reg = s.cfg.build_registry(bundle);
    const std::string split = o.split.empty() ? std::string(kVal) : o.split;
    const auto ids = o.backends.empty() ? reg.ids() : o.backends;
    json rows = json::array();
    std::string text;
    for (const auto& id : ids) {
        const auto ev = evaluate_backend(reg.get(id), bundle, split, s.exec);
        rows.push_back({{"backend_id", ev.backend_id}, {"split", ev.split}, {"accuracy", ev.accuracy}, {"n", ev.n}, {"correct", ev.correct}});
        text += fmt::format("{}{}={:.2f}%", text.empty() ? "" : ", ", id, 100.0 * ev.accuracy);
    }
    json j = {{"dataset_hash", bundle.provenance.content_hash}, {"evaluations", rows}};
    write_file(s.out / fmt::format("eval_{}.json", split), j.dump(2) + "\n");
    summarize(o, "eval-backend", {{"evaluations", rows}}, fmt::format("split {}: {}", split, text));
    return 0;
}

int cmd_rank(const Options& o) {
    Session s(o);
    const auto bundle = s.cfg.load_bundle();
    const auto reg = s.cfg.build_registry(bundle);
    const std::string split = o.split.empty() ? std::string(kVal) : o.split;
    const auto plan = build_plan(reg, bundle, split, s.cfg.tau, s.exec);
    save_plan(plan, s.out / "plan.toml");
    json order = json::array();
    for (const auto& st : plan.stages) order.push_back({{"backend_id", st.backend_id}, {"accuracy", *st.accuracy}});
    json aug = json::array();
    for (const auto& st : plan.augmented) aug.push_back({{"backend_id", st.backend_id}, {"accuracy", *st.accuracy}});
    json j = {{"split", split}, {"specific_layer", order}, {"augmented_layer", aug}, {"terminal", plan.terminal_id},
              {"plan_hash", plan.hash()}, {"dataset_hash", bundle.provenance.content_hash}};
    write_file(s.out / "ranking.json", j.dump(2) + "\n");
    std::string text;
    for (const auto& st : plan.stages) text += (text.empty() ? "" : " > ") + st.backend_id;
    summarize(o, "rank", {{"order", order}, {"plan_hash", plan.hash()}}, text + " -> " + plan.terminal_id);
    return 0;
}

int cmd_calibrate(const Options& o) {
    Session s(o);
    const auto bundle = s.cfg.load_bundle();
    const auto reg = s.cfg.build_registry(bundle);
    Options no_tau = o;
    no_tau.tau.reset();
    CascadePlan skeleton;
    if (!o.plan.empty() || s.cfg.plan_file || fs::exists(s.out / "plan.toml")) {
        skeleton = o.plan.empty() ? (s.cfg.plan_file ? load_plan(*s.cfg.plan_file) : load_plan(s.out / "plan.toml"))
                                  : load_plan(o.plan);
    } else {
        skeleton = build_plan(reg, bundle, kVal, s.cfg.tau, s.exec);
    }
    const auto grid = o.grid.empty() ? s.cfg.grid : parse_grid(o.grid);
    const auto budget = o.budget ? o.budget : s.cfg.lm_budget;
    const auto cal = calibrate_thresholds(skeleton, reg, bundle, grid, budget, kVal, s.exec);
    save_plan(cal.plan, s.out / "plan_calibrated.toml");
    json sweep = json::array();
    for (const auto& p : cal.sweep) {
        sweep.push_back({{"tau", p.tau}, {"accuracy", p.accuracy()}, {"lm_proportion", p.lm_proportion()},
                         {"correct", p.correct}, {"lm_visits", p.lm_visits}, {"n", p.n}});
    }
    const auto& best = cal.sweep[cal.selected];
    json j = {{"split", kVal}, {"sweep", sweep}, {"selected_tau", best.tau}, {"lm_budget", budget ? json(*budget) : json(nullptr)},
              {"plan_hash", cal.plan.hash()}, {"dataset_hash", bundle.provenance.content_hash}};
    write_file(s.out / "calibration.json", j.dump(2) + "\n");
    summarize(o, "calibrate", {{"tau", best.tau}, {"accuracy", best.accuracy()}, {"lm_proportion", best.lm_proportion()}},
              fmt::format("tau={} val accuracy {:.2f}% LM {:.2f}%", best.tau, 100 * best.accuracy(), 100 * best.lm_proportion()));
    return 0;
}

void write_route_outputs(const fs::path& out, const std::string& split, const RouteResult& r) {
    std::string traces;
    for (const auto& t : r.traces) traces += to_jsonl(t) + "\n";
    write_file(out / fmt::format("traces_{}.jsonl", split), traces);
    write_file(out / fmt::format("report_{}.json", split), render_json(r.report));
    write_file(out / fmt::format("report_{}.md", split), render_markdown(r.report));
    const auto failures_path = out / fmt::format("failures_{}.jsonl", split);
    if (!r.failures.empty()) {
        std::string text;
        for (const auto& f : r.failures) {
            text += json{{"example_id", f.example_id}, {"backend", f.backend_id}, {"error", f.error}}.dump() + "\n";
        }
        write_file(failures_path, text);
    } else if (fs::exists(failures_path)) {
        fs::remove(failures_path);
    }
}

int cmd_route(const Options& o) {
    Session s(o);
    const auto bundle = s.cfg.load_bundle();
    const auto reg = s.cfg.build_registry(bundle);
    const std::string split = o.split.empty() ? std::string(kTest) : o.split;
    const auto plan = s.plan(o, reg, bundle);
    RouteOptions ro{s.exec, o.skip_errors};
    const auto result = route_dataset(plan, reg, bundle, split, s.slices(bundle), ro);
    write_route_outputs(s.out, split, result);
    const auto& lm = result.report.backend(plan.terminal_id);
    summarize(o, "route",
              {{"split", split}, {"n", result.report.n}, {"accuracy", result.report.overall_accuracy},
               {"lm_proportion", lm.proportion}, {"failures", result.failures.size()}, {"plan_hash", plan.hash()}},
              fmt::format("{} examples, accuracy {:.2f}%, LM {:.2f}%{}", result.report.n, 100 * result.report.overall_accuracy,
                          lm.proportion, result.failures.empty() ? "" : fmt::format(", {} failed", result.failures.size())));
    return 0;
}

int cmd_report(const Options& o) {
    Session s(o);
    const auto bundle = s.cfg.load_bundle();
    const auto reg = s.cfg.build_registry(bundle);
    const std::string split = o.split.empty() ? std::string(kTest) : o.split;
    const auto plan = s.plan(o, reg, bundle);
    const fs::path traces_path = o.traces.empty() ? s.out / fmt::format("traces_{}.jsonl", split) : fs::path(o.traces);
    const auto traces = load_traces(traces_path, bundle.label_space);
    // Reports may cover a subset when the route skipped failures.
    std::map<std::string_view, const LabeledExample*> by_id;
    for (const auto& ex : bundle.split(split)) by_id.emplace(ex.id, &ex);
    std::vector<LabeledExample> examples;
    for (const auto& t : traces) {
        auto it = by_id.find(t.example_id);
        if (it == by_id.end()) throw Error(ErrorKind::TraceDatasetMismatch, "trace for '" + t.example_id + "' not in split " + split);
        examples.push_back(*it->second);
    }
    auto report = compute_report(traces, examples, plan, s.slices(bundle), reg.cost_profiles());
    report.split = split;
    report.dataset_hash = bundle.provenance.content_hash;
    write_file(s.out / fmt::format("report_{}.json", split), render_json(report));
    write_file(s.out / fmt::format("report_{}.md", split), render_markdown(report));
    summarize(o, "report", {{"split", split}, {"n", report.n}, {"accuracy", report.overall_accuracy}},
              fmt::format("{} traces, accuracy {:.2f}%", report.n, 100 * report.overall_accuracy));
    return 0;
}

int cmd_partition(const Options& o) {
    Session s(o);
    const auto bundle = s.cfg.load_bundle();
    const auto reg = s.cfg.build_registry(bundle);
    const auto plan = s.plan(o, reg, bundle);
    const auto& train = bundle.split(kTrain);

    IdSet ssm_errors;
    if (s.cfg.partition_mode == PartitionMode::Routed) {
        ssm_errors = routed_ssm_errors(specific_layer_labels(plan, reg, train, s.exec), bundle);
    } else {
        std::vector<LabelMap> per_ssm;
        for (const auto& st : plan.stages) per_ssm.push_back(backend_labels(reg.get(st.backend_id), train, s.exec));
        ssm_errors = conjunctive_ssm_errors(per_ssm, bundle);
    }
    // LM re-evaluation only where the Specific Layer erred.
    std::vector<LabeledExample> to_check;
    for (const auto& ex : train) {
        if (ssm_errors.contains(ex.id)) to_check.push_back(ex);
    }
    const auto& lm = reg.get(plan.terminal_id);
    auto partition = partition_from_errors(ssm_errors, backend_labels(lm, to_check, s.exec), bundle);
    if (o.full) partition = with_full_lm_errors(std::move(partition), partition_full(backend_labels(lm, train, s.exec), bundle));

    json j = json::parse(partition.to_json());
    j["partition_hash"] = partition.hash();
    j["plan_hash"] = plan.hash();
    j["dataset_hash"] = bundle.provenance.content_hash;
    j["mode"] = s.cfg.partition_mode == PartitionMode::Routed ? "routed" : "conjunctive";
    write_file(s.out / "partition.json", j.dump(2) + "\n");
    summarize(o, "partition",
              {{"underfitted", partition.underfitted_ids.size()}, {"fitted", partition.fitted_ids.size()},
               {"ssm_errors", partition.ssm_error_ids.size()}, {"lm_errors", partition.lm_error_ids.size()},
               {"partition_hash", partition.hash()}},
              fmt::format("underfitted {} / fitted {} (SSM errors {}, LM errors {}{})", partition.underfitted_ids.size(),
                          partition.fitted_ids.size(), partition.ssm_error_ids.size(), partition.lm_error_ids.size(),
                          o.full ? ", full scope" : " within SSM errors"));
    return 0;
}

int cmd_export(const Options& o) {
    Session s(o);
    const auto bundle = s.cfg.load_bundle();
    const auto variant = parse_manifest_variant(o.variant);
    const auto pj = json::parse(read_file(s.out / "partition.json"));
    const auto partition = PartitionResult::from_json(pj.dump());
    if (pj.value("dataset_hash", "") != bundle.provenance.content_hash) {
        throw Error(ErrorKind::ProvenanceMismatch, "partition.json was computed on a different dataset");
    }
    const auto path = s.out / fmt::format("manifest_{}.jsonl", to_string(variant));
    const auto r = export_training_manifest(partition, bundle, variant, s.cfg.task, pj.value("plan_hash", ""), path);
    if (r.empty_warning) std::cerr << "warning: EmptyManifest: no examples selected; manifest written with header only\n";
    summarize(o, "export-manifest",
              {{"variant", to_string(variant)}, {"rows", r.manifest.rows.size()}, {"provenance", r.manifest.provenance_hash()},
               {"path", path.string()}},
              fmt::format("{} rows -> {} (provenance {})", r.manifest.rows.size(), path.string(), r.manifest.provenance_hash()));
    return 0;
}

int cmd_register(const Options& o) {
    Session s(o);
    const auto bundle = s.cfg.load_bundle();
    const auto manifest = load_manifest(o.manifest);
    BackendDescriptor desc;
    desc.id = o.id;
    desc.config = OfflineConfig{fs::absolute(o.predictions)};
    const std::string provenance = o.provenance.empty() ? manifest.provenance_hash() : o.provenance;
    const std::vector<TrainingManifest> known{manifest};
    desc = register_augmented_model(std::move(desc), provenance, known, bundle.label_space);
    const std::string snippet = fmt::format(
        "[[backend]]\nid = \"{}\"\nkind = \"offline\"\nlayer = \"augmented\"\npredictions = \"{}\"\nmanifest = \"{}\"\n"
        "provenance = \"{}\"\n",
        desc.id, fs::absolute(o.predictions).lexically_normal().string(), fs::absolute(o.manifest).lexically_normal().string(),
        provenance);
    write_file(s.out / fmt::format("assm_{}.toml", desc.id), snippet);
    summarize(o, "register-assm", {{"backend_id", desc.id}, {"provenance", provenance}},
              fmt::format("{} registered as augmented (append out/assm_{}.toml to the config)", desc.id, desc.id));
    return 0;
}

int cmd_simulate(const Options& o) {
    WorldConfig wc;
    if (!o.world.empty()) {
        wc = WorldConfig::from_toml(read_file(o.world));
        if (o.seed) wc.seed = *o.seed;
    } else {
        wc = preset_world(o.preset.empty() ? "table3like" : o.preset, o.seed.value_or(7));
    }
    const fs::path out = o.out.empty() ? fs::path("sim_" + wc.name) : fs::path(o.out);
    ExecOptions exec;
    if (o.jobs >= 0) exec.jobs = o.jobs;
    const auto world = generate_world(wc, exec);
    write_file(out / "world.toml", wc.to_toml());
    save_dataset(world.bundle, out / "data", DatasetSchema::standard());
    const auto reg = world.registry();

    const auto bounds = default_slice_boundaries(world.bundle);
    std::string cfg = fmt::format("task = \"{}\"\n\n[dataset]\ndir = \"data\"\n\n[slices]\nt_head = {}\nt_tail = {}\n\n"
                                  "[run]\noutput_dir = \"out\"\ncache_dir = \"cache\"\nseed = {}\ntau = 0.8\n\n"
                                  "[calibration]\ngrid = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]\n",
                                  wc.name, bounds.t_head, bounds.t_tail, wc.seed);
    if (wc.name == "table3like") cfg += "lm_budget = 0.35\n";
    for (const auto& d : world.backends) {
        write_file(out / "predictions" / (d.id + ".jsonl"), emit_predictions(reg.get(d.id), world.bundle, exec));
        cfg += fmt::format("\n[[backend]]\nid = \"{}\"\nkind = \"offline\"\nlayer = \"{}\"\npredictions = \"predictions/{}.jsonl\"\n"
                           "[backend.cost]\nlatency_ms_per_call = {}\nmemory_mb = {}\ndollars_per_1k_calls = {}\n",
                           d.id, to_string(d.layer), d.id, d.cost.latency_ms_per_call, d.cost.memory_mb,
                           d.cost.dollars_per_1k_calls);
    }
    write_file(out / "config.toml", cfg);
    summarize(o, "simulate", {{"world", wc.name}, {"seed", wc.seed}, {"dataset_hash", world.bundle.provenance.content_hash},
                              {"out", out.string()}},
              fmt::format("world {} seed {} -> {} (dataset {})", wc.name, wc.seed, out.string(),
                          world.bundle.provenance.content_hash.substr(0, 12)));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SSM/LM cascade toolkit: rank, calibrate, route, partition and report"};
    app.require_subcommand(1);
    Options o;

    auto common = [&](CLI::App* sub, bool needs_config = true) {
        auto* c = sub->add_option("--config,-c", o.config, "run configuration (TOML)");
        if (needs_config) c->required()->check(CLI::ExistingFile);
        sub->add_option("--out,-o", o.out, "output directory (overrides run.output_dir)");
        sub->add_option("--seed", o.seed, "seed override");
        sub->add_option("--jobs,-j", o.jobs, "worker cap")->check(CLI::NonNegativeNumber);
        sub->add_flag("--json", o.json_summary, "print the summary as one JSON line");
    };
    auto with_plan = [&](CLI::App* sub) {
        sub->add_option("--plan", o.plan, "plan file (TOML)")->check(CLI::ExistingFile);
        sub->add_option("--tau", o.tau, "global Specific Layer threshold override")->check(CLI::Range(0.0, 1.0));
    };

    auto* ingest = app.add_subcommand("ingest", "load and validate the dataset, assign slices");
    common(ingest);
    auto* eval = app.add_subcommand("eval-backend", "accuracy of backends on a split");
    common(eval);
    eval->add_option("--backend,-b", o.backends, "backend id (repeatable; default all)");
    eval->add_option("--split", o.split, "split name (default val)");
    auto* rank = app.add_subcommand("rank", "rank SSMs by validation accuracy and write plan.toml");
    common(rank);
    rank->add_option("--split", o.split, "ranking split (default val)");
    rank->add_option("--tau", o.tau, "threshold for every stage")->check(CLI::Range(0.0, 1.0));
    auto* calibrate = app.add_subcommand("calibrate", "grid-search the shared threshold on the validation split");
    common(calibrate);
    calibrate->add_option("--plan", o.plan, "plan skeleton")->check(CLI::ExistingFile);
    calibrate->add_option("--grid", o.grid, "comma-separated thresholds");
    calibrate->add_option("--budget", o.budget, "max LM fraction in [0,1]")->check(CLI::Range(0.0, 1.0));
    auto* route = app.add_subcommand("route", "route a split through the cascade");
    common(route);
    with_plan(route);
    route->add_option("--split", o.split, "split name (default test)");
    route->add_flag("--skip-errors", o.skip_errors, "record failing examples instead of aborting");
    auto* partition = app.add_subcommand("partition", "split train into fitted / underfitted sets");
    common(partition);
    with_plan(partition);
    partition->add_flag("--full", o.full, "also evaluate the LM on all of train (needed for ea_full)");
    auto* exportm = app.add_subcommand("export-manifest", "write the training manifest for external fine-tuning");
    common(exportm);
    exportm->add_option("--variant", o.variant, "ea or ea_full")->check(CLI::IsMember({"ea", "ea_full"}));
    auto* reg = app.add_subcommand("register-assm", "validate an augmented model's predictions against its manifest");
    common(reg);
    reg->add_option("--id", o.id, "backend id")->required();
    reg->add_option("--predictions", o.predictions, "offline predictions JSONL")->required()->check(CLI::ExistingFile);
    reg->add_option("--manifest", o.manifest, "manifest the model was trained on")->required()->check(CLI::ExistingFile);
    reg->add_option("--provenance", o.provenance, "provenance hash reported by the trainer");
    auto* report = app.add_subcommand("report", "recompute a report from a traces file");
    common(report);
    with_plan(report);
    report->add_option("--split", o.split, "split name (default test)");
    report->add_option("--traces", o.traces, "traces JSONL (default out/traces_<split>.jsonl)");
    auto* simulate = app.add_subcommand("simulate", "generate a synthetic world with offline predictions");
    common(simulate, false);
    simulate->add_option("--preset", o.preset, "preset world")->check(CLI::IsMember(preset_names()));
    simulate->add_option("--world", o.world, "world config (TOML)")->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*ingest) return cmd_ingest(o);
        if (*eval) return cmd_eval(o);
        if (*rank) return cmd_rank(o);
        if (*calibrate) return cmd_calibrate(o);
        if (*route) return cmd_route(o);
        if (*partition) return cmd_partition(o);
        if (*exportm) return cmd_export(o);
        if (*reg) return cmd_register(o);
        if (*report) return cmd_report(o);
        if (*simulate) return cmd_simulate(o);
    } catch (const Error& e) {
        if (o.json_summary) {
            std::cout << json{{"status", "error"}, {"error", to_string(e.kind())}, {"message", e.what()}}.dump() << "\n";
        }
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
