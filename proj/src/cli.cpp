#include "stratum/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "stratum/construct.hpp"
#include "stratum/equilibria.hpp"
#include "stratum/error.hpp"
#include "stratum/io.hpp"
#include "stratum/probe.hpp"
#include "stratum/random.hpp"
#include "stratum/simulate.hpp"
#include "stratum/spectral.hpp"

namespace stratum {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
    std::uint64_t seed = 0;
    double rank_tol = kDefaultRankTol;
    int workers = 1;
    std::string out_dir = "stratum-out";
};

// Collects input/output hashes for the manifest. Outputs are written
// atomically as they are produced; the manifest goes last.
class Run {
public:
    Run(const Globals& g, std::string command, std::vector<std::string> argv)
        : g_(g), command_(std::move(command)), argv_(std::move(argv)),
          start_(std::chrono::steady_clock::now()) {
        fs::create_directories(g_.out_dir);
    }

    void input(const fs::path& p) {
        if (!fs::is_regular_file(p)) throw InputError("cannot read '" + p.string() + "'");
        inputs_[p.string()] = io::sha256_file(p);
    }

    void output(const std::string& name, const std::string& contents) {
        io::write_file_atomic(fs::path(g_.out_dir) / name, contents);
        outputs_[name] = io::sha256_hex(contents);
    }

    void output(const std::string& name, const json& j) { output(name, j.dump(2) + "\n"); }

    void finish() {
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        json m;
        m["tool"] = "stratum";
        m["version"] = kVersion;
        m["command"] = command_;
        m["argv"] = argv_;
        m["seed"] = g_.seed;
        m["rank_tol"] = g_.rank_tol;
        m["workers"] = g_.workers;
        m["inputs"] = inputs_;
        m["outputs"] = outputs_;
        m["duration_seconds"] = seconds;
        io::write_file_atomic(fs::path(g_.out_dir) / "manifest.json", m.dump(2) + "\n");
    }

private:
    const Globals& g_;
    std::string command_;
    std::vector<std::string> argv_;
    std::chrono::steady_clock::time_point start_;
    std::map<std::string, std::string> inputs_;
    std::map<std::string, std::string> outputs_;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string join(const Vector& v, const char* f = "%.6g") {
    std::string s;
    for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? " " : "") + fmt(f, v[i]);
    return s;
}

Vector to_vector(const std::vector<double>& v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// ---- construct -----------------------------------------------------------

struct ConstructArgs {
    int p = 0, z = 0, m = 0;
    int samples = 64;
    double c_max = 10.0;
};

int cmd_construct(const Globals& g, const ConstructArgs& a, Run& run, std::ostream& out,
                  std::ostream& err) {
    if (a.m > a.p) throw InputError("--m must not exceed --p");
    ConstructOptions opts;
    opts.c_max = a.c_max;
    const auto ca = construct_relu_attractor(a.p, a.z, a.m, g.seed, opts);
    const auto v = verify_construction(ca, a.samples, g.seed);
    run.output("system.json", to_json(ca));
    run.output("verification.json", to_json(v));
    const int n = ca.n();
    out << "constructed n = " << n << " (p = " << a.p << ", z = " << a.z << "), m = " << a.m << "\n";
    out << "rank = " << v.expected_rank << " = n - m\n";
    out << "verification: " << (v.passed() ? "passed" : "FAILED") << " over " << v.n_samples
        << " samples, max residual " << fmt("%.3g", v.max_residual) << ", max |zero eigenvalue| "
        << fmt("%.3g", v.max_zero_eigenvalue) << ", max other real part "
        << fmt("%.3g", v.max_nonzero_real_part) << "\n";
    if (!v.passed()) {
        for (const auto& f : v.failures)
            err << "sample " << f.sample << ": " << f.check << " (" << f.value << ")\n";
        return kExitFailure;
    }
    return kExitOk;
}

// ---- analyze -------------------------------------------------------------

struct AnalyzeArgs {
    std::string system;
    int starts = 64;
    std::optional<double> lo, hi;
};

std::string equilibrium_table(const std::vector<EquilibriumReport>& reports) {
    std::string t = "  #  residual    dim  stability  marginal  kink  point\n";
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto& r = reports[i];
        char buf[128];
        std::snprintf(buf, sizeof buf, "%3zu  %-10.3g  %3d  %-9s  %8d  %-4s  ", i, r.residual,
                      r.attractor_dim, std::string(to_string(r.stability)).c_str(),
                      r.marginal_count, r.near_kink ? "yes" : "no");
        t += buf + join(r.point) + "\n";
    }
    return t;
}

int cmd_analyze(const Globals& g, const AnalyzeArgs& a, Run& run, std::ostream& out) {
    run.input(a.system);
    json j;
    try {
        j = json::parse(io::read_file(a.system));
    } catch (const json::exception& e) {
        throw InputError("'" + a.system + "' is not valid JSON: " + e.what());
    }
    const auto sys = system_from_json(j);
    const auto n = sys.n();

    Box box = Box::uniform(n, -3.0, 3.0);
    std::string box_source = "default";
    if (a.lo || a.hi) {
        box = Box::uniform(n, a.lo.value_or(-3.0), a.hi.value_or(3.0));
        box_source = "flags";
    } else if (j.contains("ground_truth")) {
        box = constructed_from_json(j).state_box();
        box_source = "ground_truth";
    }
    box.validate();
    if (a.starts < 1) throw InputError("--starts must be positive");

    SolverOptions opts;
    opts.rank_tol = g.rank_tol;
    opts.workers = g.workers;
    const auto reports = find_equilibria(sys, box, a.starts, g.seed, opts);

    json r;
    r["box"] = {{"lower", io::vector_to_json(box.lower)},
                {"upper", io::vector_to_json(box.upper)},
                {"source", box_source}};
    r["starts"] = a.starts;
    r["count"] = reports.size();
    r["equilibria"] = to_json(reports);
    const auto table = equilibrium_table(reports);
    run.output("equilibria.json", r);
    run.output("equilibria.txt", table);
    out << reports.size() << " equilibria from " << a.starts << " starts\n" << table;
    return kExitOk;
}

// ---- simulate ------------------------------------------------------------

struct SimulateArgs {
    std::string system;
    bool stratified = false;
    bool control = false;
    int steps = 0;
    std::optional<double> t_end;
    double h = 0.01;
    std::vector<double> x0;
    std::vector<long> snapshots;
    double theta = 0.01;
    double eps = 1e-9;
};

int cmd_simulate(const Globals& g, const SimulateArgs& a, Run& run, std::ostream& out,
                 std::ostream& err) {
    const int sources = int(!a.system.empty()) + int(a.stratified) + int(a.control);
    if (sources != 1) throw InputError("give exactly one of --system, --stratified, --control");

    std::optional<DynamicalSystem> sys;
    if (!a.system.empty()) {
        run.input(a.system);
        sys = load_system(a.system);
    } else {
        sys = a.stratified ? make_stratified_map(g.seed) : make_uniform_map(g.seed);
        run.output("system.json", to_json(*sys));
    }
    const auto n = sys->n();

    Vector x0;
    if (!a.x0.empty()) {
        x0 = to_vector(a.x0);
        if (x0.size() != n) throw InputError("--x0 needs " + std::to_string(n) + " values");
    } else {
        Rng rng = make_rng(g.seed, "x0");
        x0 = gaussian_matrix(n, 1, rng).col(0);
    }

    Trajectory traj;
    try {
        if (is_continuous(sys->form())) {
            if (!a.t_end) throw InputError("continuous systems need --t-end");
            traj = integrate_rk4(*sys, x0, *a.t_end, a.h);
        } else {
            if (a.steps < 1) throw InputError("discrete maps need --steps >= 1");
            traj = iterate_map(*sys, x0, a.steps);
        }
    } catch (const DivergenceError& e) {
        err << "last finite state: " << join(e.last_finite_state(), "%.17g") << "\n";
        throw;
    }

    for (long s : a.snapshots)
        if (s < 0 || s >= static_cast<long>(traj.size()))
            throw InputError("snapshot " + std::to_string(s) + " is outside the trajectory");

    const auto report = slow_fast_report(traj, a.theta, a.eps);
    run.output("trajectory.csv", trajectory_to_csv(traj));
    run.output("slowfast.json", to_json(report));
    if (!a.snapshots.empty()) {
        std::string csv = "step,t";
        for (Eigen::Index i = 0; i < n; ++i) csv += ",x_" + std::to_string(i + 1);
        csv += "\n";
        for (long s : a.snapshots) {
            csv += std::to_string(s) + "," + io::format_double(traj.times[s]);
            for (Eigen::Index i = 0; i < n; ++i) csv += "," + io::format_double(traj.states[s][i]);
            csv += "\n";
        }
        run.output("snapshots.csv", csv);
    }
    out << "steps " << traj.size() - 1 << ", collapse_step " << report.collapse_step
        << ", terminal_drift " << fmt("%.6g", report.terminal_drift) << ", collapse_speed "
        << fmt("%.6g", report.collapse_speed) << ", converged "
        << (report.converged ? "true" : "false") << "\n";
    out << "endpoint " << join(report.endpoint, "%.9g") << "\n";
    return kExitOk;
}

// ---- probe ---------------------------------------------------------------

struct ProbeArgs {
    bool synthetic = false;
    std::vector<std::string> mnist;
    int classes = 3;
    int dim = 32;
    int per_class = 1000;
    double separation = 8.0;
    long max_items = 1000;
    int holdout_digit = 9;
    int noise_digit = -1;
    std::vector<int> hidden{128, 64};
    int epochs = 5;
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    int batch = 32;
    std::string jacobian_at = "logits";
    int samples_per_group = 50;
};

struct ProbeData {
    probe::Dataset train, held_out, natural_noise;
    json info;
};

ProbeData synthetic_probe_data(const Globals& g, const ProbeArgs& a) {
    if (a.classes < 2) throw InputError("--classes must be at least 2");
    // Two extra clusters stand in for an unseen class and a natural-noise source.
    const auto all = probe::synth_blobs(a.classes + 2, a.dim, a.per_class, a.separation,
                                        g.seed);
    const int C = a.classes;
    ProbeData d;
    d.train = all.filter([C](int l) { return l < C; });
    d.train.num_classes = C;
    d.held_out = all.filter([C](int l) { return l == C; });
    d.natural_noise = all.filter([C](int l) { return l == C + 1; });
    d.info = {{"source", "synthetic"}, {"classes", C},  {"dim", a.dim},
              {"per_class", a.per_class}, {"separation", a.separation}};
    return d;
}

ProbeData mnist_probe_data(const ProbeArgs& a, Run& run) {
    for (const auto& p : a.mnist) run.input(p);
    const auto all = probe::load_idx(a.mnist[0], a.mnist[1], a.max_items);
    const int hold = a.holdout_digit, noise = a.noise_digit;
    std::set<int> kept;
    for (int l : all.labels)
        if (l != hold && l != noise) kept.insert(l);
    if (kept.size() < 2) throw InputError("fewer than two training classes remain");
    // Training labels are renumbered densely so the output layer has one
    // logit per class actually trained on.
    std::map<int, int> remap;
    for (int l : kept) remap.emplace(l, static_cast<int>(remap.size()));
    ProbeData d;
    d.train = all.filter([&](int l) { return kept.count(l) > 0; });
    for (auto& l : d.train.labels) l = remap.at(l);
    d.train.num_classes = static_cast<int>(kept.size());
    d.held_out = all.filter([hold](int l) { return l == hold; });
    d.natural_noise = all.filter([noise](int l) { return noise >= 0 && l == noise; });
    d.info = {{"source", "idx"},
              {"items", all.size()},
              {"holdout_digit", hold},
              {"noise_digit", noise},
              {"trained_digits", std::vector<int>(kept.begin(), kept.end())},
              {"held_out_items", d.held_out.size()}};
    return d;
}

int cmd_probe(const Globals& g, const ProbeArgs& a, Run& run, std::ostream& out) {
    if (a.synthetic == !a.mnist.empty()) throw InputError("give exactly one of --synthetic, --mnist");
    if (a.samples_per_group < 1) throw InputError("--samples-per-group must be positive");
    const auto target = probe::parse_jacobian_target(a.jacobian_at);
    auto data = a.synthetic ? synthetic_probe_data(g, a) : mnist_probe_data(a, run);

    std::vector<int> dims{static_cast<int>(data.train.dim())};
    for (int h : a.hidden) {
        if (h < 1) throw InputError("hidden layer widths must be positive");
        dims.push_back(h);
    }
    dims.push_back(data.train.num_classes);

    probe::TrainConfig cfg;
    cfg.learning_rate = a.lr;
    cfg.momentum = a.momentum;
    cfg.weight_decay = a.weight_decay;
    cfg.batch_size = a.batch;
    cfg.epochs = a.epochs;
    cfg.seed = g.seed;
    cfg.validate();

    const auto probes = probe::make_probe_samples(data.train, data.held_out, data.natural_noise,
                                                  a.samples_per_group, g.seed);
    probe::TinyNet net(dims, g.seed);
    const auto res = probe::train(net, data.train, cfg, probes, {}, target, g.workers);

    std::vector<probe::ProbeGroup> groups;
    for (auto c : {probe::ProbeCategory::train_class, probe::ProbeCategory::held_out_class,
                   probe::ProbeCategory::natural_noise, probe::ProbeCategory::random_noise}) {
        probe::ProbeGroup grp{std::string(to_string(c)), {}};
        for (const auto& p : probes)
            if (p.category == c) grp.samples.push_back(p.x);
        groups.push_back(std::move(grp));
    }
    const auto study =
        probe::stratification_study(res.net, groups, a.samples_per_group, target, g.workers);

    const double acc = probe::accuracy(res.net, data.train);
    json summary;
    summary["data"] = data.info;
    summary["layer_dims"] = dims;
    summary["train_items"] = data.train.size();
    summary["jacobian_at"] = a.jacobian_at;
    summary["train_accuracy"] = acc;
    summary["epoch_losses"] = res.epoch_losses;
    summary["checkpoints"] = res.trace.checkpoints;
    json groups_json = json::object();
    for (const auto& s : study.groups)
        groups_json[s.name] = {{"samples", s.count}, {"mean_cv", s.mean_cv},
                               {"median_cv", s.median_cv}, {"std_cv", s.std_cv}};
    summary["groups"] = groups_json;
    summary["warnings"] = study.warnings;
    summary["train_class_cv_trend"] =
        res.trace.mean_cv_by_checkpoint(probe::ProbeCategory::train_class);
    summary["random_noise_cv_trend"] =
        res.trace.mean_cv_by_checkpoint(probe::ProbeCategory::random_noise);

    run.output("cv_trace.csv", probe::cv_trace_to_csv(res.trace));
    run.output("stratification.csv", probe::study_summary_csv(study));
    run.output("stratification_samples.csv", probe::study_samples_csv(study));
    run.output("model.json", probe::to_json(res.net));
    run.output("summary.json", summary);

    out << "train accuracy " << fmt("%.4f", acc) << " after " << a.epochs << " epochs ("
        << data.train.size() << " items, " << data.train.num_classes << " classes)\n";
    for (const auto& s : study.groups)
        out << "  " << s.name << ": n = " << s.count << ", mean CV " << fmt("%.4f", s.mean_cv)
            << ", median " << fmt("%.4f", s.median_cv) << "\n";
    for (const auto& w : study.warnings) out << "  warning: " << w << "\n";
    return kExitOk;
}

// ---- svd-report ----------------------------------------------------------

struct SvdArgs {
    std::string matrix;
    std::string which = "W";
    std::vector<double> at;
};

int cmd_svd_report(const Globals& g, const SvdArgs& a, Run& run, std::ostream& out) {
    run.input(a.matrix);
    Matrix M;
    json meta = {{"file", fs::path(a.matrix).filename().string()}};
    if (fs::path(a.matrix).extension() == ".json") {
        const auto sys = load_system(a.matrix);
        if (a.which == "W") {
            M = sys.W();
        } else if (a.which == "A") {
            M = sys.A();
        } else if (a.which == "jacobian") {
            Vector x = a.at.empty() ? Vector::Zero(sys.n()) : to_vector(a.at);
            if (x.size() != sys.n()) throw InputError("--at needs " + std::to_string(sys.n()) + " values");
            M = residual_jacobian(sys, x).J;
            meta["at"] = io::vector_to_json(x);
        } else {
            throw InputError("--which must be W, A or jacobian");
        }
        meta["which"] = a.which;
    } else {
        M = io::read_csv_matrix(a.matrix);
    }
    const auto r = svd_spectrum(M, g.rank_tol);
    json j = to_json(r);
    j["source"] = meta;
    j["rows"] = M.rows();
    j["cols"] = M.cols();
    run.output("spectrum.json", j);
    out << M.rows() << "x" << M.cols() << " matrix: rank " << r.numerical_rank << " (tol "
        << fmt("%.3g", r.tol_used) << "), CV " << fmt("%.6g", r.cv) << ", max gap ratio "
        << fmt("%.6g", r.max_gap_ratio) << "\n";
    out << "singular values:";
    for (double s : r.singular_values) out << " " << fmt("%.6g", s);
    out << "\n";
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Continuous-attractor and Jacobian-spectrum experiments", "stratum"};
    app.fallthrough();
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    Globals g;
    app.add_option("--seed", g.seed, "Root seed for every random sub-stream");
    app.add_option("--rank-tol", g.rank_tol, "Relative singular-value threshold for rank")
        ->check(CLI::PositiveNumber);
    app.add_option("--workers", g.workers, "Worker threads for batch work")
        ->check(CLI::Range(1, 1024));
    app.add_option("--out-dir", g.out_dir, "Directory for output files");

    ConstructArgs ca;
    auto* construct = app.add_subcommand("construct", "Build a relu system with a known attractor");
    construct->add_option("--p", ca.p, "Active block size")->required()->check(CLI::PositiveNumber);
    construct->add_option("--z", ca.z, "Silent block size")->required()->check(CLI::PositiveNumber);
    construct->add_option("--m", ca.m, "Attractor dimension")->required()->check(CLI::PositiveNumber);
    construct->add_option("--samples", ca.samples, "Verification samples")->check(CLI::PositiveNumber);
    construct->add_option("--c-max", ca.c_max, "Coefficient box size")->check(CLI::PositiveNumber);

    AnalyzeArgs aa;
    auto* analyze = app.add_subcommand("analyze", "Find equilibria and their attractor dimensions");
    analyze->add_option("--system", aa.system, "System JSON")->required();
    analyze->add_option("--starts", aa.starts, "Number of Newton starts");
    analyze->add_option("--lo", aa.lo, "Lower bound of the search box, every coordinate");
    analyze->add_option("--hi", aa.hi, "Upper bound of the search box, every coordinate");

    SimulateArgs sa;
    auto* simulate = app.add_subcommand("simulate", "Iterate or integrate a system");
    simulate->add_option("--system", sa.system, "System JSON");
    simulate->add_flag("--stratified", sa.stratified, "Use the generated stratified sine map");
    simulate->add_flag("--control", sa.control, "Use the generated spectrally uniform sine map");
    simulate->add_option("--steps", sa.steps, "Iterations for discrete maps");
    simulate->add_option("--t-end", sa.t_end, "End time for continuous systems")
        ->check(CLI::PositiveNumber);
    simulate->add_option("--dt", sa.h, "RK4 step")->check(CLI::PositiveNumber);
    simulate->add_option("--x0", sa.x0, "Initial state, comma separated")->delimiter(',');
    simulate->add_option("--snapshots", sa.snapshots, "Step indices to export")->delimiter(',');
    simulate->add_option("--theta", sa.theta, "Collapse threshold relative to the first speed")
        ->check(CLI::PositiveNumber);
    simulate->add_option("--eps", sa.eps, "Convergence threshold on the final speed")
        ->check(CLI::PositiveNumber);

    ProbeArgs pa;
    auto* probe_cmd = app.add_subcommand("probe", "Train a small classifier and track Jacobian CV");
    probe_cmd->add_flag("--synthetic", pa.synthetic, "Use Gaussian blobs");
    probe_cmd->add_option("--mnist", pa.mnist, "IDX image and label files")->expected(2);
    probe_cmd->add_option("--classes", pa.classes, "Blob classes to train on");
    probe_cmd->add_option("--dim", pa.dim, "Blob dimension")->check(CLI::PositiveNumber);
    probe_cmd->add_option("--per-class", pa.per_class, "Blob items per class")->check(CLI::PositiveNumber);
    probe_cmd->add_option("--separation", pa.separation, "Blob centre distance")->check(CLI::PositiveNumber);
    probe_cmd->add_option("--max", pa.max_items, "Items read from the IDX files");
    probe_cmd->add_option("--holdout-digit", pa.holdout_digit, "Digit kept out of training");
    probe_cmd->add_option("--noise-digit", pa.noise_digit, "Digit used as natural noise (-1: none)");
    probe_cmd->add_option("--hidden", pa.hidden, "Hidden layer widths")->delimiter(',');
    probe_cmd->add_option("--epochs", pa.epochs, "Training epochs");
    probe_cmd->add_option("--lr", pa.lr, "Learning rate");
    probe_cmd->add_option("--momentum", pa.momentum, "SGD momentum");
    probe_cmd->add_option("--weight-decay", pa.weight_decay, "L2 weight decay");
    probe_cmd->add_option("--batch", pa.batch, "Minibatch size");
    probe_cmd->add_option("--jacobian-at", pa.jacobian_at, "logits or softmax")
        ->check(CLI::IsMember({"logits", "softmax"}));
    probe_cmd->add_option("--samples-per-group", pa.samples_per_group, "Probe samples per group");

    SvdArgs va;
    auto* svd = app.add_subcommand("svd-report", "Spectrum of a matrix file");
    svd->add_option("--matrix", va.matrix, "System JSON or numeric CSV")->required();
    svd->add_option("--which", va.which, "W, A or jacobian (system JSON only)");
    svd->add_option("--at", va.at, "State for --which jacobian, comma separated")->delimiter(',');

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::CallForVersion&) {
        out << kVersion << "\n";
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        auto* sub = app.get_subcommands().front();
        Run run(g, sub->get_name(), args);
        int code = kExitFailure;
        if (sub == construct) code = cmd_construct(g, ca, run, out, err);
        else if (sub == analyze) code = cmd_analyze(g, aa, run, out);
        else if (sub == simulate) code = cmd_simulate(g, sa, run, out, err);
        else if (sub == probe_cmd) code = cmd_probe(g, pa, run, out);
        else if (sub == svd) code = cmd_svd_report(g, va, run, out);
        if (code == kExitOk) run.finish();
        return code;
    } catch (const InputError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const PreconditionError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DivergenceError& e) {
        err << "diverged: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const TrainingError& e) {
        err << "training failed: " << e.what() << "\n";
        return kExitTraining;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

}  // namespace stratum
