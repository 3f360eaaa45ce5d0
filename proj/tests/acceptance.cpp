// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "stratum/cli.hpp"
#include "stratum/construct.hpp"
#include "stratum/equilibria.hpp"
#include "stratum/io.hpp"
#include "stratum/probe.hpp"
#include "stratum/random.hpp"
#include "stratum/simulate.hpp"
#include "stratum/spectral.hpp"

using namespace stratum;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

struct Criterion {
    int id;
    const char* name;
    double time_limit;  // seconds; <= 0 means none
    std::function<Outcome()> run;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

const std::vector<std::tuple<int, int, int>> kShapes{{4, 2, 1}, {6, 4, 2}, {8, 4, 3}};
constexpr int kSeeds = 5;

Outcome ground_truth_round_trip() {
    Outcome o;
    int systems = 0, samples = 0;
    double worst_residual = 0, worst_zero = 0, worst_real = -1e300;
    for (auto [p, z, m] : kShapes) {
        for (int seed = 0; seed < kSeeds; ++seed) {
            const auto ca = construct_relu_attractor(p, z, m, seed);
            const auto v = verify_construction(ca, 64, seed);
            ++systems;
            samples += v.n_samples;
            worst_residual = std::max(worst_residual, v.max_residual);
            worst_zero = std::max(worst_zero, v.max_zero_eigenvalue);
            worst_real = std::max(worst_real, v.max_nonzero_real_part);
            bool ranks_ok = true;
            for (int r : v.ranks) ranks_ok = ranks_ok && r == p + z - m;
            if (!v.passed() || !ranks_ok || v.max_residual > 1e-12 || v.max_zero_eigenvalue > 1e-10 ||
                !(v.max_nonzero_real_part < -0.1))
                o.pass = false;
        }
    }
    o.detail = std::to_string(systems) + " systems, " + std::to_string(samples) +
               " samples; max residual " + fmt("%.2e", worst_residual) + ", max |zero eig| " +
               fmt("%.2e", worst_zero) + ", max other Re " + fmt("%.3f", worst_real);
    return o;
}

Outcome dimension_recovery() {
    Outcome o;
    int min_distinct = 1 << 30, off_set = 0, kink = 0, total = 0;
    for (auto [p, z, m] : kShapes) {
        for (int seed = 0; seed < kSeeds; ++seed) {
            const auto ca = construct_relu_attractor(p, z, m, seed);
            const auto eq = find_equilibria(ca.system(), ca.state_box(), 64, seed);
            std::vector<Vector> chosen;
            for (const auto& r : eq) {
                ++total;
                const auto pr = ca.project(r.point);
                const bool on_set = pr.distance <= 1e-6 && ca.in_validity(pr.coefficients);
                if (!on_set) {
                    ++off_set;
                    continue;
                }
                if (r.near_kink) {
                    ++kink;
                    continue;
                }
                if (r.attractor_dim != m) o.pass = false;
                bool far = true;
                for (const auto& c : chosen) far = far && (c - r.point).norm() >= 1e-3;
                if (far) chosen.push_back(r.point);
            }
            min_distinct = std::min<int>(min_distinct, static_cast<int>(chosen.size()));
        }
    }
    if (min_distinct < 5) o.pass = false;
    o.detail = "min distinct smooth points on the attractor per system " + std::to_string(min_distinct) +
               " (all dim = m: " + (o.pass ? "yes" : "no") + "); of " + std::to_string(total) +
               " equilibria, " + std::to_string(kink) + " on cone faces, " + std::to_string(off_set) +
               " off the attractor";
    return o;
}

// Rows of a random tanh system of size k, followed by exact copies of rows
// `copies`; each copy adds the relation e_i - e_copy.
struct Replicated {
    DynamicalSystem sys;
    FunctionalDependence dep;
};

Replicated replicated_system(int k, const std::vector<int>& copies, std::uint64_t seed) {
    Rng rng = make_rng(seed, "construction");
    const int n = k + static_cast<int>(copies.size());
    const Matrix Wk = 1.5 * gaussian_matrix(k, n, rng), Ak = gaussian_matrix(k, n, rng);
    const Vector bk = 0.5 * gaussian_matrix(k, 1, rng).col(0);
    Matrix W(n, n), A(n, n), rel = Matrix::Zero(static_cast<Eigen::Index>(copies.size()), n);
    Vector b(n);
    W.topRows(k) = Wk;
    A.topRows(k) = Ak;
    b.head(k) = bk;
    for (std::size_t j = 0; j < copies.size(); ++j) {
        const int row = k + static_cast<int>(j);
        W.row(row) = Wk.row(copies[j]);
        A.row(row) = Ak.row(copies[j]);
        b[row] = bk[copies[j]];
        rel(static_cast<Eigen::Index>(j), copies[j]) = 1.0;
        rel(static_cast<Eigen::Index>(j), row) = -1.0;
    }
    return {DynamicalSystem(W, A, b, Activation::tanh, Form::pre_activation), FunctionalDependence(rel, k)};
}

Outcome thm3_consistency() {
    Outcome o;
    std::ostringstream d;
    for (auto [k, copies] : {std::pair{3, std::vector<int>{0}}, std::pair{4, std::vector<int>{0, 2}}}) {
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            const auto [sys, dep] = replicated_system(k, copies, seed);
            const int n = static_cast<int>(sys.n());
            const Box box = Box::uniform(n, -2, 2);
            std::optional<Vector> witness;
            for (const auto& s : quasi_random_starts(box, 32, seed)) {
                const auto r = newton_refine(sys, s);
                if (r.converged && residual_field(sys, r.point).norm() <= 1e-10) {
                    witness = r.point;
                    break;
                }
            }
            if (!witness) {
                o.pass = false;
                d << " n=" << n << " seed " << seed << ": no witness;";
                continue;
            }
            const int est = dimension_estimate_thm3(sys, dep, *witness, box, 256, seed);
            const int dim = attractor_dimension(sys, *witness);
            const int rank = oracle::elimination_rank(residual_jacobian(sys, *witness).J);
            const bool ok = est == dim && est == n - k && rank == k;
            o.pass = o.pass && ok;
            if (seed == 0) d << " n=" << n << ",k=" << k << ": estimate " << est << ", Jacobian " << dim << ";";
        }
    }
    o.detail = "3 seeds each;" + d.str();
    return o;
}

Outcome jacobian_correctness() {
    Outcome o;
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> dim(1, 16);
    const Activation acts[] = {Activation::identity, Activation::tanh, Activation::sine, Activation::logistic};
    const Form forms[] = {Form::pre_activation, Form::post_activation, Form::discrete_map};
    double worst = 0;
    for (int i = 0; i < 100; ++i) {
        const int n = dim(rng);
        const auto sys = oracle::random_system(rng, n, acts[i % 4], forms[(i / 4) % 3]);
        const auto c = check_jacobian(sys, oracle::random_vector(rng, n, 2.0));
        worst = std::max(worst, c.max_abs_diff / c.scale);
        o.pass = o.pass && c.agrees;
    }
    double worst_grad = 0;
    Rng g(7);
    for (int t = 0; t < 20; ++t) {
        const auto act = t % 2 ? Activation::tanh : Activation::relu;
        probe::TinyNet net({5, 8, 3}, 300 + t, act);
        const Matrix X = gaussian_matrix(6, 5, g);
        const std::vector<int> y{0, 1, 2, 2, 1, 0};
        const auto grad = probe::loss_and_gradient(net, X, y);
        double diff = 0, scale = 0;
        for (std::size_t l = 0; l < net.weights().size(); ++l) {
            for (Eigen::Index i = 0; i < net.weights()[l].size(); ++i) {
                auto a = net, b = net;
                a.weights()[l].data()[i] += 1e-6;
                b.weights()[l].data()[i] -= 1e-6;
                const double fd = (probe::loss_and_gradient(a, X, y).loss - probe::loss_and_gradient(b, X, y).loss) / 2e-6;
                diff = std::max(diff, std::abs(fd - grad.dW[l].data()[i]));
                scale = std::max(scale, std::abs(grad.dW[l].data()[i]));
            }
            for (Eigen::Index i = 0; i < net.biases()[l].size(); ++i) {
                auto a = net, b = net;
                a.biases()[l][i] += 1e-6;
                b.biases()[l][i] -= 1e-6;
                const double fd = (probe::loss_and_gradient(a, X, y).loss - probe::loss_and_gradient(b, X, y).loss) / 2e-6;
                diff = std::max(diff, std::abs(fd - grad.db[l][i]));
                scale = std::max(scale, std::abs(grad.db[l][i]));
            }
        }
        worst_grad = std::max(worst_grad, diff / (1 + scale));
    }
    o.pass = o.pass && worst <= 1e-5 && worst_grad <= 1e-4;
    o.detail = "field Jacobians: worst relative diff " + fmt("%.2e", worst) +
               " over 100 pairs; loss gradients: " + fmt("%.2e", worst_grad) + " over 20 nets";
    return o;
}

Outcome slow_fast() {
    Outcome o;
    double min_ratio = 1e300, max_control = 0, min_spread = 1e300;
    int max_collapse = 0;
    bool converged = true;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto sys = make_stratified_map(seed);
        const auto s = svd_spectrum(sys.W()).singular_values;
        min_spread = std::min(min_spread, s.front() / s.back());
        Rng rng = make_rng(seed, "x0");
        const Vector x0 = gaussian_matrix(3, 1, rng).col(0);
        const auto r = slow_fast_report(iterate_map(sys, x0, 20000), 0.01);
        const auto c = slow_fast_report(iterate_map(make_uniform_map(seed), x0, 20000), 0.01);
        max_collapse = std::max(max_collapse, r.collapse_step);
        min_ratio = std::min(min_ratio, r.terminal_drift / r.collapse_speed);
        max_control = std::max(max_control, c.terminal_drift / c.collapse_speed);
        converged = converged && r.converged;
    }
    o.pass = min_spread >= 100 * (1 - 1e-12) && max_collapse <= 200 && min_ratio >= 10 &&
             converged && max_control < 2;
    o.detail = "5 seeds: spectral ratio " + fmt("%.1f", min_spread) + ", max collapse_step " +
               std::to_string(max_collapse) + ", min drift/collapse-step " + fmt("%.1f", min_ratio) +
               ", converged " + (converged ? "yes" : "no") + "; control max ratio " + fmt("%.2f", max_control);
    return o;
}

Outcome cv_metric_checks() {
    Outcome o;
    const std::vector<double> quoted{30.03, 8.63, 7.48, 5.31, 4.13, 3.09, 2.95, 2.69, 1.80};
    const double cv = cv_metric(quoted);
    const double flat = cv_metric(std::vector<double>{5, 5, 5});
    Rng rng(99);
    std::uniform_real_distribution<double> u(0.0, 10.0), k(1e-3, 1e3);
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> v(2 + i % 30);
        for (auto& x : v) x = u(rng);
        const double c = k(rng);
        std::vector<double> cv2(v);
        for (auto& x : cv2) x *= c;
        worst = std::max(worst, std::abs(cv_metric(cv2) - cv_metric(v)));
    }
    o.pass = std::abs(cv - 1.278) <= 1e-3 && flat == 0.0 && worst <= 1e-12;
    o.detail = "quoted list " + fmt("%.5f", cv) + " (sample-variance convention would give " +
               fmt("%.4f", cv * 9.0 / 8.0) + "), constant list " + fmt("%g", flat) +
               ", scale invariance worst " + fmt("%.1e", worst);
    return o;
}

Outcome stratification_emergence() {
    using namespace probe;
    Outcome o;
    std::vector<double> train_cv, noise_cv;
    std::ostringstream rhos;
    double min_rho = 1.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto all = synth_blobs(5, 32, 1000, 8.0, seed);
        auto train_set = all.filter([](int l) { return l < 3; });
        train_set.num_classes = 3;
        const auto probes = make_probe_samples(train_set, all.filter([](int l) { return l == 3; }),
                                               all.filter([](int l) { return l == 4; }), 50, seed);
        TrainConfig cfg;
        cfg.seed = seed;
        const auto r = train(TinyNet({32, 128, 64, 3}, seed), train_set, cfg, probes);
        const int last = r.trace.checkpoints - 1;
        for (const auto& rec : r.trace.records) {
            if (rec.checkpoint != last) continue;
            if (rec.category == ProbeCategory::train_class) train_cv.push_back(rec.cv);
            if (rec.category == ProbeCategory::random_noise) noise_cv.push_back(rec.cv);
        }
        const auto trend = r.trace.mean_cv_by_checkpoint(ProbeCategory::train_class);
        std::vector<double> idx(trend.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = double(i);
        const double rho = oracle::spearman(idx, trend);
        min_rho = std::min(min_rho, rho);
        rhos << (seed > 1 ? "," : "") << fmt("%.2f", rho);
    }
    auto mean_var = [](const std::vector<double>& v) {
        double m = 0;
        for (double x : v) m += x;
        m /= double(v.size());
        double s = 0;
        for (double x : v) s += (x - m) * (x - m);
        return std::pair{m, s / double(v.size() - 1)};
    };
    const auto [mt, vt] = mean_var(train_cv);
    const auto [mn, vn] = mean_var(noise_cv);
    const double se = std::sqrt(vt / double(train_cv.size()) + vn / double(noise_cv.size()));
    const double gap = mt - mn;
    o.pass = gap >= 2 * se && min_rho > 0.5;
    o.detail = "train-class CV " + fmt("%.4f", mt) + " vs noise " + fmt("%.4f", mn) + ", gap " +
               fmt("%.4f", gap) + " = " + fmt("%.2f", gap / se) + " pooled SE (n=" +
               std::to_string(train_cv.size()) + "+" + std::to_string(noise_cv.size()) +
               "); Spearman per seed " + rhos.str();
    return o;
}

Outcome spectral_contracts() {
    Outcome o;
    Rng rng(123);
    std::uniform_int_distribution<int> side(1, 64);
    double recon = 0, orth = 0, trace = 0, det = 0;
    int square = 0;
    for (int i = 0; i < 200; ++i) {
        const int r = side(rng), c = i % 4 == 0 ? r : side(rng);
        const Matrix M = gaussian_matrix(r, c, rng);
        const auto f = svd_factors(M);
        const double scale = std::max(1.0, f.s.size() ? f.s[0] : 0.0);
        recon = std::max(recon, (M - f.U * f.s.asDiagonal() * f.V.transpose()).cwiseAbs().maxCoeff() / scale);
        const auto k = f.s.size();
        orth = std::max({orth, (f.U.transpose() * f.U - Matrix::Identity(k, k)).cwiseAbs().maxCoeff(),
                         (f.V.transpose() * f.V - Matrix::Identity(k, k)).cwiseAbs().maxCoeff()});
        if (r != c) continue;
        ++square;
        const auto ev = eig_spectrum(M);
        std::complex<double> sum = 0;
        double logabs = 0;
        for (const auto& e : ev) {
            sum += e;
            logabs += std::log(std::abs(e));
        }
        trace = std::max(trace, std::abs(sum - M.trace()) / (1 + M.cwiseAbs().sum()));
        const double d = oracle::lu_determinant(M);
        det = std::max(det, std::abs(logabs - std::log(std::abs(d))));
    }
    o.pass = recon <= 1e-10 && orth <= 1e-10 && trace <= 1e-10 && det <= 1e-8;
    o.detail = "200 matrices: reconstruction " + fmt("%.1e", recon) + ", orthogonality " +
               fmt("%.1e", orth) + "; " + std::to_string(square) + " square: trace " +
               fmt("%.1e", trace) + ", log|det| " + fmt("%.1e", det);
    return o;
}

Outcome determinism() {
    Outcome o;
    const fs::path root = fs::temp_directory_path() / "stratum_acceptance_determinism";
    fs::remove_all(root);
    auto run = [&](const std::string& tag, std::vector<std::string> args) {
        args.push_back("--out-dir");
        args.push_back((root / tag).string());
        std::ostringstream out, err;
        if (run_cli(args, out, err) != 0) throw std::runtime_error(tag + ": " + err.str());
        return nlohmann::json::parse(io::read_file(root / tag / "manifest.json"))["outputs"];
    };
    const std::string sys = (root / "c1" / "system.json").string();
    const std::vector<std::pair<std::string, std::vector<std::string>>> cmds{
        {"c", {"construct", "--p", "6", "--z", "4", "--m", "2", "--seed", "7"}},
        {"a", {"analyze", "--system", sys, "--starts", "32", "--seed", "3", "--workers", "2"}},
        {"s", {"simulate", "--stratified", "--steps", "20000", "--snapshots", "50,100,200,20000"}},
        {"p", {"probe", "--synthetic", "--classes", "3", "--epochs", "5", "--seed", "1", "--workers", "2"}},
    };
    int files = 0;
    for (const auto& [tag, args] : cmds) {
        const auto first = run(tag + "1", args), second = run(tag + "2", args);
        files += static_cast<int>(first.size());
        for (const auto& [name, hash] : first.items())
            if (io::sha256_file(root / (tag + "2") / name) != hash) o.pass = false;
        if (first != second || first.empty()) o.pass = false;
    }
    o.detail = "construct, analyze, simulate, probe rerun: " + std::to_string(files) +
               " output files " + (o.pass ? "hash-identical" : "DIFFER");
    return o;
}

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "ground-truth round-trip", 10, ground_truth_round_trip},
        {2, "dimension recovery", 30, dimension_recovery},
        {3, "dependence-based dimension", 0, thm3_consistency},
        {4, "Jacobian correctness", 0, jacobian_correctness},
        {5, "slow-fast reproduction", 20, slow_fast},
        {6, "CV metric", 0, cv_metric_checks},
        {7, "stratification emergence", 300, stratification_emergence},
        {8, "spectral backend contracts", 0, spectral_contracts},
        {9, "determinism", 0, determinism},
    };
    int passed = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (c.time_limit > 0 && secs >= c.time_limit) {
            o.pass = false;
            o.detail += "; over the " + fmt("%g", c.time_limit) + " s limit";
        }
        passed += o.pass;
        std::printf("%s  %d. %s (%.2f s): %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, secs,
                    o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", passed, criteria.size());
    return passed == static_cast<int>(criteria.size()) ? 0 : 1;
}
