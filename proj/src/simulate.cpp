#include "stratum/simulate.hpp"

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "stratum/error.hpp"
#include "stratum/io.hpp"
#include "stratum/random.hpp"

namespace stratum {

namespace {

constexpr double kDivergenceNorm = 1e12;

void check_state(const Vector& x, const Vector& last_finite, double t) {
    if (!x.allFinite() || x.norm() > kDivergenceNorm)
        throw DivergenceError("state diverged at t=" + io::format_double(t), last_finite);
}

}  // namespace

void Trajectory::validate() const {
    if (states.empty()) throw InputError("trajectory has no states");
    if (times.size() != states.size()) throw InputError("times and states differ in length");
    const std::size_t want = discrete ? states.size() - 1 : states.size();
    if (speeds.size() != want) throw InputError("speeds have the wrong length");
    for (std::size_t i = 1; i < times.size(); ++i)
        if (!(times[i] > times[i - 1])) throw InputError("times must be strictly increasing");
}

Trajectory iterate_map(const DynamicalSystem& sys, const Vector& x0, int steps) {
    if (sys.form() != Form::discrete_map) throw InputError("iterate_map needs a discrete map");
    if (steps < 1) throw InputError("steps must be at least 1");
    if (x0.size() != sys.n()) throw InputError("initial state has wrong length");
    Trajectory tr;
    tr.discrete = true;
    tr.states.reserve(steps + 1);
    tr.states.push_back(x0);
    tr.times.push_back(0.0);
    tr.speeds.reserve(steps);
    for (int t = 1; t <= steps; ++t) {
        const Vector& prev = tr.states.back();
        Vector next = eval_field(sys, prev);
        check_state(next, prev, t);
        tr.speeds.push_back((next - prev).norm());
        tr.states.push_back(std::move(next));
        tr.times.push_back(static_cast<double>(t));
    }
    return tr;
}

Trajectory integrate_rk4(const DynamicalSystem& sys, const Vector& x0, double t_end, double h) {
    if (!is_continuous(sys.form())) throw InputError("integrate_rk4 needs a continuous form");
    if (!(h > 0.0) || !(t_end > 0.0)) throw InputError("step and end time must be positive");
    if (x0.size() != sys.n()) throw InputError("initial state has wrong length");
    // Snap to a whole number of steps when t_end/h is integral up to rounding.
    const double ratio = t_end / h;
    auto steps = static_cast<long>(std::llround(ratio));
    if (std::abs(ratio - static_cast<double>(steps)) > 1e-9 * std::max(1.0, ratio))
        steps = static_cast<long>(std::ceil(ratio));
    steps = std::max(steps, 1L);

    Trajectory tr;
    tr.discrete = false;
    tr.states.reserve(steps + 1);
    Vector x = x0;
    Vector k1 = eval_field(sys, x);
    tr.states.push_back(x);
    tr.times.push_back(0.0);
    tr.speeds.push_back(k1.norm());
    double t = 0.0;
    for (long i = 1; i <= steps; ++i) {
        const double t_next = i == steps ? t_end : static_cast<double>(i) * h;
        const double dt = t_next - t;
        const Vector k2 = eval_field(sys, x + 0.5 * dt * k1);
        const Vector k3 = eval_field(sys, x + 0.5 * dt * k2);
        const Vector k4 = eval_field(sys, x + dt * k3);
        Vector next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        check_state(next, x, t_next);
        x = std::move(next);
        t = t_next;
        k1 = eval_field(sys, x);
        tr.states.push_back(x);
        tr.times.push_back(t);
        tr.speeds.push_back(k1.norm());
    }
    return tr;
}

SlowFastReport slow_fast_report(const Trajectory& traj, double theta, double eps_conv) {
    if (traj.states.size() < 2) throw InputError("trajectory needs at least two states");
    if (!(theta > 0.0 && theta < 1.0)) throw InputError("theta must lie in (0, 1)");
    traj.validate();
    const auto& s = traj.speeds;
    SlowFastReport r;
    r.endpoint = traj.states.back();
    const double threshold = theta * s.front();
    std::size_t collapse = s.size();
    if (s.front() == 0.0) {
        collapse = 0;
    } else {
        for (std::size_t i = 0; i < s.size(); ++i)
            if (s[i] < threshold) {
                collapse = i;
                break;
            }
    }
    r.collapse_step = static_cast<int>(collapse);
    for (std::size_t i = collapse; i < s.size(); ++i) r.terminal_drift += s[i];
    if (collapse < s.size()) {
        r.collapse_speed = s[collapse];
        r.post_collapse_mean_speed = r.terminal_drift / static_cast<double>(s.size() - collapse);
    }
    r.converged = s.back() < eps_conv;
    return r;
}

namespace {

DynamicalSystem sine_map(const Vector& singular_values, double alpha, double b_scale,
                         std::uint64_t seed) {
    const auto n = singular_values.size();
    Rng rng = make_rng(seed, "construction");
    const Matrix Q = random_orthogonal(n, rng);
    Matrix W = Q * singular_values.asDiagonal() * Q.transpose();
    W = 0.5 * (W + W.transpose());
    const Vector b = b_scale * gaussian_matrix(n, 1, rng).col(0);
    return DynamicalSystem(W, alpha * Matrix::Identity(n, n), b, Activation::sine,
                           Form::discrete_map);
}

}  // namespace

DynamicalSystem make_stratified_map(std::uint64_t seed, const StratifiedMapOptions& opts) {
    if (opts.n < 2) throw InputError("stratified map needs n >= 2");
    if (!(opts.ratio >= 1.0)) throw InputError("ratio must be at least 1");
    const double s_max = opts.slow_multiplier + opts.alpha;
    Vector s(opts.n);
    for (int i = 0; i < opts.n; ++i)
        s[i] = s_max * std::pow(opts.ratio, -static_cast<double>(i) / (opts.n - 1));
    return sine_map(s, opts.alpha, opts.b_scale, seed);
}

DynamicalSystem make_uniform_map(std::uint64_t seed, int n, double multiplier, double alpha,
                                 double b_scale) {
    if (n < 1) throw InputError("n must be positive");
    return sine_map(Vector::Constant(n, multiplier + alpha), alpha, b_scale, seed);
}

std::string trajectory_to_csv(const Trajectory& traj) {
    traj.validate();
    const auto n = traj.states.front().size();
    std::ostringstream out;
    out << "step,t";
    for (Eigen::Index k = 0; k < n; ++k) out << ",x_" << (k + 1);
    out << ",speed\n";
    for (std::size_t i = 0; i < traj.states.size(); ++i) {
        out << i << ',' << io::format_double(traj.times[i]);
        for (Eigen::Index k = 0; k < n; ++k) out << ',' << io::format_double(traj.states[i][k]);
        out << ',';
        if (i < traj.speeds.size()) out << io::format_double(traj.speeds[i]);
        out << '\n';
    }
    return out.str();
}

Trajectory trajectory_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty trajectory CSV");
    const auto header = io::split_csv_line(line);
    if (header.size() < 4 || header[0] != "step" || header[1] != "t" || header.back() != "speed")
        throw FormatError("unexpected trajectory CSV header");
    const std::size_t n = header.size() - 3;
    Trajectory tr;
    bool missing_speed = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto fields = io::split_csv_line(line);
        if (fields.size() != n + 3) throw FormatError("trajectory row has wrong field count");
        if (missing_speed) throw FormatError("only the last row may omit its speed");
        tr.times.push_back(io::parse_double(fields[1]));
        Vector x(static_cast<Eigen::Index>(n));
        for (std::size_t k = 0; k < n; ++k) x[k] = io::parse_double(fields[2 + k]);
        tr.states.push_back(std::move(x));
        if (fields.back().empty())
            missing_speed = true;
        else
            tr.speeds.push_back(io::parse_double(fields.back()));
    }
    tr.discrete = missing_speed;
    tr.validate();
    return tr;
}

nlohmann::json to_json(const SlowFastReport& r) {
    return {{"collapse_step", r.collapse_step},
            {"terminal_drift", r.terminal_drift},
            {"collapse_speed", r.collapse_speed},
            {"post_collapse_mean_speed", r.post_collapse_mean_speed},
            {"endpoint", io::vector_to_json(r.endpoint)},
            {"converged", r.converged}};
}

}  // namespace stratum
