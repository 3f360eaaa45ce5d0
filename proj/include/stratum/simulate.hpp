#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "stratum/dynsys.hpp"

namespace stratum {

struct Trajectory {
    std::vector<Vector> states;
    std::vector<double> times;   // step indices for discrete maps
    std::vector<double> speeds;  // |x_{t+1} - x_t| (discrete) or |dx/dt| at each state
    bool discrete = true;

    std::size_t size() const noexcept { return states.size(); }
    /// Checks the length and monotonicity invariants; throws InputError.
    void validate() const;
};

/// Iterates x(t+1) = eval_field(x(t)). Throws DivergenceError once the state
/// norm exceeds 1e12 or goes non-finite.
Trajectory iterate_map(const DynamicalSystem& sys, const Vector& x0, int steps);

/// Classical fixed-step RK4 from 0 to t_end; the final step is shortened to
/// land exactly on t_end.
Trajectory integrate_rk4(const DynamicalSystem& sys, const Vector& x0, double t_end, double h);

struct SlowFastReport {
    int collapse_step = 0;        // first index with speed < theta * speed_0
    double terminal_drift = 0.0;  // sum of speeds from collapse_step on
    double collapse_speed = 0.0;  // speed at collapse_step
    double post_collapse_mean_speed = 0.0;
    Vector endpoint;
    bool converged = false;       // final speed < eps_conv
};

SlowFastReport slow_fast_report(const Trajectory& traj, double theta = 0.01,
                                double eps_conv = 1e-9);

/// Parameters of the synthetic discrete sine map used to exhibit a fast
/// collapse followed by slow drift: x(t+1) = sin(W x + b) - alpha x with
/// W = Q diag(s) Q^T.
struct StratifiedMapOptions {
    int n = 3;
    double slow_multiplier = 0.998;  // largest linearized multiplier at the origin
    double ratio = 100.0;            // s_max / s_min
    double alpha = 0.05;
    double b_scale = 1e-4;
};

/// Singular values of W log-spaced from slow_multiplier + alpha down by
/// `ratio`, in random orthogonal coordinates.
DynamicalSystem make_stratified_map(std::uint64_t seed, const StratifiedMapOptions& opts = {});

/// Same family with every singular value equal to multiplier + alpha.
DynamicalSystem make_uniform_map(std::uint64_t seed, int n = 3, double multiplier = 0.3,
                                 double alpha = 0.05, double b_scale = 1e-4);

/// Header `step,t,x_1,...,x_n,speed`; 17 significant digits. The last row of
/// a discrete trajectory has an empty speed field.
std::string trajectory_to_csv(const Trajectory& traj);
Trajectory trajectory_from_csv(const std::string& text);

nlohmann::json to_json(const SlowFastReport& r);

}  // namespace stratum
