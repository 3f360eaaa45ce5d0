#pragma once

#include <optional>
#include <string>
#include <string_view>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace stratum {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Elementwise nonlinearity. `logistic` is an extension beyond the
/// activations the attractor theory is usually stated for.
enum class Activation { identity, relu, tanh, sine, logistic };

/// Which right-hand side a system evaluates.
///   pre_activation:  dx/dt   = act(W x + b) - A x
///   post_activation: dx/dt   = -x + W act(x) + b
///   discrete_map:    x(t+1)  = act(W x + b) - A x
enum class Form { pre_activation, post_activation, discrete_map };

double activate(Activation a, double v);
/// Derivative of `activate`; relu'(0) is defined as 0.
double activate_derivative(Activation a, double v);
/// True where the activation is not differentiable (relu at exactly 0).
bool is_kink(Activation a, double v);

std::string_view to_string(Activation a);
std::string_view to_string(Form f);
Activation parse_activation(std::string_view s);
Form parse_form(std::string_view s);

inline bool is_continuous(Form f) { return f != Form::discrete_map; }

class DynamicalSystem {
public:
    /// Validates shapes; throws InputError on mismatch or non-finite entries.
    DynamicalSystem(Matrix W, Matrix A, Vector b, Activation activation, Form form);

    Eigen::Index n() const noexcept { return b_.size(); }
    const Matrix& W() const noexcept { return W_; }
    const Matrix& A() const noexcept { return A_; }
    const Vector& b() const noexcept { return b_; }
    Activation activation() const noexcept { return activation_; }
    Form form() const noexcept { return form_; }

    /// Point at which the activation is applied: W x + b for the
    /// pre-activation and discrete forms, x itself for post_activation.
    Vector activation_argument(const Vector& x) const;

private:
    Matrix W_;
    Matrix A_;
    Vector b_;
    Activation activation_;
    Form form_;
};

/// Right-hand side of the system at x (next state for discrete_map).
Vector eval_field(const DynamicalSystem& sys, const Vector& x);

/// Function whose zeros are the equilibria: the field itself for the
/// continuous forms, map(x) - x for discrete_map.
Vector residual_field(const DynamicalSystem& sys, const Vector& x);

struct JacobianResult {
    Matrix J;
    /// Set when some activation argument sat exactly on a kink and the
    /// zero-derivative convention was applied.
    bool kink_hit = false;
};

/// Closed-form Jacobian of eval_field:
///   D W - A  (pre_activation, discrete_map), D = diag act'(W x + b)
///   W D - I  (post_activation),              D = diag act'(x)
JacobianResult jacobian_analytic(const DynamicalSystem& sys, const Vector& x);

/// Jacobian of residual_field (subtracts I for discrete_map).
JacobianResult residual_jacobian(const DynamicalSystem& sys, const Vector& x);

/// Default central-difference step, 1e-6 * max(1, |x|_inf).
double default_fd_step(const Vector& x);

/// Central-difference Jacobian of eval_field; column j is
/// (f(x + h e_j) - f(x - h e_j)) / (2h).
Matrix jacobian_fd(const DynamicalSystem& sys, const Vector& x,
                   std::optional<double> h = std::nullopt);

struct JacobianCheck {
    double max_abs_diff = 0.0;
    double scale = 0.0;       // 1 + |J_analytic|_inf
    bool agrees = false;      // max_abs_diff <= rel_tol * scale
    bool near_kink = false;   // some activation argument within the FD stencil of a kink
};

/// Cross-checks jacobian_analytic against jacobian_fd.
JacobianCheck check_jacobian(const DynamicalSystem& sys, const Vector& x, double rel_tol = 1e-5,
                             std::optional<double> h = std::nullopt);

nlohmann::json to_json(const DynamicalSystem& sys);
DynamicalSystem system_from_json(const nlohmann::json& j);
DynamicalSystem load_system(const std::string& path);

}  // namespace stratum
