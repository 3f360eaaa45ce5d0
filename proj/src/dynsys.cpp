#include "stratum/dynsys.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "stratum/error.hpp"
#include "stratum/io.hpp"

namespace stratum {

double activate(Activation a, double v) {
    switch (a) {
        case Activation::identity: return v;
        case Activation::relu: return v > 0.0 ? v : 0.0;
        case Activation::tanh: return std::tanh(v);
        case Activation::sine: return std::sin(v);
        case Activation::logistic: return 1.0 / (1.0 + std::exp(-v));
    }
    return v;
}

double activate_derivative(Activation a, double v) {
    switch (a) {
        case Activation::identity: return 1.0;
        case Activation::relu: return v > 0.0 ? 1.0 : 0.0;
        case Activation::tanh: {
            double t = std::tanh(v);
            return 1.0 - t * t;
        }
        case Activation::sine: return std::cos(v);
        case Activation::logistic: {
            double s = 1.0 / (1.0 + std::exp(-v));
            return s * (1.0 - s);
        }
    }
    return 1.0;
}

bool is_kink(Activation a, double v) { return a == Activation::relu && v == 0.0; }

std::string_view to_string(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        case Activation::sine: return "sine";
        case Activation::logistic: return "logistic";
    }
    return "identity";
}

std::string_view to_string(Form f) {
    switch (f) {
        case Form::pre_activation: return "pre_activation";
        case Form::post_activation: return "post_activation";
        case Form::discrete_map: return "discrete_map";
    }
    return "pre_activation";
}

Activation parse_activation(std::string_view s) {
    if (s == "identity") return Activation::identity;
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    if (s == "sine" || s == "sin") return Activation::sine;
    if (s == "logistic" || s == "sigmoid") return Activation::logistic;
    throw InputError("unknown activation '" + std::string(s) + "'");
}

Form parse_form(std::string_view s) {
    if (s == "pre_activation") return Form::pre_activation;
    if (s == "post_activation") return Form::post_activation;
    if (s == "discrete_map") return Form::discrete_map;
    throw InputError("unknown form '" + std::string(s) + "'");
}

DynamicalSystem::DynamicalSystem(Matrix W, Matrix A, Vector b, Activation activation, Form form)
    : W_(std::move(W)), A_(std::move(A)), b_(std::move(b)), activation_(activation), form_(form) {
    const auto n = b_.size();
    if (n < 1) throw InputError("system dimension must be positive");
    if (W_.rows() != n || W_.cols() != n)
        throw InputError("W must be " + std::to_string(n) + "x" + std::to_string(n));
    if (A_.rows() != n || A_.cols() != n)
        throw InputError("A must be " + std::to_string(n) + "x" + std::to_string(n));
    if (!W_.allFinite() || !A_.allFinite() || !b_.allFinite())
        throw InputError("system parameters must be finite");
}

namespace {

void require_state(const DynamicalSystem& sys, const Vector& x) {
    if (x.size() != sys.n())
        throw InputError("state has length " + std::to_string(x.size()) + ", system expects " +
                         std::to_string(sys.n()));
}

Vector apply(Activation a, const Vector& v) {
    return v.unaryExpr([a](double e) { return activate(a, e); });
}

}  // namespace

Vector DynamicalSystem::activation_argument(const Vector& x) const {
    if (form_ == Form::post_activation) return x;
    return W_ * x + b_;
}

Vector eval_field(const DynamicalSystem& sys, const Vector& x) {
    require_state(sys, x);
    switch (sys.form()) {
        case Form::pre_activation:
        case Form::discrete_map:
            return apply(sys.activation(), sys.W() * x + sys.b()) - sys.A() * x;
        case Form::post_activation:
            return -x + sys.W() * apply(sys.activation(), x) + sys.b();
    }
    return x;
}

Vector residual_field(const DynamicalSystem& sys, const Vector& x) {
    Vector f = eval_field(sys, x);
    if (sys.form() == Form::discrete_map) f -= x;
    return f;
}

JacobianResult jacobian_analytic(const DynamicalSystem& sys, const Vector& x) {
    require_state(sys, x);
    const Vector arg = sys.activation_argument(x);
    JacobianResult out;
    Vector d(arg.size());
    for (Eigen::Index i = 0; i < arg.size(); ++i) {
        d[i] = activate_derivative(sys.activation(), arg[i]);
        out.kink_hit = out.kink_hit || is_kink(sys.activation(), arg[i]);
    }
    if (sys.form() == Form::post_activation) {
        out.J = sys.W() * d.asDiagonal();
        out.J.diagonal().array() -= 1.0;
    } else {
        out.J = d.asDiagonal() * sys.W();
        out.J -= sys.A();
    }
    return out;
}

JacobianResult residual_jacobian(const DynamicalSystem& sys, const Vector& x) {
    JacobianResult r = jacobian_analytic(sys, x);
    if (sys.form() == Form::discrete_map) r.J.diagonal().array() -= 1.0;
    return r;
}

double default_fd_step(const Vector& x) {
    double inf = x.size() ? x.cwiseAbs().maxCoeff() : 0.0;
    return 1e-6 * std::max(1.0, inf);
}

Matrix jacobian_fd(const DynamicalSystem& sys, const Vector& x, std::optional<double> h) {
    require_state(sys, x);
    const double step = h.value_or(default_fd_step(x));
    if (!(step > 0.0)) throw InputError("finite-difference step must be positive");
    const auto n = sys.n();
    Matrix J(n, n);
    Vector xp = x, xm = x;
    for (Eigen::Index j = 0; j < n; ++j) {
        xp[j] = x[j] + step;
        xm[j] = x[j] - step;
        J.col(j) = (eval_field(sys, xp) - eval_field(sys, xm)) / (2.0 * step);
        xp[j] = x[j];
        xm[j] = x[j];
    }
    return J;
}

JacobianCheck check_jacobian(const DynamicalSystem& sys, const Vector& x, double rel_tol,
                             std::optional<double> h) {
    const double step = h.value_or(default_fd_step(x));
    const Matrix Ja = jacobian_analytic(sys, x).J;
    const Matrix Jf = jacobian_fd(sys, x, step);
    JacobianCheck c;
    c.max_abs_diff = (Ja - Jf).cwiseAbs().maxCoeff();
    c.scale = 1.0 + Ja.cwiseAbs().rowwise().sum().maxCoeff();
    c.agrees = c.max_abs_diff <= rel_tol * c.scale;
    if (sys.activation() == Activation::relu) {
        // The stencil moves each argument by at most h times the column scale
        // of the map from x to the argument.
        const Vector arg = sys.activation_argument(x);
        Vector reach = Vector::Constant(arg.size(), step);
        if (sys.form() != Form::post_activation)
            reach = step * sys.W().cwiseAbs().rowwise().maxCoeff();
        c.near_kink = ((arg.cwiseAbs() - reach).array() <= 0.0).any();
    }
    return c;
}

nlohmann::json to_json(const DynamicalSystem& sys) {
    nlohmann::json j;
    j["n"] = sys.n();
    j["form"] = std::string(to_string(sys.form()));
    j["activation"] = std::string(to_string(sys.activation()));
    j["W"] = io::matrix_to_json(sys.W());
    j["A"] = io::matrix_to_json(sys.A());
    j["b"] = io::vector_to_json(sys.b());
    return j;
}

DynamicalSystem system_from_json(const nlohmann::json& j) {
    try {
        const auto n = j.at("n").get<Eigen::Index>();
        if (n < 1) throw InputError("n must be positive");
        Matrix W = io::matrix_from_json(j.at("W"), "W");
        Matrix A = io::matrix_from_json(j.at("A"), "A");
        Vector b = io::vector_from_json(j.at("b"), "b");
        if (b.size() != n) throw InputError("b must have " + std::to_string(n) + " entries");
        return DynamicalSystem(std::move(W), std::move(A), std::move(b),
                               parse_activation(j.at("activation").get<std::string>()),
                               parse_form(j.at("form").get<std::string>()));
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("invalid system definition: ") + e.what());
    }
}

DynamicalSystem load_system(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open system file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InputError("'" + path + "' is not valid JSON: " + e.what());
    }
    return system_from_json(j);
}

}  // namespace stratum
