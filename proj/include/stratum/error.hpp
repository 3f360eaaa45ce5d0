#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace stratum {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or dimensionally inconsistent input.
class InputError : public Error {
public:
    using Error::Error;
};

/// File contents that do not match the expected binary or text layout.
class FormatError : public InputError {
public:
    using InputError::InputError;
};

/// An operation was called outside its domain. Carries the offending
/// magnitude when there is one (e.g. the residual of a non-equilibrium).
class PreconditionError : public Error {
public:
    PreconditionError(const std::string& what, double magnitude = 0.0)
        : Error(what), magnitude_(magnitude) {}
    double magnitude() const noexcept { return magnitude_; }

private:
    double magnitude_;
};

/// A statistic that is undefined for the given data (e.g. CV at zero mean).
class UndefinedMetricError : public Error {
public:
    using Error::Error;
};

class ConstructionError : public Error {
public:
    using Error::Error;
};

/// The witness point handed to the dependence-based dimension estimate
/// does not have the declared Jacobian rank.
class InconsistentWitnessError : public Error {
public:
    using Error::Error;
};

/// State blew up during iteration or integration.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, Eigen::VectorXd last_finite)
        : Error(what), last_finite_(std::move(last_finite)) {}
    const Eigen::VectorXd& last_finite_state() const noexcept { return last_finite_; }

private:
    Eigen::VectorXd last_finite_;
};

/// Training produced a non-finite loss.
class TrainingError : public Error {
public:
    using Error::Error;
};

}  // namespace stratum
