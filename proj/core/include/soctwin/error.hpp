#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace soctwin {

enum class ErrorKind {
    Shape,       // dimension mismatch between fields/masks/weights
    Validation,  // input violates a documented precondition
    Config,      // inconsistent or out-of-range configuration
    Solver,      // iterative solver failed to converge
    Format,      // malformed file contents
    Io,          // filesystem failure
    State,       // operation called in the wrong state
    Divergence,  // optimisation produced a non-finite loss
};

std::string_view to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& message) : Error(ErrorKind::Shape, message) {}
};

class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& message, std::string field = {})
        : Error(ErrorKind::Validation, message), field_(std::move(field)) {}

    /// Name of the offending input, empty when not attributable.
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& message) : Error(ErrorKind::Config, message) {}
};

class SolverError : public Error {
public:
    SolverError(const std::string& message, double residual, int iterations)
        : Error(ErrorKind::Solver, message), residual_(residual), iterations_(iterations) {}

    /// Relative residual ||Ax - b|| / ||b|| at the last iterate.
    double residual() const noexcept { return residual_; }
    int iterations() const noexcept { return iterations_; }

private:
    double residual_;
    int iterations_;
};

class FormatError : public Error {
public:
    FormatError(const std::string& message, std::uint64_t offset)
        : Error(ErrorKind::Format, message + " (at byte " + std::to_string(offset) + ")"),
          offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

class IoError : public Error {
public:
    IoError(const std::string& message, std::string path)
        : Error(ErrorKind::Io, message + ": " + path), path_(std::move(path)) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

class StateError : public Error {
public:
    explicit StateError(const std::string& message) : Error(ErrorKind::State, message) {}
};

class DivergenceError : public Error {
public:
    DivergenceError(const std::string& message, int iteration)
        : Error(ErrorKind::Divergence, message + " at iteration " + std::to_string(iteration)),
          iteration_(iteration) {}

    int iteration() const noexcept { return iteration_; }

private:
    int iteration_;
};

}  // namespace soctwin
