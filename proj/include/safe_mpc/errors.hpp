#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace safe_mpc {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration values, or an arena too crowded to place objects.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// An operation was called in the wrong state (e.g. step before reset).
class UsageError : public Error {
public:
    using Error::Error;
};

/// Vector or matrix dimensions do not match what the model expects.
class ShapeError : public Error {
public:
    using Error::Error;
};

class InsufficientDataError : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    DivergenceError(std::size_t epoch, std::size_t member)
        : Error("dynamics training diverged at epoch " + std::to_string(epoch) + " in member " +
                std::to_string(member)),
          epoch_(epoch),
          member_(member) {}

    std::size_t epoch() const noexcept { return epoch_; }
    std::size_t member() const noexcept { return member_; }

private:
    std::size_t epoch_;
    std::size_t member_;
};

/// A predicted particle state became non-finite during trajectory rollout.
class PropagationError : public Error {
public:
    PropagationError(std::size_t step, std::size_t member)
        : Error("non-finite particle state at horizon step " + std::to_string(step) +
                " for ensemble member " + std::to_string(member)),
          step_(step),
          member_(member) {}

    std::size_t step() const noexcept { return step_; }
    std::size_t member() const noexcept { return member_; }

private:
    std::size_t step_;
    std::size_t member_;
};

/// Malformed line in a log, config or checkpoint file.
class ParseError : public Error {
public:
    ParseError(const std::string& file, std::size_t line, const std::string& what)
        : Error(file + ":" + std::to_string(line) + ": " + what), file_(file), line_(line) {}

    const std::string& file() const noexcept { return file_; }
    std::size_t line() const noexcept { return line_; }

private:
    std::string file_;
    std::size_t line_;
};

}  // namespace safe_mpc
