#pragma once

#include <stdexcept>
#include <string>

namespace elastopnp {

// Exit codes used by the command-line driver.
enum class ExitCode : int { ok = 0, config_error = 2, solver_failure = 3, io_error = 4 };

struct InvalidArgument : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Singular or indefinite systems, rank loss, non-finite intermediate values.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SolverFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Config schema violation; `field` names the offending key.
struct ConfigError : std::runtime_error {
    ConfigError(std::string field_name, const std::string &what)
        : std::runtime_error(field_name + ": " + what), field(std::move(field_name)) {}
    std::string field;
};

namespace detail {
inline void require(bool cond, const std::string &msg) {
    if (!cond) throw InvalidArgument(msg);
}
} // namespace detail

} // namespace elastopnp
