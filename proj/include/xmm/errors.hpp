#ifndef XMM_ERRORS_HPP
#define XMM_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace xmm {

// Error taxonomy used across the library. Each type maps to one failure
// class surfaced by the CLI (runtime failure = exit 1, usage = exit 2).

struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error("dimension error: " + msg) {}
};

struct IndexError : std::runtime_error {
    explicit IndexError(const std::string& msg) : std::runtime_error("index error: " + msg) {}
};

struct InputError : std::runtime_error {
    explicit InputError(const std::string& msg) : std::runtime_error("input error: " + msg) {}
};

struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error("contract error: " + msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("configuration error: " + msg) {}
};

struct SwapError : std::runtime_error {
    explicit SwapError(const std::string& msg) : std::runtime_error("swap error: " + msg) {}
};

struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error("parse error: " + msg) {}
};

struct SplitError : std::runtime_error {
    explicit SplitError(const std::string& msg) : std::runtime_error("split error: " + msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error("I/O error: " + msg) {}
};

struct GenerationError : std::runtime_error {
    explicit GenerationError(const std::string& msg) : std::runtime_error("generation error: " + msg) {}
};

}  // namespace xmm

#endif
