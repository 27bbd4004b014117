#pragma once

#include <stdexcept>
#include <string>

namespace cvm {

// Error categories used across the library. Each carries a short kind tag so
// the CLI can emit single-line machine-parseable diagnostics.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& msg)
        : std::runtime_error(kind + ": " + msg), kind_(std::move(kind)) {}
    const std::string& kind() const { return kind_; }

private:
    std::string kind_;
};

struct DimensionError : Error {
    explicit DimensionError(const std::string& msg) : Error("dimension", msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config", msg) {}
};

struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error("format", msg) {}
};

struct CheckpointError : Error {
    explicit CheckpointError(const std::string& msg) : Error("checkpoint", msg) {}
};

struct DataError : Error {
    explicit DataError(const std::string& msg) : Error("data", msg) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error("numeric", msg) {}
};

struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error("contract", msg) {}
};

struct MetricError : Error {
    explicit MetricError(const std::string& msg) : Error("metric", msg) {}
};

struct PaletteError : Error {
    explicit PaletteError(const std::string& msg) : Error("palette", msg) {}
};

} // namespace cvm
