#pragma once

#include <stdexcept>
#include <string>

namespace vfd {

/// Base of every error the library raises. `category()` is a stable,
/// machine-parsable token used by the CLI when mapping errors to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual const char* category() const noexcept = 0;
};

/// A caller broke a documented precondition (shape algebra, scalar loss, ...).
class ContractViolation : public Error {
public:
    using Error::Error;
    const char* category() const noexcept override { return "contract"; }
};

/// Invalid or inconsistent configuration (unknown architecture, bad epsilon, ...).
class ConfigError : public Error {
public:
    using Error::Error;
    const char* category() const noexcept override { return "config"; }
};

/// Malformed dataset file.
class IngestionError : public Error {
public:
    using Error::Error;
    const char* category() const noexcept override { return "ingestion"; }
};

/// Checkpoint or container that cannot be loaded as requested.
class CheckpointError : public Error {
public:
    using Error::Error;
    const char* category() const noexcept override { return "checkpoint"; }
};

/// Non-finite loss during training.
class TrainingAbort : public Error {
public:
    using Error::Error;
    const char* category() const noexcept override { return "training"; }
};

class IoError : public Error {
public:
    using Error::Error;
    const char* category() const noexcept override { return "io"; }
};

}  // namespace vfd
