#pragma once

#include <stdexcept>
#include <string>

namespace imlsp {

// Error taxonomy used across the toolkit. Everything derives from
// imlsp::Error so callers can catch the whole family at the CLI boundary.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor/operator shapes do not conform.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid configuration (hyperparameters, grid construction, conv geometry).
struct ConfigError : Error {
    using Error::Error;
};

// Malformed or inconsistent input data (records, files, manifests).
struct DataError : Error {
    using Error::Error;
};

// API misuse (e.g. censored target passed where an exact one is required).
struct UsageError : Error {
    using Error::Error;
};

// Checkpoint file is unreadable, truncated or incompatible.
struct CheckpointError : Error {
    using Error::Error;
};

// A metric has no defined value on the given sample (no comparable pairs,
// no positives, ...).
struct MetricUndefinedError : Error {
    using Error::Error;
};

}  // namespace imlsp
