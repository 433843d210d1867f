#pragma once

#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>

namespace criqa {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Mismatched dimensions (image vs image, map vs map, token shapes).
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Invalid argument values or violated preconditions.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// File format or filesystem failures.
class IoError : public Error {
public:
    using Error::Error;
};

/// Bad configuration documents or unknown override keys.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Corrupt or incompatible checkpoint archives.
class CheckpointError : public Error {
public:
    using Error::Error;
};

/// Correlation undefined (constant series, or fewer than two usable pairs).
class UndefinedCorrelationError : public Error {
public:
    using Error::Error;
};

/// Non-finite loss or other unrecoverable optimization failures.
class TrainingError : public Error {
public:
    using Error::Error;
};

/// Warning sink, replaceable in tests. Default writes one line to stderr.
inline std::function<void(const std::string&)>& warn_handler() {
    static std::function<void(const std::string&)> handler =
        [](const std::string& msg) { std::cerr << "warn: " << msg << "\n"; };
    return handler;
}

inline void warn(const std::string& msg) { warn_handler()(msg); }

}  // namespace criqa
