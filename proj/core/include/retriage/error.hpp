#pragma once

#include <stdexcept>
#include <string>

namespace retriage {

/// Base class for every error raised by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed input text (CSV rows, config files). Carries a 1-based row
/// number when one applies, 0 otherwise.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t row = 0)
        : Error(row ? what + " (row " + std::to_string(row) + ")" : what), row_(row) {}
    std::size_t row() const { return row_; }

private:
    std::size_t row_;
};

/// Well-formed input that violates a domain constraint (grade out of range,
/// non-positive std, bad config value).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Duplicate (source, id) pair while merging manifests.
class CollisionError : public Error {
public:
    using Error::Error;
};

/// Geometric failure: empty retina mask, degenerate circle, empty point set.
class GeometryError : public Error {
public:
    using Error::Error;
};

/// Tensor shape mismatch; message names the primitive and both shapes.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// API misuse caught at runtime (backward on a non-scalar, and similar).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Metric requested on inputs where it is mathematically undefined.
class MetricError : public Error {
public:
    using Error::Error;
};

/// Synthetic image generation could not satisfy its constraints.
class GenerationError : public Error {
public:
    using Error::Error;
};

/// Run-configuration problems (unknown keys, missing seed, bad paths).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Model file problems, discriminated by kind so callers can react to
/// corruption differently from version skew.
class ModelIoError : public Error {
public:
    enum class Kind { BadMagic, CrcMismatch, Version, Bounds, Invalid };

    ModelIoError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

}  // namespace retriage
