#pragma once

#include <stdexcept>
#include <string>

namespace tna {

/// Precondition or argument violation (bad dimension, zero vector, out-of-range index).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Tilt loop hit its factor budget before the mRC target was exceeded.
class SaturationError : public std::runtime_error {
public:
    SaturationError(const std::string& what, double plateau_mrc_deg, long factors)
        : std::runtime_error(what), plateau_mrc_deg_(plateau_mrc_deg), factors_(factors) {}

    double plateau_mrc_deg() const noexcept { return plateau_mrc_deg_; }
    long factors() const noexcept { return factors_; }

private:
    double plateau_mrc_deg_;
    long factors_;
};

/// Object used before it was fitted/initialised.
class StateError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// On-disk data problems. Subclasses distinguish the load failure modes.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ChecksumError : public FormatError {
public:
    ChecksumError(const std::string& array, const std::string& what)
        : FormatError(what), array_(array) {}
    const std::string& array() const noexcept { return array_; }

private:
    std::string array_;
};

class VersionError : public FormatError {
public:
    using FormatError::FormatError;
};

class TruncatedError : public FormatError {
public:
    using FormatError::FormatError;
};

}  // namespace tna
