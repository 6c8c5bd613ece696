#pragma once

#include <stdexcept>
#include <string>

namespace accessguard {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

// Landmark triangle (points 0, 33, 16) has no interior angle.
class DegenerateGeometry : public Error {
public:
    using Error::Error;
};

// A cropped patch rectangle came out empty or inverted.
class DegenerateLandmarks : public Error {
public:
    DegenerateLandmarks(std::string patch, const std::string& what)
        : Error(what), patch_(std::move(patch)) {}

    const std::string& patch() const { return patch_; }

private:
    std::string patch_;
};

class InvalidState : public Error {
public:
    using Error::Error;
};

class NotFound : public Error {
public:
    using Error::Error;
};

class DuplicatePerson : public Error {
public:
    using Error::Error;
};

class StaleReference : public Error {
public:
    using Error::Error;
};

// Raised for I/O failures on the data directory. Callers may retry once the
// underlying filesystem problem is fixed; the log is never left half-written.
class StoreError : public Error {
public:
    using Error::Error;
};

class QualityGateError : public Error {
public:
    using Error::Error;
};

class AttributeStageError : public Error {
public:
    using Error::Error;
};

} // namespace accessguard
