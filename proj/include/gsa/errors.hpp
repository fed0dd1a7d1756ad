#pragma once

#include <stdexcept>
#include <string>

namespace gsa {

struct GsaError : std::runtime_error {
    explicit GsaError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeMismatch : GsaError {
    using GsaError::GsaError;
};

struct DivisibilityError : GsaError {
    using GsaError::GsaError;
};

struct ZeroSizeError : GsaError {
    using GsaError::GsaError;
};

struct IndexOutOfRange : GsaError {
    using GsaError::GsaError;
};

struct NonFiniteInput : GsaError {
    using GsaError::GsaError;
};

struct InvalidTiling : GsaError {
    using GsaError::GsaError;
};

struct InvalidStride : GsaError {
    using GsaError::GsaError;
};

struct EmptySelection : GsaError {
    using GsaError::GsaError;
};

struct ContextMismatch : GsaError {
    using GsaError::GsaError;
};

struct ConfigParseError : GsaError {
    using GsaError::GsaError;
};

struct DegenerateInput : GsaError {
    using GsaError::GsaError;
};

struct NonDeterministicForward : GsaError {
    using GsaError::GsaError;
};

}  // namespace gsa
