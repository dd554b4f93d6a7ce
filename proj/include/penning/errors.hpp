#pragma once

#include <stdexcept>
#include <string>

// Error taxonomy. The CLI maps these to distinct exit codes: configuration
// problems (bad input values, malformed config files), physics problems
// (unstable trap, diverging integration, degenerate mode branches) and fit
// failures are reported separately so scripts can tell them apart.

namespace penning {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// -- configuration / input validation ---------------------------------------
struct ConfigError : Error {
    using Error::Error;
};

// -- physics -----------------------------------------------------------------
struct PhysicsError : Error {
    using Error::Error;
};

// Radial confinement requires omega_c^2 > 2 omega_z^2.
struct UnstableTrapError : PhysicsError {
    using PhysicsError::PhysicsError;
};

// delta0 = 0: the dressed branches coincide and the damping formula is 0/0.
struct DegenerateBranchError : PhysicsError {
    using PhysicsError::PhysicsError;
};

// |u| exceeded the configured bound during integration.
struct DivergenceError : PhysicsError {
    using PhysicsError::PhysicsError;
};

// Trajectory too short / too coarsely sampled for the requested analysis.
struct InsufficientDataError : PhysicsError {
    using PhysicsError::PhysicsError;
};

// -- fitting -----------------------------------------------------------------
struct FitError : Error {
    using Error::Error;
};

struct SingularJacobianError : FitError {
    using FitError::FitError;
};

// Fewer valid scan points than the fit needs.
struct ScanFitError : FitError {
    using FitError::FitError;
};

// A data point matches both crossing branches within tolerance.
struct BranchAssignmentError : FitError {
    using FitError::FitError;
};

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int config = 2;
inline constexpr int physics = 3;
inline constexpr int fit = 4;
} // namespace exit_code

} // namespace penning
