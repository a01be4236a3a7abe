#pragma once

#include <stdexcept>

namespace tepid {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Operating point outside the solvable region of the port model.
struct InfeasibleOperatingPoint : Error { using Error::Error; };

/// Iterative solver exhausted its iteration budget.
struct NoConvergence : Error { using Error::Error; };

/// Solver finished but the result violates physical constraints or the fit gate.
struct InfeasibleSolution : Error { using Error::Error; };

/// Voltage-dependent load loop failed to reach a fixed point.
struct AlgebraicLoopDiverged : Error { using Error::Error; };

/// Corruption parameters outside their documented domain.
struct BadCorruptionSpec : Error { using Error::Error; };

/// Window longer than the series, or too short to hold one window.
struct WindowTooShort : Error { using Error::Error; };

/// Feature construction produced zero usable rows.
struct EmptyFeatureSet : Error { using Error::Error; };

/// Design matrix is numerically rank deficient.
struct RankDeficient : Error { using Error::Error; };

/// Quadratic coefficient rows admit no real sensitivity pair.
struct InconsistentQuadratic : Error { using Error::Error; };

/// End-to-end identification cannot produce a usable estimate.
struct EstimationInfeasible : Error { using Error::Error; };

/// Correlation coefficient at or beyond +/-1.
struct DegenerateCollinearity : Error { using Error::Error; };

/// Malformed configuration input or unknown key.
struct ConfigError : Error { using Error::Error; };

/// Malformed measurement or feature data input.
struct DataError : Error { using Error::Error; };

/// A summary was requested over zero usable values.
struct EmptyInput : Error { using Error::Error; };

}  // namespace tepid
