#pragma once

#include <stdexcept>
#include <string>

namespace droopnet {

/// Base class for all errors raised by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// graph construction / spectral analysis
struct DisconnectedGraph : Error { using Error::Error; };
struct DuplicateEdge : Error { using Error::Error; };
struct NonpositiveWeight : Error { using Error::Error; };
struct EigensolverFailure : Error { using Error::Error; };

// flow problem / KKT oracle
struct EnumerationTooLarge : Error { using Error::Error; };
struct NoKktPointFound : Error { using Error::Error; };
struct AmbiguousActiveSet : Error { using Error::Error; };
struct EmptyActiveSet : Error { using Error::Error; };

// dynamics
struct DimensionMismatch : Error { using Error::Error; };
struct NegativeDualState : Error { using Error::Error; };
struct NonFiniteState : Error { using Error::Error; };

// rate certification
struct AllNodesActive : Error { using Error::Error; };
struct NonpositiveD0 : Error { using Error::Error; };
struct LicqViolated : Error { using Error::Error; };
struct NoPositiveBeta : Error { using Error::Error; };
struct EdgeExists : Error { using Error::Error; };
struct DegreeCapViolated : Error { using Error::Error; };
struct WeightTooLarge : Error { using Error::Error; };

// scenario front end
struct ParseError : Error { using Error::Error; };
struct ValidationError : Error { using Error::Error; };
struct SimulationDiverged : Error { using Error::Error; };
struct InsufficientDecay : Error { using Error::Error; };

}  // namespace droopnet
