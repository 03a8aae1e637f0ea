#ifndef FCVE_ERRORS_HPP
#define FCVE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace fcve {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// data
struct BadMagic : Error { using Error::Error; };
struct TruncatedPayload : Error { using Error::Error; };
struct RankMismatch : Error { using Error::Error; };
struct EmptyDataset : Error { using Error::Error; };

// models
struct ShapeMismatch : Error { using Error::Error; };
struct LengthMismatch : Error { using Error::Error; };
struct DivergenceDetected : Error { using Error::Error; };
struct FrozenViolation : Error { using Error::Error; };
struct UntrainedModel : Error { using Error::Error; };
struct NoClassExamples : Error { using Error::Error; };

// metrics
struct EmptyInput : Error { using Error::Error; };
struct TooFewSamples : Error { using Error::Error; };
struct NonSymmetric : Error { using Error::Error; };
struct DimensionMismatch : Error { using Error::Error; };

// cli / persistence
struct UnknownKey : Error { using Error::Error; };
struct BadValue : Error { using Error::Error; };
struct VersionUnsupported : Error { using Error::Error; };
struct Truncated : Error { using Error::Error; };
struct MissingWeights : Error { using Error::Error; };
struct MissingData : Error { using Error::Error; };
struct EmptyGrid : Error { using Error::Error; };

} // namespace fcve

#endif
