#pragma once

#include <stdexcept>

namespace motordiag {

// Base type for every library error so callers can catch broadly.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// audio
struct MalformedHeader : Error { using Error::Error; };
struct UnsupportedEncoding : Error { using Error::Error; };
struct EmptyAudio : Error { using Error::Error; };
struct WindowTooShort : Error { using Error::Error; };
struct EmptyDataset : Error { using Error::Error; };
struct AmbiguousLabel : Error { using Error::Error; };

// spectral
struct EmptyInput : Error { using Error::Error; };
struct EmptyBand : Error { using Error::Error; };

// networks / sampling
struct DimensionMismatch : Error { using Error::Error; };
struct LengthMismatch : Error { using Error::Error; };
struct NonFiniteLoss : Error { using Error::Error; };
struct NonFiniteLogJoint : Error { using Error::Error; };
struct DivergentTrajectory : Error { using Error::Error; };

// evaluation / io
struct DatasetTooSmall : Error { using Error::Error; };
struct IoFailure : Error { using Error::Error; };
struct ModelFeatureMismatch : Error { using Error::Error; };

}  // namespace motordiag
