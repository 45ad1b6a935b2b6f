#pragma once

#include <stdexcept>
#include <string>

namespace affect {

/// Base class for every error thrown by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

#define AFFECT_DEFINE_ERROR(NAME)                                   \
  class NAME : public Error {                                       \
   public:                                                          \
    explicit NAME(const std::string& what) : Error(#NAME ": " + what) {} \
  }

// Tensor / layer contracts.
AFFECT_DEFINE_ERROR(ShapeMismatch);
AFFECT_DEFINE_ERROR(KernelTooLarge);
AFFECT_DEFINE_ERROR(DegenerateBatch);
AFFECT_DEFINE_ERROR(EmptySequence);

// Metrics.
AFFECT_DEFINE_ERROR(LengthMismatch);
AFFECT_DEFINE_ERROR(ZeroVariance);
AFFECT_DEFINE_ERROR(ZeroDenominator);

// Data pipeline.
AFFECT_DEFINE_ERROR(MissingImage);
AFFECT_DEFINE_ERROR(MalformedAnnotation);
AFFECT_DEFINE_ERROR(LabelOutOfRange);
AFFECT_DEFINE_ERROR(TooFewSubjects);

// Training / checkpoints.
AFFECT_DEFINE_ERROR(MissingGradient);
AFFECT_DEFINE_ERROR(EmptyDataset);
AFFECT_DEFINE_ERROR(DivergedLoss);
AFFECT_DEFINE_ERROR(IoFailure);
AFFECT_DEFINE_ERROR(CorruptCheckpoint);
AFFECT_DEFINE_ERROR(ArchMismatch);

// Network construction / CLI.
AFFECT_DEFINE_ERROR(UnknownVariant);
AFFECT_DEFINE_ERROR(InvalidOverride);

#undef AFFECT_DEFINE_ERROR

}  // namespace affect
