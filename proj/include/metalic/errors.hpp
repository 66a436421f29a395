#pragma once

#include <stdexcept>
#include <string>

namespace metalic {

/// Base class for every error raised by the library. Each subclass names a
/// distinct failure so callers (and the CLI) can map it to a diagnostic.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "Error"; }
};

#define METALIC_DEFINE_ERROR(Name)                                  \
  class Name : public Error {                                       \
   public:                                                          \
    using Error::Error;                                             \
    const char* kind() const noexcept override { return #Name; }    \
  }

// core
METALIC_DEFINE_ERROR(DegenerateTask);
METALIC_DEFINE_ERROR(InsufficientData);
METALIC_DEFINE_ERROR(UnknownTask);
METALIC_DEFINE_ERROR(UnknownToken);
// landscapes
METALIC_DEFINE_ERROR(InvalidSpec);
METALIC_DEFINE_ERROR(InsufficientSpace);
// data
METALIC_DEFINE_ERROR(ParseError);
METALIC_DEFINE_ERROR(DuplicateSequence);
METALIC_DEFINE_ERROR(FormatError);
METALIC_DEFINE_ERROR(ShapeMismatch);
METALIC_DEFINE_ERROR(IOError);
// embed / model
METALIC_DEFINE_ERROR(MissingEmbedding);
METALIC_DEFINE_ERROR(InvalidConfig);
METALIC_DEFINE_ERROR(NonFiniteActivation);
// objective / train
METALIC_DEFINE_ERROR(LengthMismatch);
METALIC_DEFINE_ERROR(OutOfRange);
METALIC_DEFINE_ERROR(NonFiniteLoss);
// adapt / eval
METALIC_DEFINE_ERROR(SupportTooSmall);
METALIC_DEFINE_ERROR(EmptySupport);
METALIC_DEFINE_ERROR(TaskTooSmall);
METALIC_DEFINE_ERROR(UnknownAblation);

#undef METALIC_DEFINE_ERROR

}  // namespace metalic
