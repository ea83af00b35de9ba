#pragma once

#include <stdexcept>
#include <string>

namespace t2i {

/// Base of every error raised by the library. Each subclass maps to one
/// failure surface so callers (and the CLI exit-code table) can dispatch on it.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define T2I_DEFINE_ERROR(Name)            \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
  };

T2I_DEFINE_ERROR(NumericsError)
T2I_DEFINE_ERROR(ShapeError)
T2I_DEFINE_ERROR(LinAlgError)
T2I_DEFINE_ERROR(EncodingError)
T2I_DEFINE_ERROR(EmptyCaptionError)
T2I_DEFINE_ERROR(DatasetError)
T2I_DEFINE_ERROR(IoError)
T2I_DEFINE_ERROR(VocabError)
T2I_DEFINE_ERROR(MaskError)
T2I_DEFINE_ERROR(BatchError)
T2I_DEFINE_ERROR(TrainingError)
T2I_DEFINE_ERROR(StatsError)
T2I_DEFINE_ERROR(ConfigError)
T2I_DEFINE_ERROR(IncompatibleError)

#undef T2I_DEFINE_ERROR

}  // namespace t2i
