#pragma once

#include <stdexcept>
#include <string>

namespace jhgrf {

// Root of every error the library throws. Each subclass corresponds to one
// named failure mode so callers (and the CLI exit-code mapping) can catch by
// category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define JHGRF_DEFINE_ERROR(Name, Base)      \
  class Name : public Base {               \
   public:                                 \
    using Base::Base;                      \
  };

// tensor core
JHGRF_DEFINE_ERROR(ShapeMismatch, Error)
JHGRF_DEFINE_ERROR(NonFiniteValue, Error)
JHGRF_DEFINE_ERROR(DomainError, Error)
JHGRF_DEFINE_ERROR(NotScalar, Error)
JHGRF_DEFINE_ERROR(DetachedTensor, Error)

// model
JHGRF_DEFINE_ERROR(ConfigError, Error)
JHGRF_DEFINE_ERROR(ZeroNormEmbedding, Error)
JHGRF_DEFINE_ERROR(InvalidTemperature, ConfigError)
JHGRF_DEFINE_ERROR(EmptyMask, Error)
JHGRF_DEFINE_ERROR(CheckpointError, Error)
JHGRF_DEFINE_ERROR(CheckpointMismatch, CheckpointError)

// data
JHGRF_DEFINE_ERROR(DataError, Error)
JHGRF_DEFINE_ERROR(ParseError, DataError)
JHGRF_DEFINE_ERROR(RaggedRows, DataError)
JHGRF_DEFINE_ERROR(TooShort, DataError)

// training
JHGRF_DEFINE_ERROR(Diverged, Error)
JHGRF_DEFINE_ERROR(EmptyEvaluation, Error)

#undef JHGRF_DEFINE_ERROR

}  // namespace jhgrf
