#pragma once

#include <stdexcept>
#include <string>

namespace hlmbo {

/// Base class for every error raised by the library. `kind()` returns the
/// stable error name used in JSON error payloads and CLI diagnostics.
class Error : public std::runtime_error {
public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

private:
  std::string kind_;
};

#define HLMBO_DEFINE_ERROR(Name)                                               \
  class Name : public Error {                                                  \
  public:                                                                      \
    explicit Name(const std::string& what) : Error(#Name, what) {}             \
  }

// task domain
HLMBO_DEFINE_ERROR(EmptyRequest);
HLMBO_DEFINE_ERROR(InvalidFamily);
HLMBO_DEFINE_ERROR(DomainError);
HLMBO_DEFINE_ERROR(RegretUnavailable);
HLMBO_DEFINE_ERROR(InvalidSpace);

// surrogate
HLMBO_DEFINE_ERROR(InvalidConfig);
HLMBO_DEFINE_ERROR(InsufficientData);
HLMBO_DEFINE_ERROR(TrainingDiverged);
HLMBO_DEFINE_ERROR(ShapeError);
HLMBO_DEFINE_ERROR(CheckpointError);

// preference
HLMBO_DEFINE_ERROR(HypothesisUnavailable);
HLMBO_DEFINE_ERROR(ElicitationAborted);
HLMBO_DEFINE_ERROR(FitError);
HLMBO_DEFINE_ERROR(ModelNotFitted);
HLMBO_DEFINE_ERROR(InvalidDataset);

// acquisition
HLMBO_DEFINE_ERROR(InvalidPosterior);

// explain
HLMBO_DEFINE_ERROR(BackgroundRequired);
HLMBO_DEFINE_ERROR(LimeFitError);

// orchestrator / session service
HLMBO_DEFINE_ERROR(PhaseError);
HLMBO_DEFINE_ERROR(NotFound);
HLMBO_DEFINE_ERROR(BadRequest);
HLMBO_DEFINE_ERROR(RecordError);

// bench
HLMBO_DEFINE_ERROR(ConfigError);
HLMBO_DEFINE_ERROR(NothingToReport);

#undef HLMBO_DEFINE_ERROR

}  // namespace hlmbo
