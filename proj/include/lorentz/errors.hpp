#pragma once

#include <stdexcept>
#include <string>

namespace lorentz {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define LORENTZ_ERROR(Name) \
  struct Name : Error {     \
    using Error::Error;     \
  }

LORENTZ_ERROR(DegenerateMetric);
LORENTZ_ERROR(CatalogMiss);
LORENTZ_ERROR(OutOfDiamond);
LORENTZ_ERROR(TopologyError);
LORENTZ_ERROR(DegenerateFrame);
LORENTZ_ERROR(ConditionAFailure);
LORENTZ_ERROR(RadiusExceeded);
LORENTZ_ERROR(ConstraintViolation);
LORENTZ_ERROR(ParametrixUndefined);
LORENTZ_ERROR(QuadratureFailure);
LORENTZ_ERROR(AdmissibilityError);
LORENTZ_ERROR(StageStarvation);
LORENTZ_ERROR(ConfigError);

#undef LORENTZ_ERROR

struct IntegrationFailure : Error {
  IntegrationFailure(const std::string& what, double s_last) : Error(what), s_last(s_last) {}
  double s_last;
};

struct CausticEncountered : Error {
  CausticEncountered(const std::string& what, double s_blowup) : Error(what), s_blowup(s_blowup) {}
  double s_blowup;
};

}  // namespace lorentz
