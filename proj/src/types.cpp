#include "msdepth/types.hpp"

#include "msdepth/errors.hpp"

namespace msdepth {

std::string_view to_string(Spectrum s) {
  switch (s) {
    case Spectrum::Rgb:
      return "rgb";
    case Spectrum::Nir:
      return "nir";
    case Spectrum::Thr:
      return "thr";
  }
  return "?";
}

std::string_view to_string(Condition c) {
  switch (c) {
    case Condition::Day:
      return "day";
    case Condition::Night:
      return "night";
    case Condition::Rain:
      return "rain";
  }
  return "?";
}

Spectrum parse_spectrum(std::string_view name) {
  for (Spectrum s : kSpectra) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown spectrum '" + std::string(name) + "'");
}

Condition parse_condition(std::string_view name) {
  for (Condition c : kConditions) {
    if (to_string(c) == name) return c;
  }
  throw ConfigError("unknown condition '" + std::string(name) + "'");
}

}  // namespace msdepth
