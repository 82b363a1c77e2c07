#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace msdepth {

enum class Spectrum : std::uint8_t { Rgb = 0, Nir = 1, Thr = 2 };

inline constexpr std::array<Spectrum, 3> kSpectra{Spectrum::Rgb, Spectrum::Nir, Spectrum::Thr};

enum class Condition : std::uint8_t { Day = 0, Night = 1, Rain = 2 };

inline constexpr std::array<Condition, 3> kConditions{Condition::Day, Condition::Night,
                                                      Condition::Rain};

constexpr std::size_t index_of(Spectrum s) { return static_cast<std::size_t>(s); }
constexpr std::size_t index_of(Condition c) { return static_cast<std::size_t>(c); }

std::string_view to_string(Spectrum s);
std::string_view to_string(Condition c);

// Both throw ConfigError on unknown names.
Spectrum parse_spectrum(std::string_view name);
Condition parse_condition(std::string_view name);

/// Number of image channels a spectrum is captured with.
constexpr int native_channels(Spectrum s) { return s == Spectrum::Rgb ? 3 : 1; }

}  // namespace msdepth
