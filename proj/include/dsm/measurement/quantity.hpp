#pragma once

#include <array>
#include <optional>
#include <string_view>

namespace dsm {

enum class QuantityKind {
  acceleration,
  temperature,
  humidity,
  pressure,
  air_speed,
  rotational_speed,
  dimensionless,
};

inline constexpr std::array<QuantityKind, 7> all_quantity_kinds{
    QuantityKind::acceleration,  QuantityKind::temperature,
    QuantityKind::humidity,      QuantityKind::pressure,
    QuantityKind::air_speed,     QuantityKind::rotational_speed,
    QuantityKind::dimensionless,
};

/// Each kind has exactly one canonical unit.
constexpr std::string_view canonical_unit(QuantityKind kind) noexcept {
  switch (kind) {
  case QuantityKind::acceleration: return "m/s²";
  case QuantityKind::temperature: return "°C";
  case QuantityKind::humidity: return "%RH";
  case QuantityKind::pressure: return "hPa";
  case QuantityKind::air_speed: return "m/s";
  case QuantityKind::rotational_speed: return "rpm";
  case QuantityKind::dimensionless: return "1";
  }
  return "1";
}

constexpr std::string_view kind_name(QuantityKind kind) noexcept {
  switch (kind) {
  case QuantityKind::acceleration: return "acceleration";
  case QuantityKind::temperature: return "temperature";
  case QuantityKind::humidity: return "humidity";
  case QuantityKind::pressure: return "pressure";
  case QuantityKind::air_speed: return "air_speed";
  case QuantityKind::rotational_speed: return "rotational_speed";
  case QuantityKind::dimensionless: return "dimensionless";
  }
  return "dimensionless";
}

inline std::optional<QuantityKind> kind_from_unit(std::string_view unit) {
  for (auto k : all_quantity_kinds)
    if (canonical_unit(k) == unit)
      return k;
  return std::nullopt;
}

inline std::optional<QuantityKind> kind_from_name(std::string_view name) {
  for (auto k : all_quantity_kinds)
    if (kind_name(k) == name)
      return k;
  return std::nullopt;
}

struct Quantity {
  QuantityKind kind = QuantityKind::dimensionless;

  std::string_view unit() const noexcept { return canonical_unit(kind); }
  bool operator==(const Quantity &) const = default;
};

} // namespace dsm
