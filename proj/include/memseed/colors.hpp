// Closed color-name registry used by scene records and the mock perception
// backend. Names are underscore-joined; each carries an RGB anchor so frames
// can be quantized to the nearest registry color deterministically.
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "memseed/common.hpp"

namespace memseed {

struct RegistryColor {
  const char* name;
  std::uint8_t r, g, b;
};

inline const std::vector<RegistryColor>& color_registry() {
  static const std::vector<RegistryColor> registry = {
      {"Black", 16, 16, 16},          {"White", 245, 245, 245},
      {"Off_White", 237, 232, 222},   {"Cream", 245, 237, 203},
      {"Light_Gray", 200, 200, 200},  {"Gray", 128, 128, 128},
      {"Dark_Gray", 72, 72, 72},      {"Silver", 176, 180, 185},
      {"Brown", 133, 94, 66},         {"Dark_Brown", 74, 51, 36},
      {"Tan", 196, 170, 132},         {"Khaki", 189, 183, 130},
      {"Red", 205, 35, 40},           {"Dark_Red", 130, 20, 22},
      {"Maroon", 94, 22, 37},         {"Orange", 235, 125, 30},
      {"Gold", 212, 175, 55},         {"Yellow", 240, 210, 50},
      {"Olive", 118, 120, 52},        {"Mud_Green", 92, 96, 48},
      {"Soft_Green", 160, 200, 150},  {"Light_Green", 134, 214, 118},
      {"Green", 50, 150, 60},         {"Bright_Green", 60, 225, 70},
      {"Dark_Green", 24, 86, 38},     {"Emerald", 25, 160, 110},
      {"Turquoise", 55, 200, 190},    {"Cyan", 70, 215, 230},
      {"Sky_Blue", 125, 190, 235},    {"Blue", 45, 95, 200},
      {"Dark_Blue", 22, 45, 110},     {"Navy", 14, 25, 72},
      {"Lavender", 185, 165, 220},    {"Purple", 120, 55, 160},
      {"Magenta", 200, 50, 170},      {"Pink", 235, 150, 185},
      {"Dark_Pink", 200, 80, 130},
  };
  return registry;
}

inline bool is_registry_color(std::string_view name) {
  const auto& reg = color_registry();
  return std::any_of(reg.begin(), reg.end(), [&](const RegistryColor& c) { return name == c.name; });
}

// Nearest registry color by squared RGB distance; ties go to the first entry
// in registry order so quantization is deterministic.
inline const RegistryColor& nearest_registry_color(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const auto& reg = color_registry();
  const RegistryColor* best = &reg.front();
  long best_d = -1;
  for (const auto& c : reg) {
    long dr = static_cast<long>(c.r) - r;
    long dg = static_cast<long>(c.g) - g;
    long db = static_cast<long>(c.b) - b;
    long d = dr * dr + dg * dg + db * db;
    if (best_d < 0 || d < best_d) {
      best_d = d;
      best = &c;
    }
  }
  return *best;
}

}  // namespace memseed
