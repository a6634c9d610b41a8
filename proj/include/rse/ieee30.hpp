#pragma once

// IEEE 30-bus test network (MATPOWER case30 branch data, 100 MVA base,
// bus shunts converted to per-unit). Identical to data/ieee30.json.

#include <string_view>

namespace rse {

inline constexpr std::string_view kIeee30CaseJson = R"json({
  "n_buses": 30,
  "bus_shunts": [
    {"bus": 5, "gs": 0.0, "bs": 0.0019},
    {"bus": 24, "gs": 0.0, "bs": 0.0004}
  ],
  "branches": [
    {"from": 1, "to": 2, "r": 0.02, "x": 0.06, "b": 0.03},
    {"from": 1, "to": 3, "r": 0.05, "x": 0.19, "b": 0.02},
    {"from": 2, "to": 4, "r": 0.06, "x": 0.17, "b": 0.02},
    {"from": 3, "to": 4, "r": 0.01, "x": 0.04, "b": 0.0},
    {"from": 2, "to": 5, "r": 0.05, "x": 0.2, "b": 0.02},
    {"from": 2, "to": 6, "r": 0.06, "x": 0.18, "b": 0.02},
    {"from": 4, "to": 6, "r": 0.01, "x": 0.04, "b": 0.0},
    {"from": 5, "to": 7, "r": 0.05, "x": 0.12, "b": 0.01},
    {"from": 6, "to": 7, "r": 0.03, "x": 0.08, "b": 0.01},
    {"from": 6, "to": 8, "r": 0.01, "x": 0.04, "b": 0.0},
    {"from": 6, "to": 9, "r": 0.0, "x": 0.21, "b": 0.0},
    {"from": 6, "to": 10, "r": 0.0, "x": 0.56, "b": 0.0},
    {"from": 9, "to": 11, "r": 0.0, "x": 0.21, "b": 0.0},
    {"from": 9, "to": 10, "r": 0.0, "x": 0.11, "b": 0.0},
    {"from": 4, "to": 12, "r": 0.0, "x": 0.26, "b": 0.0},
    {"from": 12, "to": 13, "r": 0.0, "x": 0.14, "b": 0.0},
    {"from": 12, "to": 14, "r": 0.12, "x": 0.26, "b": 0.0},
    {"from": 12, "to": 15, "r": 0.07, "x": 0.13, "b": 0.0},
    {"from": 12, "to": 16, "r": 0.09, "x": 0.2, "b": 0.0},
    {"from": 14, "to": 15, "r": 0.22, "x": 0.2, "b": 0.0},
    {"from": 16, "to": 17, "r": 0.08, "x": 0.19, "b": 0.0},
    {"from": 15, "to": 18, "r": 0.11, "x": 0.22, "b": 0.0},
    {"from": 18, "to": 19, "r": 0.06, "x": 0.13, "b": 0.0},
    {"from": 19, "to": 20, "r": 0.03, "x": 0.07, "b": 0.0},
    {"from": 10, "to": 20, "r": 0.09, "x": 0.21, "b": 0.0},
    {"from": 10, "to": 17, "r": 0.03, "x": 0.08, "b": 0.0},
    {"from": 10, "to": 21, "r": 0.03, "x": 0.07, "b": 0.0},
    {"from": 10, "to": 22, "r": 0.07, "x": 0.15, "b": 0.0},
    {"from": 21, "to": 22, "r": 0.01, "x": 0.02, "b": 0.0},
    {"from": 15, "to": 23, "r": 0.1, "x": 0.2, "b": 0.0},
    {"from": 22, "to": 24, "r": 0.12, "x": 0.18, "b": 0.0},
    {"from": 23, "to": 24, "r": 0.13, "x": 0.27, "b": 0.0},
    {"from": 24, "to": 25, "r": 0.19, "x": 0.33, "b": 0.0},
    {"from": 25, "to": 26, "r": 0.25, "x": 0.38, "b": 0.0},
    {"from": 25, "to": 27, "r": 0.11, "x": 0.21, "b": 0.0},
    {"from": 28, "to": 27, "r": 0.0, "x": 0.4, "b": 0.0},
    {"from": 27, "to": 29, "r": 0.22, "x": 0.42, "b": 0.0},
    {"from": 27, "to": 30, "r": 0.32, "x": 0.6, "b": 0.0},
    {"from": 29, "to": 30, "r": 0.24, "x": 0.45, "b": 0.0},
    {"from": 8, "to": 28, "r": 0.06, "x": 0.2, "b": 0.02},
    {"from": 6, "to": 28, "r": 0.02, "x": 0.06, "b": 0.01}
  ]
}
)json";

}  // namespace rse
