#pragma once

namespace hazardfield {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace hazardfield
