#pragma once

namespace calsbi {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace calsbi
