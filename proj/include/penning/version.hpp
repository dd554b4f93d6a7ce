#pragma once

namespace penning {

inline constexpr const char* version = "1.0.0";
inline constexpr int config_schema_version = 1;

} // namespace penning
