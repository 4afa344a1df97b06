#pragma once

namespace masca {

inline constexpr const char* kEngineVersion = "masca 0.1.0";

}  // namespace masca
