#pragma once

namespace consis {

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace consis
