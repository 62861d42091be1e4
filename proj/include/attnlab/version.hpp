#pragma once

namespace attnlab {

inline constexpr const char* kToolVersion = "attnlab 0.1.0";

}  // namespace attnlab
