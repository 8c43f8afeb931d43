#pragma once

namespace portdet {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace portdet
