#pragma once

namespace proxdiff {
inline constexpr const char* version = "0.1.0";
}
