#pragma once

namespace biped {

inline constexpr char kVersion[] = "0.1.0";

}  // namespace biped
