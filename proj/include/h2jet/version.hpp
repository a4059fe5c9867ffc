#pragma once

namespace h2jet {

inline constexpr const char* version_string = "0.1.0";

}  // namespace h2jet
