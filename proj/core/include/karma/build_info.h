#pragma once

#include <string_view>

namespace karma {

// git-describe string captured at configure time.
std::string_view build_describe();
std::string_view build_version();

}  // namespace karma
