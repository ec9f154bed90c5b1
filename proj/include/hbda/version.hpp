#pragma once

#include <string>

namespace hbda {

/// "hbda <semver> (<git sha or 'unknown'>)", embedded in every manifest.
std::string version_string();

}  // namespace hbda
