#include "hbda/version.hpp"

#ifndef HBDA_VERSION
#define HBDA_VERSION "0.0.0"
#endif
#ifndef HBDA_GIT_SHA
#define HBDA_GIT_SHA "unknown"
#endif

namespace hbda {

std::string version_string() { return std::string("hbda ") + HBDA_VERSION + " (" + HBDA_GIT_SHA + ")"; }

}  // namespace hbda
