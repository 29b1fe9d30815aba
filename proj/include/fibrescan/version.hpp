#ifndef FIBRESCAN_VERSION_HPP
#define FIBRESCAN_VERSION_HPP

namespace fibrescan {
inline constexpr const char* kVersion = "0.1.0";
}

#endif
