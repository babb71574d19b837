#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace sardet {

// All contract violations surface as sardet::Error with a message that
// names the offending quantity.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void cat_into(std::ostringstream&) {}
template <class T, class... Rest>
void cat_into(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  cat_into(os, rest...);
}
}  // namespace detail

template <class... Args>
std::string cat(const Args&... args) {
  std::ostringstream os;
  detail::cat_into(os, args...);
  return os.str();
}

template <class... Args>
[[noreturn]] void fail(const Args&... args) {
  throw Error(cat(args...));
}

template <class... Args>
void require(bool cond, const Args&... args) {
  if (!cond) fail(args...);
}

}  // namespace sardet
