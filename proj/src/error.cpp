#include "nsk/error.hpp"

#include <sstream>

namespace nsk {

std::string Error::describe() const {
  std::ostringstream os;
  if (line_ > 0) {
    os << "line " << line_;
    if (column_ > 0) os << ", column " << column_;
    os << ": ";
  }
  os << message_;
  return os.str();
}

}  // namespace nsk
