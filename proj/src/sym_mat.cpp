#include "effid/sym_mat.hpp"

#include <ostream>

namespace effid {

std::ostream& operator<<(std::ostream& os, const SymMat& m) {
  return os << "[" << m.a11 << ", " << m.a12 << "; " << m.a12 << ", " << m.a22 << "]";
}

}  // namespace effid
