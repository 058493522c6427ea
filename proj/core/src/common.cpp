#include "wr/common.hpp"

namespace wr {

bool all_finite(const Vector& v) { return v.allFinite(); }
bool all_finite(const Matrix& m) { return m.allFinite(); }

Vector l2_normalized(const Vector& v) {
  const double norm = v.norm();
  if (norm == 0.0) return v;
  return v / norm;
}

}  // namespace wr
