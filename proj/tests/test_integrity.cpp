#include <gtest/gtest.h>

#include "mpcil/integrity.hpp"

namespace mpcil {
namespace {

TEST(Integrity, SuitePasses) {
  const IntegrityReport r = RunIntegritySuite(7);
  EXPECT_TRUE(r.AllPassed()) << r.Format();
  EXPECT_EQ(r.checks.size(), 9u);
}

TEST(Integrity, RelativeErrorFloor) {
  const Eigen::Vector2d a(1e-9, 0), b(0, 0);
  EXPECT_NEAR(RelativeError(a, b), 1e-3, 1e-15);
  EXPECT_NEAR(RelativeError(Eigen::Vector2d(1, 0), Eigen::Vector2d(1, 1)),
              1.0 / std::sqrt(2.0), 1e-15);
}

}  // namespace
}  // namespace mpcil
