#include <gtest/gtest.h>

#include "gcnet/gradient_suite.hpp"

using namespace gcnet;

TEST(GradientSuite, EveryCheckPasses) {
  const auto results = run_gradient_suite(1);
  ASSERT_GE(results.size(), 11u);
  for (const auto& r : results) {
    EXPECT_TRUE(r.report.finite) << r.name;
    EXPECT_GT(r.report.checked, 0u) << r.name;
    EXPECT_LT(r.report.max_relative_error, r.tolerance) << r.name;
    EXPECT_TRUE(r.report.passed) << r.name;
  }
}
