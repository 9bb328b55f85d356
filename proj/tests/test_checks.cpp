#include <gtest/gtest.h>

#include <set>

#include "fet/checks.hpp"

using namespace fet;

TEST(Checks, OpSuitePasses) {
  const auto rows = checks::op_suite(7);
  EXPECT_GE(rows.size(), 10u);
  std::set<std::string> names;
  for (const auto& r : rows) {
    EXPECT_TRUE(r.pass()) << r.name << " " << r.result.max_rel_error << " at " << r.result.worst;
    EXPECT_EQ(r.tol, 1e-5);
    names.insert(r.name);
  }
  EXPECT_EQ(names.size(), rows.size());
}

TEST(Checks, FetBlockPasses) {
  const auto row = checks::fet_block_check(1);
  EXPECT_TRUE(row.pass()) << row.result.max_rel_error;
  EXPECT_EQ(row.tol, 1e-4);
}

TEST(Checks, EmptyCheckIsNotAPass) {
  checks::CheckRow row;
  row.tol = 1.0;
  EXPECT_FALSE(row.pass());
}
