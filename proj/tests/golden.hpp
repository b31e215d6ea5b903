#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>

#include "test_util.hpp"

namespace kfv::test {

// Regression values recorded from a verified build. Set KFV_UPDATE_GOLDEN=1
// to rewrite them.
inline void check_golden(const std::string& name, const std::vector<double>& values, double tol = 1e-12) {
  const std::string path = fixture("golden/" + name + ".txt");
  if (std::getenv("KFV_UPDATE_GOLDEN")) {
    std::ofstream out(path);
    char buf[64];
    for (double v : values) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << buf << '\n';
    }
    return;
  }
  std::ifstream in(path);
  REQUIRE_MESSAGE(in.good(), "missing golden file " << path);
  std::vector<double> expected;
  double x;
  while (in >> x) expected.push_back(x);
  REQUIRE(expected.size() == values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    CHECK_MESSAGE(std::abs(values[i] - expected[i]) <= tol * std::max(1.0, std::abs(expected[i])),
                  name << "[" << i << "] " << values[i] << " vs " << expected[i]);
}

template <typename Derived>
std::vector<double> flatten(const Eigen::DenseBase<Derived>& m) {
  std::vector<double> out;
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(m(r, c));
  return out;
}

}  // namespace kfv::test
