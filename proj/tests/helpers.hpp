#pragma once

#include <string>
#include <vector>

#include "doctest.h"
#include "kpiforge/error.hpp"
#include "kpiforge/rng.hpp"
#include "kpiforge/tabular.hpp"
#include "random_tables.hpp"

namespace testing {

inline kpiforge::ErrorCode code_of(const auto& fn) {
  try {
    fn();
  } catch (const kpiforge::Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return kpiforge::ErrorCode::IoError;
}

inline std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = i;
  return out;
}

}  // namespace testing
