#pragma once

#include <array>
#include <string>

#include "hienet/errors.hpp"

namespace hienet {

/// HIE grades run 1 (normal/mild) .. 4 (severe).
inline constexpr int kNumGrades = 4;

/// Probability (or aggregated score) per grade; index 0 holds grade 1.
using GradeProbabilities = std::array<double, kNumGrades>;

inline bool valid_grade(int grade) { return grade >= 1 && grade <= kNumGrades; }

inline void require_grade(int grade, const std::string& what = "grade") {
  if (!valid_grade(grade)) {
    throw DataError(what + " " + std::to_string(grade) + " is outside 1.." +
                    std::to_string(kNumGrades));
  }
}

/// 1-based grade of the largest entry; exact ties go to the lower grade.
inline int argmax_grade(const GradeProbabilities& p) {
  int best = 0;
  for (int i = 1; i < kNumGrades; ++i) {
    if (p[i] > p[best]) best = i;
  }
  return best + 1;
}

}  // namespace hienet
