#pragma once

#include "effcl/tensor.hpp"

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace effcl {

enum class CurriculumMode { Discrete, Continuous, NoCurr };

/// "discrete" | "continuous" | "none"
std::string to_string(CurriculumMode mode);
CurriculumMode parse_curriculum_mode(std::string_view name);

struct CurriculumPolicy {
  CurriculumMode mode = CurriculumMode::Discrete;
  double min_level = 0.01;
  double max_level = 0.1;
  int num_stages = 10;

  void validate() const;
  /// The num_stages evenly spaced levels from min_level to max_level.
  std::vector<double> stage_levels() const;
  bool operator==(const CurriculumPolicy&) const = default;
};

/// Augmentation level for a 0-based optimizer step. Only NoCurr consumes rng.
double level_at(const CurriculumPolicy& policy, std::size_t step, std::size_t total_steps, Rng& rng);

}  // namespace effcl
