#include "effcl/curriculum.hpp"

#include <cmath>

namespace effcl {

namespace {

// Rounds to a 1e-12 grid.
double snap(double x) { return std::round(x * 1e12) / 1e12; }

double stage_level(const CurriculumPolicy& p, std::size_t stage) {
  if (p.num_stages == 1) return p.min_level;
  const double t = static_cast<double>(stage) / static_cast<double>(p.num_stages - 1);
  return snap(std::lerp(p.min_level, p.max_level, t));
}

}  // namespace

std::string to_string(CurriculumMode mode) {
  switch (mode) {
    case CurriculumMode::Discrete: return "discrete";
    case CurriculumMode::Continuous: return "continuous";
    case CurriculumMode::NoCurr: return "none";
  }
  return "unknown";
}

CurriculumMode parse_curriculum_mode(std::string_view name) {
  if (name == "discrete") return CurriculumMode::Discrete;
  if (name == "continuous") return CurriculumMode::Continuous;
  if (name == "none") return CurriculumMode::NoCurr;
  throw ConfigError("unknown curriculum '" + std::string(name) + "'");
}

void CurriculumPolicy::validate() const {
  if (!(min_level < max_level)) throw ConfigError("curriculum min_level must be below max_level");
  if (!(min_level >= 0.0 && max_level <= 1.0)) throw ConfigError("curriculum levels must lie in [0, 1]");
  if (num_stages < 1) throw ConfigError("curriculum num_stages must be at least 1");
}

std::vector<double> CurriculumPolicy::stage_levels() const {
  std::vector<double> levels;
  for (int s = 0; s < num_stages; ++s) levels.push_back(stage_level(*this, static_cast<std::size_t>(s)));
  return levels;
}

double level_at(const CurriculumPolicy& policy, std::size_t step, std::size_t total_steps, Rng& rng) {
  policy.validate();
  if (step >= total_steps)
    throw PreconditionError("step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + ")");
  const auto stages = static_cast<std::size_t>(policy.num_stages);
  switch (policy.mode) {
    case CurriculumMode::Discrete:
      // With total_steps < num_stages some stages are skipped; the map stays monotone.
      return stage_level(policy, step * stages / total_steps);
    case CurriculumMode::Continuous:
      if (total_steps == 1) return policy.min_level;
      return std::lerp(policy.min_level, policy.max_level,
                       static_cast<double>(step) / static_cast<double>(total_steps - 1));
    case CurriculumMode::NoCurr: {
      std::uniform_int_distribution<std::size_t> pick(0, stages - 1);
      return stage_level(policy, pick(rng));
    }
  }
  throw PreconditionError("unknown curriculum mode");
}

}  // namespace effcl
