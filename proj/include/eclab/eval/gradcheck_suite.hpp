#pragma once

// Finite-difference checks of every differentiable primitive and of the
// training objectives through a tiny prior (embed 8, one layer, one head,
// batch 3), all in double precision.

#include <cstdint>
#include <string>
#include <vector>

#include "eclab/gradcore/gradcheck.hpp"

namespace eclab {

inline constexpr double kGradCheckTolerance = 1e-4;
inline constexpr double kGradCheckStep = 1e-4;

struct GradCheckEntry {
  std::string name;
  std::uint64_t seed = 0;
  GradCheckResult result;
  bool passed() const { return result.max_rel_error < kGradCheckTolerance; }
};

std::vector<std::string> gradcheck_case_names();

/// Runs every case for seeds base_seed, base_seed + 1, ...
std::vector<GradCheckEntry> run_gradcheck_suite(std::size_t n_seeds = 5, std::uint64_t base_seed = 1);

GradCheckEntry run_gradcheck_case(const std::string& name, std::uint64_t seed);

}  // namespace eclab
