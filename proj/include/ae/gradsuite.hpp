#pragma once

#include <cstdint>
#include <vector>

#include "ae/gradcheck.hpp"

namespace ae {

// Catalogs of gradient-check cases, one entry per op or block family, built
// fresh from the seed so repeated runs are reproducible. The three tiers
// nest: blocks assume ops pass, the pipeline assumes blocks pass.
std::vector<GradCase> ops_cases(uint64_t seed);
std::vector<GradCase> block_cases(uint64_t seed);
std::vector<GradCase> pipeline_cases(uint64_t seed);

}  // namespace ae
