#pragma once

#include <vector>

#include "cfgeo/rng.hpp"

namespace cfgeo {

// Balanced random partition into K folds; a pure function of (seed, n, folds).
struct CrossFitPlan {
    int folds = 0;
    std::vector<int> assignment;  // fold index per unit, in [0, folds)

    std::size_t n() const { return assignment.size(); }
    std::vector<std::size_t> fold_members(int fold) const;
    std::vector<std::size_t> fold_complement(int fold) const;
};

CrossFitPlan make_crossfit_plan(std::size_t n, int folds, const SeedPolicy& seed);

}  // namespace cfgeo
