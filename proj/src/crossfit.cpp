#include "cfgeo/crossfit.hpp"

#include <numeric>
#include <stdexcept>

namespace cfgeo {

std::vector<std::size_t> CrossFitPlan::fold_members(int fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment.size(); ++i) {
        if (assignment[i] == fold) out.push_back(i);
    }
    return out;
}

std::vector<std::size_t> CrossFitPlan::fold_complement(int fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment.size(); ++i) {
        if (assignment[i] != fold) out.push_back(i);
    }
    return out;
}

CrossFitPlan make_crossfit_plan(std::size_t n, int folds, const SeedPolicy& seed) {
    if (folds < 2) throw std::invalid_argument("crossfit: folds must be at least 2");
    if (n < static_cast<std::size_t>(folds)) {
        throw std::invalid_argument("crossfit: invalid plan, n < folds");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = seed.stream("folds");
    rng.shuffle(order);

    CrossFitPlan plan;
    plan.folds = folds;
    plan.assignment.resize(n);
    for (std::size_t pos = 0; pos < n; ++pos) {
        plan.assignment[order[pos]] = static_cast<int>(pos % folds);
    }
    return plan;
}

}  // namespace cfgeo
