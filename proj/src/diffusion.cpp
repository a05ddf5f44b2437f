#include "cfgeo/diffusion.hpp"

namespace cfgeo {

GaussianTransition forward_transition(const ForwardDiffusionSpec& spec, double eps,
                                      const Eigen::VectorXd& u) {
    if (eps <= 0.0) {
        throw std::invalid_argument("forward_transition: eps must be positive");
    }
    const double a = spec.alpha(eps);
    GaussianTransition q;
    q.mean = a * u;
    q.variance = 1.0 - a * a;
    return q;
}

}  // namespace cfgeo
