#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "cfgeo/diffusion.hpp"
#include "cfgeo/region.hpp"
#include "cfgeo/rng.hpp"
#include "cfgeo/score_field.hpp"

namespace cfgeo {

// Raised when the probability-flow integration leaves the finite domain.
struct FlowBlowupError : std::runtime_error {
    explicit FlowBlowupError(double t)
        : std::runtime_error("probability flow produced a non-finite state at t=" + std::to_string(t)),
          time(t) {}
    double time;
};

enum class FlowDirection { NoisyToClean, CleanToNoisy };

struct FlowResult {
    Eigen::VectorXd endpoint;
    double log_jacobian = 0.0;
};

// Fixed-step RK4 integration of dz/dt = b(z,t) - 0.5 sigma(t)^2 s(z,t),
// accumulating the divergence of the flow field along the trajectory
// (instantaneous change of variables). NoisyToClean realizes Phi_{eps},
// CleanToNoisy realizes its inverse.
FlowResult reverse_flow(const ForwardDiffusionSpec& spec, const ScoreField& score, double eps,
                        const Eigen::VectorXd& z_start, FlowDirection direction, int steps = 64);

// Normalized smoothing density kappa(y; u) with evaluation, y-gradient,
// and sampling. Implementations are immutable and safe to share across
// concurrent workers.
class SmoothingKernel {
public:
    virtual ~SmoothingKernel() = default;

    virtual double eval(const Eigen::VectorXd& y, const Eigen::VectorXd& u) const = 0;

    // grad_y kappa(y; u); default is a central finite difference of eval.
    virtual Eigen::VectorXd grad(const Eigen::VectorXd& y, const Eigen::VectorXd& u) const;

    // count i.i.d. draws from kappa(.; u), one per row.
    virtual Eigen::MatrixXd sample(const Eigen::VectorXd& u, Eigen::Index count,
                                   Rng& rng) const = 0;

    virtual Eigen::Index dim() const = 0;
    virtual double scale() const = 0;  // spatial scale h (or an equivalent)
    virtual std::string id() const = 0;

protected:
    double fd_step() const { return 1e-4 * scale(); }
};

// N(y; u, h^2 I).
class IsotropicGaussianKernel final : public SmoothingKernel {
public:
    IsotropicGaussianKernel(double h, Eigen::Index d);

    double eval(const Eigen::VectorXd& y, const Eigen::VectorXd& u) const override;
    Eigen::VectorXd grad(const Eigen::VectorXd& y, const Eigen::VectorXd& u) const override;
    Eigen::MatrixXd sample(const Eigen::VectorXd& u, Eigen::Index count, Rng& rng) const override;
    Eigen::Index dim() const override { return d_; }
    double scale() const override { return h_; }
    std::string id() const override;

private:
    double h_;
    Eigen::Index d_;
    double log_norm_;
};

// N(y; u, Sigma) with a fixed SPD covariance.
class AnisotropicGaussianKernel final : public SmoothingKernel {
public:
    explicit AnisotropicGaussianKernel(const Eigen::MatrixXd& covariance);

    double eval(const Eigen::VectorXd& y, const Eigen::VectorXd& u) const override;
    Eigen::VectorXd grad(const Eigen::VectorXd& y, const Eigen::VectorXd& u) const override;
    Eigen::MatrixXd sample(const Eigen::VectorXd& u, Eigen::Index count, Rng& rng) const override;
    Eigen::Index dim() const override { return cov_.rows(); }
    double scale() const override { return scale_; }
    std::string id() const override;

    const Eigen::MatrixXd& covariance() const { return cov_; }

private:
    Eigen::MatrixXd cov_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
    double log_norm_;
    double scale_;
};

// Anisotropic Gaussian kernel proxying the transported kernel's local
// geometry. Per anchor, a neighborhood covariance Sigma_hat is fitted from
// principal components within the target arm (neighbor count floored so the
// neighborhood spans at least the smoothing scale), then mapped through the
// Gaussian-factor transported covariance
//   Sigma(y) = h^2 Sigma_hat (Sigma_hat + h^2 I)^{-1},
// which contracts at scale h along diffuse directions and keeps tight data
// directions at their data width. Covariances are precomputed at the grid
// points supplied at construction; evaluation at other y falls back to the
// nearest precomputed anchor.
class LocalGeometryKernel final : public SmoothingKernel {
public:
    LocalGeometryKernel(double h, const Eigen::MatrixXd& arm_outcomes, const Grid& grid,
                        int k_nn, double ridge);

    double eval(const Eigen::VectorXd& y, const Eigen::VectorXd& u) const override;
    Eigen::VectorXd grad(const Eigen::VectorXd& y, const Eigen::VectorXd& u) const override;
    Eigen::MatrixXd sample(const Eigen::VectorXd& u, Eigen::Index count, Rng& rng) const override;
    Eigen::Index dim() const override { return dim_; }
    double scale() const override { return h_; }
    std::string id() const override;

    const AnisotropicGaussianKernel& local(const Eigen::VectorXd& y) const;

private:
    double h_;
    Eigen::Index dim_;
    Eigen::MatrixXd anchors_;  // grid points
    std::vector<std::unique_ptr<AnisotropicGaussianKernel>> locals_;
};

// Diffusion-transported kernel: the forward Gaussian transition pushed
// through the reverse probability flow with Jacobian correction.
class TransportedKernel final : public SmoothingKernel {
public:
    TransportedKernel(ForwardDiffusionSpec spec, std::shared_ptr<const ScoreField> score,
                      double h, Eigen::Index d, int steps = 64);

    double eval(const Eigen::VectorXd& y, const Eigen::VectorXd& u) const override;
    Eigen::VectorXd grad(const Eigen::VectorXd& y, const Eigen::VectorXd& u) const override;
    Eigen::MatrixXd sample(const Eigen::VectorXd& u, Eigen::Index count, Rng& rng) const override;
    Eigen::Index dim() const override { return d_; }
    double scale() const override { return h_; }
    std::string id() const override;

    double eps() const { return eps_; }
    const ScoreField& score() const { return *score_; }
    const ForwardDiffusionSpec& spec() const { return spec_; }
    int steps() const { return steps_; }

    // True when the geometry is an exact single-Gaussian mixture, in which
    // case the flow is affine and eval/grad/sample use closed forms.
    bool affine() const { return affine_; }

private:
    double log_eval(const Eigen::VectorXd& y, const Eigen::VectorXd& u) const;

    ForwardDiffusionSpec spec_;
    std::shared_ptr<const ScoreField> score_;
    double h_;
    double eps_;
    double alpha_;
    Eigen::Index d_;
    int steps_;

    bool affine_ = false;
    // Affine path, in the eigenbasis of the base covariance: Phi^{-1}(y) =
    // m_eps + D (y - m0) with D = Sigma_eps^{1/2} Sigma_0^{-1/2}.
    Eigen::MatrixXd basis_;        // eigenvectors of Sigma_0
    Eigen::VectorXd base_mean_;    // m0
    Eigen::VectorXd diag_scale_;   // sqrt(sigma_eps / sigma_0) per eigen-axis
    double affine_log_jac_ = 0.0;  // log det D
};

struct KernelMoments {
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
    Eigen::MatrixXd precision;
    Eigen::Index mc_count = 0;
    Eigen::VectorXd mean_se;
};

// Monte-Carlo kernel mean/covariance at an anchor; precision by inversion
// with an SPD floor of 1e-10 * trace / d on the minimum eigenvalue.
KernelMoments kernel_moments(const SmoothingKernel& kernel, const Eigen::VectorXd& anchor,
                             Eigen::Index mc_count, const SeedPolicy& seed);

struct PeakinessReport {
    std::vector<double> h;
    std::vector<double> H;
    std::vector<double> Hs;     // empty unless score peakiness requested
    std::vector<double> d_eff;
    double slope = 0.0;         // fitted slope of log H vs log(1/h)
    double slope_se = 0.0;

    std::string to_csv() const;
};

using KernelFactory = std::function<std::unique_ptr<SmoothingKernel>(double h)>;

// H_h = E int_{Y0} kappa(y; Y)^2 dy estimated by grid quadrature averaged
// over the supplied law samples; optionally adds the gradient term for the
// score peakiness functional.
PeakinessReport peakiness(const KernelFactory& factory, const std::vector<double>& h_values,
                          const Eigen::MatrixXd& law_samples, const Grid& grid,
                          bool include_score, int workers = 1);

}  // namespace cfgeo
