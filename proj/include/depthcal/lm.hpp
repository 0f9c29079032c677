#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace depthcal {

struct LmOptions {
  int max_iter = 200;
  double ftol = 1e-10;  ///< relative cost change on an accepted step
  double xtol = 1e-12;  ///< step norm
  double gtol = 1e-10;  ///< max-norm of J^T r
  double damping_init = 1e-3;
  int threads = 1;
  /// Called with the parameters after every accepted step.
  std::function<void(const Eigen::VectorXd&)> on_accept;
};

struct LmResult {
  Eigen::VectorXd x;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  bool converged = false;
  std::string termination;
  /// Cost after every accepted step, starting with the initial cost.
  std::vector<double> cost_trace;
};

/// Sum-of-squares problem split into residual blocks, each touching a subset of the
/// parameters. The solver only ever forms J^T J, never the full Jacobian.
///
/// Parameters live in an ambient vector `x`; updates are taken in a tangent space of
/// size parameterCount() and applied through plus(), so rotations can use local
/// axis-angle increments.
class LeastSquaresProblem {
 public:
  virtual ~LeastSquaresProblem() = default;

  virtual int parameterCount() const = 0;
  virtual int blockCount() const = 0;
  /// Tangent indices the block depends on.
  virtual const std::vector<int>& blockParameters(int block) const = 0;
  virtual void evaluateBlock(int block, const Eigen::VectorXd& x,
                             Eigen::VectorXd& residuals) const = 0;

  virtual Eigen::VectorXd plus(const Eigen::VectorXd& x, const Eigen::VectorXd& delta) const {
    return x + delta;
  }
  /// Magnitude used to size the finite-difference step of tangent coordinate `index`.
  virtual double stepScale(const Eigen::VectorXd& x, int index) const;
};

/// Stacked residuals of all blocks.
Eigen::VectorXd evaluateResiduals(const LeastSquaresProblem& problem, const Eigen::VectorXd& x,
                                  int threads = 1);

/// Forward-difference Jacobian times a tangent direction, stacked like evaluateResiduals.
Eigen::VectorXd jacobianTimes(const LeastSquaresProblem& problem, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& direction, int threads = 1);

/// Levenberg-Marquardt with forward-difference Jacobians (step max(1e-6, 1e-6 |x_i|)).
/// Cost is the plain sum of squared residuals. Throws InvalidArgument when the
/// residuals at x0 are not finite.
LmResult lmMinimize(const LeastSquaresProblem& problem, const Eigen::VectorXd& x0,
                    const LmOptions& options = {});

using ResidualFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Dense convenience form: one block depending on every parameter.
LmResult lmMinimize(ResidualFn residual_fn, const Eigen::VectorXd& x0,
                    const LmOptions& options = {});

}  // namespace depthcal
