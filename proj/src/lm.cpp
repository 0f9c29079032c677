#include "depthcal/lm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Cholesky>

#include "depthcal/errors.hpp"
#include "depthcal/parallel.hpp"

namespace depthcal {

double LeastSquaresProblem::stepScale(const Eigen::VectorXd& x, int index) const {
  return std::abs(x[index]);
}

namespace {

double finiteDifferenceStep(double scale) { return std::max(1e-6, 1e-6 * std::abs(scale)); }

struct BlockLinearization {
  Eigen::MatrixXd jtj;
  Eigen::VectorXd jtr;
  double cost = 0.0;
};

// Residuals of one block plus its forward-difference Jacobian columns.
Eigen::MatrixXd blockJacobian(const LeastSquaresProblem& problem, int block,
                              const Eigen::VectorXd& x, const Eigen::VectorXd& r0) {
  const auto& params = problem.blockParameters(block);
  const int tangent = problem.parameterCount();
  Eigen::MatrixXd jac(r0.size(), static_cast<Eigen::Index>(params.size()));
  Eigen::VectorXd delta = Eigen::VectorXd::Zero(tangent);
  Eigen::VectorXd r;
  for (std::size_t c = 0; c < params.size(); ++c) {
    const int i = params[c];
    const double h = finiteDifferenceStep(problem.stepScale(x, i));
    delta[i] = h;
    problem.evaluateBlock(block, problem.plus(x, delta), r);
    delta[i] = 0.0;
    jac.col(static_cast<Eigen::Index>(c)) = (r - r0) / h;
  }
  return jac;
}

std::vector<int> blockOffsets(const std::vector<Eigen::VectorXd>& parts) {
  std::vector<int> offsets(parts.size() + 1, 0);
  for (std::size_t b = 0; b < parts.size(); ++b) {
    offsets[b + 1] = offsets[b] + static_cast<int>(parts[b].size());
  }
  return offsets;
}

Eigen::VectorXd stack(const std::vector<Eigen::VectorXd>& parts) {
  const auto offsets = blockOffsets(parts);
  Eigen::VectorXd out(offsets.back());
  for (std::size_t b = 0; b < parts.size(); ++b) {
    out.segment(offsets[b], parts[b].size()) = parts[b];
  }
  return out;
}

double totalCost(const LeastSquaresProblem& problem, const Eigen::VectorXd& x, int threads) {
  const int blocks = problem.blockCount();
  std::vector<double> costs(static_cast<std::size_t>(blocks), 0.0);
  parallelFor(0, blocks, threads, [&](int b) {
    Eigen::VectorXd r;
    problem.evaluateBlock(b, x, r);
    costs[static_cast<std::size_t>(b)] = r.squaredNorm();
  });
  return std::accumulate(costs.begin(), costs.end(), 0.0);
}

void linearize(const LeastSquaresProblem& problem, const Eigen::VectorXd& x, int threads,
               Eigen::MatrixXd& jtj, Eigen::VectorXd& jtr, double& cost) {
  const int blocks = problem.blockCount();
  std::vector<BlockLinearization> parts(static_cast<std::size_t>(blocks));
  parallelFor(0, blocks, threads, [&](int b) {
    Eigen::VectorXd r0;
    problem.evaluateBlock(b, x, r0);
    const Eigen::MatrixXd jac = blockJacobian(problem, b, x, r0);
    auto& part = parts[static_cast<std::size_t>(b)];
    part.jtj = jac.transpose() * jac;
    part.jtr = jac.transpose() * r0;
    part.cost = r0.squaredNorm();
  });

  const int n = problem.parameterCount();
  jtj = Eigen::MatrixXd::Zero(n, n);
  jtr = Eigen::VectorXd::Zero(n);
  cost = 0.0;
  for (int b = 0; b < blocks; ++b) {
    const auto& params = problem.blockParameters(b);
    const auto& part = parts[static_cast<std::size_t>(b)];
    for (std::size_t i = 0; i < params.size(); ++i) {
      jtr[params[i]] += part.jtr[static_cast<Eigen::Index>(i)];
      for (std::size_t j = 0; j < params.size(); ++j) {
        jtj(params[i], params[j]) +=
            part.jtj(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      }
    }
    cost += part.cost;
  }
}

class DenseProblem final : public LeastSquaresProblem {
 public:
  DenseProblem(ResidualFn fn, int n) : fn_(std::move(fn)), params_(static_cast<std::size_t>(n)) {
    std::iota(params_.begin(), params_.end(), 0);
  }
  int parameterCount() const override { return static_cast<int>(params_.size()); }
  int blockCount() const override { return 1; }
  const std::vector<int>& blockParameters(int) const override { return params_; }
  void evaluateBlock(int, const Eigen::VectorXd& x, Eigen::VectorXd& r) const override {
    r = fn_(x);
  }

 private:
  ResidualFn fn_;
  std::vector<int> params_;
};

}  // namespace

Eigen::VectorXd evaluateResiduals(const LeastSquaresProblem& problem, const Eigen::VectorXd& x,
                                  int threads) {
  std::vector<Eigen::VectorXd> parts(static_cast<std::size_t>(problem.blockCount()));
  parallelFor(0, problem.blockCount(), threads,
              [&](int b) { problem.evaluateBlock(b, x, parts[static_cast<std::size_t>(b)]); });
  return stack(parts);
}

Eigen::VectorXd jacobianTimes(const LeastSquaresProblem& problem, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& direction, int threads) {
  std::vector<Eigen::VectorXd> parts(static_cast<std::size_t>(problem.blockCount()));
  parallelFor(0, problem.blockCount(), threads, [&](int b) {
    Eigen::VectorXd r0;
    problem.evaluateBlock(b, x, r0);
    const Eigen::MatrixXd jac = blockJacobian(problem, b, x, r0);
    const auto& params = problem.blockParameters(b);
    Eigen::VectorXd local(static_cast<Eigen::Index>(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
      local[static_cast<Eigen::Index>(i)] = direction[params[i]];
    }
    parts[static_cast<std::size_t>(b)] = jac * local;
  });
  return stack(parts);
}

LmResult lmMinimize(const LeastSquaresProblem& problem, const Eigen::VectorXd& x0,
                    const LmOptions& options) {
  const int n = problem.parameterCount();
  const int threads = std::max(1, options.threads);

  LmResult result;
  result.x = x0;
  double cost = totalCost(problem, x0, threads);
  if (!std::isfinite(cost)) {
    throw InvalidArgument("residuals are not finite at the initial point");
  }
  result.initial_cost = cost;
  result.cost_trace.push_back(cost);

  double lambda = options.damping_init;
  Eigen::MatrixXd jtj;
  Eigen::VectorXd jtr;

  for (int iter = 0; iter < options.max_iter; ++iter) {
    double linearized_cost = 0.0;
    linearize(problem, result.x, threads, jtj, jtr, linearized_cost);
    if (jtr.lpNorm<Eigen::Infinity>() <= options.gtol) {
      result.converged = true;
      result.termination = "gradient below gtol";
      break;
    }

    bool accepted = false;
    bool stop = false;
    while (!accepted) {
      Eigen::MatrixXd damped = jtj;
      for (int i = 0; i < n; ++i) {
        damped(i, i) += lambda * std::max(jtj(i, i), 1e-12);
      }
      const Eigen::VectorXd step = damped.ldlt().solve(-jtr);
      if (!step.allFinite()) {
        lambda *= 10.0;
      } else {
        if (step.norm() < options.xtol) {
          result.converged = true;
          result.termination = "step below xtol";
          stop = true;
          break;
        }
        const Eigen::VectorXd candidate = problem.plus(result.x, step);
        const double new_cost = totalCost(problem, candidate, threads);
        if (std::isfinite(new_cost) && new_cost < cost) {
          const double relative = (cost - new_cost) / std::max(cost, 1e-300);
          result.x = candidate;
          cost = new_cost;
          result.cost_trace.push_back(cost);
          if (options.on_accept) options.on_accept(result.x);
          lambda = std::max(lambda / 10.0, 1e-15);
          accepted = true;
          result.iterations = iter + 1;
          if (relative < options.ftol) {
            result.converged = true;
            result.termination = "relative cost change below ftol";
            stop = true;
          }
          break;
        }
        lambda *= 10.0;
      }
      if (lambda > 1e20) {
        result.converged = true;
        result.termination = "no descent step found";
        stop = true;
        break;
      }
    }
    if (stop) {
      break;
    }
    if (iter + 1 == options.max_iter) {
      result.termination = "max iterations reached";
    }
  }
  result.final_cost = cost;
  return result;
}

LmResult lmMinimize(ResidualFn residual_fn, const Eigen::VectorXd& x0, const LmOptions& options) {
  const DenseProblem problem(std::move(residual_fn), static_cast<int>(x0.size()));
  return lmMinimize(problem, x0, options);
}

}  // namespace depthcal
