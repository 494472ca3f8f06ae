#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "helpers.hpp"
#include "kdaif/error.hpp"
#include "kdaif/objective.hpp"
#include "kdaif/optimize.hpp"

using namespace kdaif;
using test::mlp;

namespace {

// l_i = (w . x_i - y_i)^2 / 2; Hessian of the mean is X^T X / N.
class LeastSquares final : public ExampleLosses {
 public:
  LeastSquares(std::vector<std::vector<double>> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {}
  std::size_t size() const override { return x_.size(); }
  std::size_t dim() const override { return x_.front().size(); }
  double loss(std::size_t i, std::span<const double> th) const override {
    const double r = residual(i, th);
    return 0.5 * r * r;
  }
  void accumulate_gradient(std::size_t i, std::span<const double> th, double scale,
                           std::span<double> out) const override {
    const double r = residual(i, th);
    for (std::size_t k = 0; k < dim(); ++k) out[k] += scale * r * x_[i][k];
  }
  std::uint64_t fingerprint() const override { return 0; }

 private:
  double residual(std::size_t i, std::span<const double> th) const {
    double s = 0.0;
    for (std::size_t k = 0; k < dim(); ++k) s += th[k] * x_[i][k];
    return s - y_[i];
  }
  std::vector<std::vector<double>> x_;
  std::vector<double> y_;
};

double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_SUITE("numeric") {
  TEST_CASE("gradient matches central differences") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      CAPTURE(seed);
      const MlpSpec s = mlp({3, 6, 4});
      const MlpSpec t = mlp({3, 5, 4});
      const Model teacher{t, ParamVector(test::random_vector(t.param_count(), seed + 50))};
      const auto data = test::random_examples(7, 3, 4, seed);
      const MlpLosses losses = student_losses(s, &teacher, data, 0.6);
      const std::vector<double> w = {0.5, 1.0, 1.5, 2.0, 0.1, 1.0, 0.7};
      const EmpiricalRisk risk(losses, 1e-3, w);
      ParamVector th(test::random_vector(s.param_count(), seed + 1, 0.7));
      const ParamVector g = risk.gradient(th.span());
      const double h = 1e-5;
      for (std::size_t j = 0; j < th.size(); ++j) {
        const double keep = th[j];
        th[j] = keep + h;
        const double fp = risk.value(th.span());
        th[j] = keep - h;
        const double fm = risk.value(th.span());
        th[j] = keep;
        const double fd = (fp - fm) / (2.0 * h);
        CHECK(std::abs(fd - g[j]) <= 1e-4 * std::max(1.0, std::abs(g[j])));
      }
    }
  }

  TEST_CASE("teacher-side gradient matches central differences") {
    const MlpSpec t = mlp({2, 5, 3});
    const MlpSpec s = mlp({2, 3});
    const Model student{s, ParamVector(test::random_vector(s.param_count(), 3))};
    const auto data = test::random_examples(6, 2, 3, 4);
    const MlpLosses losses = teacher_losses(t, student, data, 0.4);
    const EmpiricalRisk risk(losses, 0.0);
    ParamVector th(test::random_vector(t.param_count(), 5));
    const ParamVector g = risk.gradient(th.span());
    for (std::size_t j = 0; j < th.size(); ++j) {
      const double keep = th[j];
      th[j] = keep + 1e-5;
      const double fp = risk.value(th.span());
      th[j] = keep - 1e-5;
      const double fm = risk.value(th.span());
      th[j] = keep;
      CHECK(std::abs((fp - fm) / 2e-5 - g[j]) <= 1e-4 * std::max(1.0, std::abs(g[j])));
    }
  }

  TEST_CASE("relu networks are differentiated away from kinks") {
    const MlpSpec s = mlp({2, 4, 3}, Activation::relu);
    const auto data = test::random_examples(5, 2, 3, 6);
    const MlpLosses losses = supervised_losses(s, data);
    const EmpiricalRisk risk(losses, 0.0);
    ParamVector th(test::random_vector(s.param_count(), 6));
    const ParamVector g = risk.gradient(th.span());
    std::size_t ok = 0;
    for (std::size_t j = 0; j < th.size(); ++j) {
      const double keep = th[j];
      th[j] = keep + 1e-6;
      const double fp = risk.value(th.span());
      th[j] = keep - 1e-6;
      const double fm = risk.value(th.span());
      th[j] = keep;
      ok += std::abs((fp - fm) / 2e-6 - g[j]) <= 1e-4 * std::max(1.0, std::abs(g[j])) ? 1 : 0;
    }
    CHECK(ok == th.size());
  }

  TEST_CASE("hvp examples") {
    const QuadraticLosses q(std::vector<std::vector<double>>{{3.0}});
    const EmpiricalRisk risk(q);
    const std::vector<double> th{0.5};
    CHECK(risk.hvp(th, std::vector<double>{1.0})[0] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(risk.hvp(th, std::vector<double>{0.0})[0] == 0.0);
    CHECK(risk.hvp(th, std::vector<double>{2.0}, 0.5)[0] == doctest::Approx(3.0).epsilon(1e-9));
    CHECK_THROWS_AS(risk.hvp(th, std::vector<double>{1.0, 2.0}), InputError);
  }

  TEST_CASE("hvp matches the dense Hessian and the Hessian is symmetric") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      CAPTURE(seed);
      const MlpSpec s = mlp({3, 8, 3});
      const auto data = test::random_examples(10, 3, 3, seed + 20);
      const MlpLosses losses = supervised_losses(s, data);
      const EmpiricalRisk risk(losses, 1e-3);
      const ParamVector th(test::random_vector(s.param_count(), seed + 30, 0.5));
      const double lambda = 1e-3;
      const DenseHessian H = risk.dense_hessian(th.span(), lambda);
      CHECK(H.asymmetry < 1e-5);
      CHECK(max_abs(H.matrix - H.matrix.transpose()) == 0.0);
      const auto v = test::random_vector(s.param_count(), seed + 40);
      const ParamVector hv = risk.hvp(th.span(), v, lambda);
      const Eigen::VectorXd ref = H.matrix * Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
      double num = 0.0, den = 0.0;
      for (std::size_t k = 0; k < v.size(); ++k) {
        num += (hv[k] - ref[k]) * (hv[k] - ref[k]);
        den += ref[k] * ref[k];
      }
      CHECK(std::sqrt(num / den) < 1e-3);
    }
  }

  TEST_CASE("dense Hessian of a scalar quadratic is [1]") {
    const QuadraticLosses q(std::vector<std::vector<double>>{{2.0}, {-1.0}});
    const DenseHessian H = EmpiricalRisk(q).dense_hessian(std::vector<double>{0.3});
    CHECK(H.matrix.rows() == 1);
    CHECK(H.matrix(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
  }

  TEST_CASE("least-squares Hessian equals X^T X / N") {
    const LeastSquares ls({{1.0, 2.0}, {3.0, -1.0}}, {0.5, 2.0});
    const DenseHessian H = EmpiricalRisk(ls).dense_hessian(std::vector<double>{0.2, -0.4});
    CHECK(H.matrix(0, 0) == doctest::Approx(5.0).epsilon(1e-8));
    CHECK(H.matrix(0, 1) == doctest::Approx(-0.5).epsilon(1e-8));
    CHECK(H.matrix(1, 0) == doctest::Approx(-0.5).epsilon(1e-8));
    CHECK(H.matrix(1, 1) == doctest::Approx(2.5).epsilon(1e-8));
  }

  TEST_CASE("dense Hessian refuses models over the cap") {
    const MlpSpec s = mlp({2, 4, 3});
    const auto data = test::random_examples(3, 2, 3, 1);
    const MlpLosses losses = supervised_losses(s, data);
    const EmpiricalRisk risk(losses);
    CHECK_THROWS_AS(risk.dense_hessian(init_params(s, 0).span(), 0.0, 10), CapacityError);
  }

  TEST_CASE("Hessian at a trained logistic optimum is positive definite") {
    const DatasetBundle b = gen_blobs(test::small_blobs(11, 3.0));
    const MlpSpec s = mlp({2, 3});
    const MlpLosses losses = supervised_losses(s, b.train);
    const EmpiricalRisk risk(losses, 1e-3);
    const FitResult fit = minimize_newton(risk, init_params(s, 1));
    REQUIRE(fit.converged);
    const double lambda = 1e-3;
    const DenseHessian H = risk.dense_hessian(fit.params.span(), lambda);
    CHECK(H.matrix.llt().info() == Eigen::Success);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(H.matrix);
    CHECK(eig.eigenvalues().minCoeff() >= lambda - 1e-8);
  }

  TEST_CASE("conjugate gradient solves SPD systems and reports failure") {
    Eigen::MatrixXd A(3, 3);
    A << 4, 1, 0, 1, 3, 1, 0, 1, 2;
    const LinearOperator op = [&](std::span<const double> x) {
      const Eigen::VectorXd y = A * Eigen::Map<const Eigen::VectorXd>(x.data(), 3);
      return ParamVector(std::vector<double>(y.data(), y.data() + 3));
    };
    const std::vector<double> b{1, 2, 3};
    const CgResult r = conjugate_gradient(op, b, 50, 1e-12);
    CHECK(r.converged);
    const Eigen::VectorXd x = A.ldlt().solve(Eigen::Map<const Eigen::VectorXd>(b.data(), 3));
    for (int k = 0; k < 3; ++k) CHECK(r.x[k] == doctest::Approx(x[k]).epsilon(1e-10));
    CHECK_THROWS_AS(conjugate_gradient(op, b, 1, 1e-12), SolverError);
    Eigen::MatrixXd N = -A;
    const LinearOperator neg = [&](std::span<const double> v) {
      const Eigen::VectorXd y = N * Eigen::Map<const Eigen::VectorXd>(v.data(), 3);
      return ParamVector(std::vector<double>(y.data(), y.data() + 3));
    };
    CHECK_THROWS_AS(conjugate_gradient(neg, b, 50, 1e-12), SolverError);
  }
}
