#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "sfv/errors.hpp"
#include "sfv/oracle.hpp"
#include "support.hpp"

using namespace sfv;

namespace {

// Reference values from an independent scipy computation (expm, brentq, quad).
namespace frozen {
constexpr double two_state_p1 = 0.4354158527212658;
constexpr double two_state_pT = 0.0984703060836554;
constexpr double two_state_r = 0.7877624486692432;
constexpr double two_state_t[] = {0.8556471343280616, 1.5652809587686027, 2.2611783993329784};
constexpr double two_state_sync_one = 0.03389518602870704;
constexpr double two_state_classical_one = 0.024753215736468548;
constexpr double two_state_sync_ind0 = 0.019727064297635804;
constexpr double two_state_classical_ind0 = 0.01470028791603104;

constexpr double five_state_pT = 0.0875000219667536;
constexpr double five_state_r = 0.7000001757340288;
constexpr double five_state_t[] = {1.109094704480436, 2.1804940740185623, 3.2515503874113674};
constexpr double five_state_sync_one = 0.026308370398804962;
constexpr double five_state_classical_one = 0.01870979273217161;
constexpr double five_state_sync_index = 0.153745454275498;
constexpr double five_state_classical_index = 0.1117965844313515;
}  // namespace frozen

const CtmcModel& five_state() {
  static const auto exp = testing::load_config("five_state.json");
  return *exp.model->exact();
}

Eigen::VectorXd ones(std::size_t n) { return Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n)); }

double law_variance(const Eigen::RowVectorXd& law, const Eigen::VectorXd& phi) {
  const double mass = law.sum();
  const double m1 = law.dot(phi) / mass;
  const double m2 = law.dot(phi.cwiseProduct(phi)) / mass;
  return m2 - m1 * m1;
}

}  // namespace

TEST_CASE("semigroup_apply") {
  const auto pd = CtmcModel::pure_death(1.0);
  CHECK(semigroup_apply(pd, 3.0, ones(1))(0) == doctest::Approx(0.0497871).epsilon(1e-6));
  CHECK(semigroup_apply(pd, 3.0, ones(1))(0) == doctest::Approx(std::exp(-3.0)).epsilon(1e-13));

  const auto& m = five_state();
  const Eigen::VectorXd phi = Eigen::VectorXd::LinSpaced(5, -1.0, 3.0);
  CHECK(semigroup_apply(m, 0.0, phi) == phi);

  Eigen::VectorXd previous = ones(5);
  for (double t : {0.1, 0.5, 1.0, 2.0, 5.0, 20.0}) {
    const auto q = semigroup_apply(m, t, ones(5));
    const Eigen::VectorXd dense = testing::dense_expm(m.sub_generator(), t) * ones(5);
    for (Eigen::Index i = 0; i < 5; ++i) {
      CHECK(q(i) >= 0.0);
      CHECK(q(i) <= 1.0);
      CHECK(q(i) <= previous(i));
      CHECK(q(i) == doctest::Approx(dense(i)).epsilon(1e-11));
    }
    previous = q;
  }
  CHECK_THROWS_AS(semigroup_apply(m, -1.0, phi), std::invalid_argument);
  CHECK_THROWS_AS(semigroup_apply(m, 1.0, ones(3)), std::invalid_argument);
}

TEST_CASE("propagate_law matches the dense exponential") {
  const auto& m = five_state();
  const Eigen::RowVectorXd mu = m.initial_law().transpose();
  for (double t : {0.3, 1.7, 6.0}) {
    const Eigen::RowVectorXd expect = mu * testing::dense_expm(m.sub_generator(), t);
    const auto got = propagate_law(m, t, mu);
    for (Eigen::Index i = 0; i < 5; ++i) CHECK(got(i) == doctest::Approx(expect(i)).epsilon(1e-11));
  }
}

TEST_CASE("survival_probability") {
  const auto pd = CtmcModel::pure_death(1.0);
  CHECK(survival_probability(pd, 0.0) == 1.0);
  CHECK(survival_probability(pd, std::log(2.0)) == doctest::Approx(0.5).epsilon(1e-14));
  const auto m = testing::two_state();
  CHECK(survival_probability(m, 1.0) == doctest::Approx(frozen::two_state_p1).epsilon(1e-12));
  CHECK(survival_probability(m, 1.0) == doctest::Approx(testing::dense_survival(m, 1.0)).epsilon(1e-12));
  CHECK(survival_derivative(pd, 1.0) == doctest::Approx(-std::exp(-1.0)).epsilon(1e-12));

  double previous = 1.0;
  for (int k = 1; k <= 100; ++k) {
    const double p = survival_probability(five_state(), 0.05 * k);
    CHECK(p < previous);
    previous = p;
  }
}

TEST_CASE("quantile_times") {
  SUBCASE("pure death") {
    const auto g = quantile_times(CtmcModel::pure_death(1.0), 0.5, 3.0);
    REQUIRE(g.j_max == 4);
    for (std::size_t j = 0; j < 4; ++j) CHECK(g.t_levels[j] == doctest::Approx((j + 1) * std::log(2.0)).epsilon(1e-11));
    CHECK(g.r == doctest::Approx(16.0 * std::exp(-3.0)).epsilon(1e-13));
    CHECK(g.r == doctest::Approx(0.796594).epsilon(1e-6));
    CHECK_FALSE(g.boundary_warning);
    CHECK_FALSE(g.near_integer);
  }
  SUBCASE("horizon before the first level") {
    const auto g = quantile_times(CtmcModel::pure_death(1.0), 0.5, 0.5);
    CHECK(g.j_max == 0);
    CHECK(g.t_levels.empty());
    CHECK(g.r == doctest::Approx(std::exp(-0.5)));
  }
  SUBCASE("no killing") {
    const auto g = quantile_times(testing::no_killing_two_state(), 0.5, 4.0);
    CHECK(g.no_mass_lost);
    CHECK(g.j_max == 0);
    CHECK(g.p_T == doctest::Approx(1.0));
  }
  SUBCASE("frozen benchmarks") {
    const auto g2 = quantile_times(testing::two_state(), 0.5, 2.5);
    CHECK(g2.p_T == doctest::Approx(frozen::two_state_pT).epsilon(1e-12));
    CHECK(g2.r == doctest::Approx(frozen::two_state_r).epsilon(1e-12));
    REQUIRE(g2.j_max == 3);
    for (std::size_t j = 0; j < 3; ++j) CHECK(g2.t_levels[j] == doctest::Approx(frozen::two_state_t[j]).epsilon(1e-10));

    const auto g5 = quantile_times(five_state(), 0.5, 3.802686);
    CHECK(g5.p_T == doctest::Approx(frozen::five_state_pT).epsilon(1e-12));
    CHECK(g5.r == doctest::Approx(frozen::five_state_r).epsilon(1e-12));
    REQUIRE(g5.j_max == 3);
    for (std::size_t j = 0; j < 3; ++j) CHECK(g5.t_levels[j] == doctest::Approx(frozen::five_state_t[j]).epsilon(1e-10));
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(std::abs(survival_probability(five_state(), g5.t_levels[j]) - std::pow(0.5, j + 1.0)) <= 1e-10);
    }
    CHECK(std::abs(g5.p_T - g5.r * std::pow(0.5, 3.0)) <= 1e-10);
  }
  SUBCASE("boundary warning near r = theta") {
    const auto g = quantile_times(CtmcModel::pure_death(1.0), 0.5, 4.0 * std::log(2.0) + 0.01);
    CHECK(g.j_max == 4);
    CHECK(g.boundary_warning);
  }
  SUBCASE("near-integer ratio") {
    const auto g = quantile_times(CtmcModel::pure_death(1.0), std::exp(-1.0), 3.0);
    CHECK(g.near_integer);
  }
  SUBCASE("plateau in the survival curve") {
    Eigen::MatrixXd q(2, 2);
    q << -1.0, 0.0, 0.0, 0.0;
    const CtmcModel m(q, Eigen::Vector2d(0.5, 0.5));
    CHECK_THROWS_AS(quantile_times(m, 0.9, 40.0), DegenerateQuantile);
  }
}

TEST_CASE("pure-death variances") {
  const auto pd = CtmcModel::pure_death(1.0);
  const double p = std::exp(-3.0);
  const double s = sigma2_sync(pd, ones(1), 0.5, 3.0);
  const double lower = 4.0 * 0.5 / 0.5 + (1.0 - 16.0 * p) / (16.0 * p);
  CHECK(s / (p * p) == doctest::Approx(lower).epsilon(1e-10));
  CHECK(s / (p * p) == doctest::Approx(4.25535).epsilon(1e-6));
  CHECK(s == doctest::Approx(0.0105482).epsilon(1e-5));
  CHECK(sigma2_sync_alt(pd, ones(1), 0.5, 3.0) == doctest::Approx(s).epsilon(1e-10));
  CHECK(relative_variance_bounds(p, 0.5).lower == doctest::Approx(s / (p * p)).epsilon(1e-10));
  CHECK(sigma2_classical(pd, ones(1), 3.0) / (p * p) == doctest::Approx(3.0).epsilon(1e-10));
  for (double term : sync_variance_terms(pd, ones(1), 0.5, 3.0)) CHECK(std::abs(term) <= 1e-12);
}

TEST_CASE("frozen 2-state and 5-state variances") {
  const auto m2 = testing::two_state();
  const Eigen::VectorXd ind0 = Eigen::Vector2d(1.0, 0.0);
  CHECK(sigma2_sync(m2, ones(2), 0.5, 2.5) == doctest::Approx(frozen::two_state_sync_one).epsilon(1e-9));
  CHECK(sigma2_sync(m2, ind0, 0.5, 2.5) == doctest::Approx(frozen::two_state_sync_ind0).epsilon(1e-9));
  CHECK(sigma2_classical(m2, ones(2), 2.5) == doctest::Approx(frozen::two_state_classical_one).epsilon(1e-9));
  CHECK(sigma2_classical(m2, ind0, 2.5) == doctest::Approx(frozen::two_state_classical_ind0).epsilon(1e-9));

  const auto& m5 = five_state();
  const Eigen::VectorXd index = Eigen::VectorXd::LinSpaced(5, 0.0, 4.0);
  const double t5 = 3.802686;
  CHECK(sigma2_sync(m5, ones(5), 0.5, t5) == doctest::Approx(frozen::five_state_sync_one).epsilon(1e-9));
  CHECK(sigma2_sync(m5, index, 0.5, t5) == doctest::Approx(frozen::five_state_sync_index).epsilon(1e-9));
  CHECK(sigma2_classical(m5, ones(5), t5) == doctest::Approx(frozen::five_state_classical_one).epsilon(1e-9));
  CHECK(sigma2_classical(m5, index, t5) == doctest::Approx(frozen::five_state_classical_index).epsilon(1e-9));
}

TEST_CASE("sync formulations agree on the benchmarks") {
  struct Case {
    const CtmcModel* model;
    double T;
  };
  const auto pd = CtmcModel::pure_death(1.0);
  const auto m2 = testing::two_state();
  for (const Case c : {Case{&pd, 3.0}, Case{&m2, 2.5}, Case{&five_state(), 3.802686}}) {
    const auto n = c.model->n_states();
    for (const Eigen::VectorXd& phi : {Eigen::VectorXd(ones(n)), Eigen::VectorXd(Eigen::VectorXd::LinSpaced(n, -2.0, 1.0))}) {
      const double a = sigma2_sync(*c.model, phi, 0.5, c.T);
      const double b = sigma2_sync_alt(*c.model, phi, 0.5, c.T);
      CHECK(std::abs(a - b) <= 1e-10 * std::abs(a));
    }
  }
}

TEST_CASE("bound sandwich and classical floor on the benchmarks") {
  const auto pd = CtmcModel::pure_death(1.0);
  const auto m2 = testing::two_state();
  struct Case {
    const CtmcModel* model;
    double T;
  };
  for (const Case c : {Case{&pd, 3.0}, Case{&m2, 2.5}, Case{&five_state(), 3.802686}}) {
    const double p = survival_probability(*c.model, c.T);
    const auto one = ones(c.model->n_states());
    const double rel = sigma2_sync(*c.model, one, 0.5, c.T) / (p * p);
    const auto b = relative_variance_bounds(p, 0.5);
    CHECK(b.lower <= rel * (1.0 + 1e-12));
    CHECK(rel <= b.upper);
    const double rel_classical = sigma2_classical(*c.model, one, c.T) / (p * p);
    CHECK(rel_classical >= -std::log(p) - 1e-9);
    CHECK(rel_classical <= 2.0 * (1.0 - p) / p + std::log(p));
  }
}

TEST_CASE("zero killing reduces every variance to the terminal law variance") {
  const auto m = testing::no_killing_two_state();
  const Eigen::VectorXd phi = Eigen::Vector2d(1.0, 3.0);
  const Eigen::RowVectorXd law = m.initial_law().transpose() * testing::dense_expm(m.sub_generator(), 2.0);
  const double v = law_variance(law, phi);
  CHECK(sigma2_sync(m, phi, 0.5, 2.0) == doctest::Approx(v).epsilon(1e-11));
  CHECK(sigma2_sync_alt(m, phi, 0.5, 2.0) == doctest::Approx(v).epsilon(1e-11));
  CHECK(sigma2_classical(m, phi, 2.0) == doctest::Approx(v).epsilon(1e-10));
}

TEST_CASE("relative_variance_bounds") {
  const double p = std::exp(-3.0);
  const auto b = relative_variance_bounds(p, 0.5);
  CHECK(b.lower == doctest::Approx(4.25535).epsilon(1e-6));
  CHECK(b.upper == doctest::Approx(26.500632355931888).epsilon(1e-12));

  SUBCASE("upper tends to the classical bound") {
    for (double pt : {0.3, 0.05, 1e-3}) {
      const double limit = 2.0 * (1.0 - pt) / pt + std::log(pt);
      CHECK(relative_variance_bounds(pt, 1.0 - 1e-7).upper == doctest::Approx(limit).epsilon(1e-4));
    }
  }
  SUBCASE("lower <= upper on a grid") {
    int checked = 0;
    for (int a = 0; a < 10; ++a) {
      for (int c = 0; c < 10; ++c) {
        const double pt = std::pow(10.0, -0.4 * (a + 0.37));
        const double th = 0.045 + 0.09 * c;
        const auto bb = relative_variance_bounds(pt, th);
        CHECK(bb.lower <= bb.upper * (1.0 + 1e-12));  // equal when j_max = 0
        ++checked;
      }
    }
    CHECK(checked == 100);
  }
}

TEST_CASE("h_theta") {
  const double p = std::exp(-3.0);
  CHECK(h_theta(p, 0.5) == doctest::Approx(4.25535).epsilon(1e-6));
  CHECK(std::abs(h_theta(p, 0.999) - 3.0) <= 0.01);
  double previous = h_theta(p, 0.05);
  for (int k = 6; k <= 95; ++k) {
    const double h = h_theta(p, k / 100.0);
    CHECK(h <= previous + 1e-12);
    previous = h;
  }
}

TEST_CASE("cost_model") {
  const double p = std::exp(-3.0);
  const auto c = cost_model(p, 0.5, 10'000);
  CHECK(c.cost_sync == doctest::Approx(3e4));
  CHECK(c.cost_classical == doctest::Approx(4e4));
  CHECK(cost_model(0.9, 0.5, 100).cost_sync == 100.0);
  CHECK(cost_model(1.0, 0.5, 100).cost_sync == 100.0);
  for (double pt : {0.5, 0.1, 1e-2, 1e-4}) {
    for (int k = 1; k < 100; ++k) {
      const auto cc = cost_model(pt, k / 100.0, 1000);
      CHECK(cc.cost_sync < cc.cost_classical);
    }
  }
}

TEST_CASE("oracle report") {
  OracleRequest req;
  req.theta = 0.5;
  req.T = 2.5;
  req.n_particles = 10'000;
  const auto m = testing::two_state();
  req.test_functions = {indicator_of_alive(), m.test_function("indicator:0")};
  const auto rep = build_oracle_report(m, req);
  CHECK(rep.sync_computed);
  CHECK(rep.grid.j_max == 3);
  CHECK(rep.eta_levels.size() == 3);
  for (const auto& eta : rep.eta_levels) CHECK(eta.sum() == doctest::Approx(1.0).epsilon(1e-12));
  const auto& one = rep.function("1_F");
  CHECK(*one.sigma2_sync == doctest::Approx(*one.sigma2_sync_alt).epsilon(1e-10));
  CHECK(one.gamma_T == doctest::Approx(frozen::two_state_pT).epsilon(1e-12));
  CHECK(one.eta_ratio == doctest::Approx(1.0));
  CHECK(one.variance_terms.size() == 3);
  CHECK(rep.function("indicator:0").eta_ratio > 0.0);
  CHECK(rep.cost->cost_sync == doctest::Approx(1e4 * 2.5));
  CHECK(rep.h_curve.size() == 19);
  CHECK(rep.warnings.empty());
  CHECK_THROWS_AS(rep.function("nope"), std::out_of_range);

  const auto j = to_json(rep);
  CHECK(j.at("j_max") == 3);
  CHECK(j.at("functions").size() == 2);

  req.include_sync = false;
  const auto closed = build_oracle_report(m, req);
  CHECK_FALSE(closed.sync_computed);
  CHECK_FALSE(closed.function("1_F").sigma2_sync.has_value());
  CHECK(closed.function("1_F").sigma2_classical == doctest::Approx(frozen::two_state_classical_one).epsilon(1e-9));
}

TEST_CASE("survival curve CSV") {
  const auto csv = survival_curve_csv(CtmcModel::pure_death(1.0), 2.0, 5);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "t,p_t");
  int rows = 0;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    const double t = std::stod(line.substr(0, comma));
    const double p = std::stod(line.substr(comma + 1));
    CHECK(p == doctest::Approx(std::exp(-t)).epsilon(1e-12));
    ++rows;
  }
  CHECK(rows == 5);
}
