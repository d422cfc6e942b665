#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "spiro/errors.hpp"
#include "spiro/eval.hpp"

using namespace spiro;
using namespace spiro::eval;

namespace {

double brute_force_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      pairs += 1.0;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

TrialResult trial(std::uint64_t seed, double auc, double brier_score,
                  const std::string& method = "transformer") {
  TrialResult r;
  r.endpoint = Endpoint::copd_risk;
  r.method = method;
  r.auc = auc;
  r.brier = brier_score;
  r.seed = seed;
  return r;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("perfect separation and all-ties") {
  const std::vector<double> s{0.1, 0.2, 0.8, 0.9};
  const std::vector<int> y{0, 0, 1, 1};
  CHECK(roc_auc(s, y) == 1.0);
  const std::vector<double> flat(4, 0.3);
  CHECK(roc_auc(flat, y) == 0.5);
}

TEST_CASE("AUC matches pair enumeration on random tied instances") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> size(2, 12), level(0, 4);
  std::bernoulli_distribution coin(0.5);
  for (int trial_no = 0; trial_no < 1000; ++trial_no) {
    const int n = size(rng);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (int i = 0; i < n; ++i) {
      s[i] = level(rng) * 0.25;  // coarse levels force ties
      y[i] = coin(rng);
    }
    y[0] = 0;
    y[1] = 1;
    const double a = roc_auc(s, y);
    CHECK(std::abs(a - brute_force_auc(s, y)) <= 1e-12);
    std::vector<double> neg(s);
    for (double& v : neg) v = -v;
    CHECK(a + roc_auc(neg, y) == 1.0);
  }
}

TEST_CASE("AUC is invariant to strictly increasing transforms") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> s(200), t(200);
  std::vector<int> y(200);
  for (int i = 0; i < 200; ++i) {
    s[i] = n(rng);
    y[i] = s[i] + n(rng) > 0.0;
    t[i] = std::exp(3.0 * s[i]) + 5.0;
  }
  CHECK(roc_auc(s, y) == roc_auc(t, y));
}

TEST_CASE("AUC with one class is undefined") {
  const std::vector<double> s{0.1, 0.2};
  const std::vector<int> y{1, 1};
  try {
    roc_auc(s, y);
    FAIL("expected a degenerate error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::degenerate);
  }
}

TEST_CASE("Brier examples") {
  const std::vector<int> y{1, 0};
  CHECK(brier(std::vector<double>{1.0, 0.0}, y) == 0.0);
  CHECK(brier(std::vector<double>{0.5, 0.5}, y) == 0.25);
  CHECK(brier(std::vector<double>{0.8, 0.3}, y) == doctest::Approx(0.065).epsilon(1e-14));
  CHECK_THROWS_AS(brier(std::vector<double>{1.2, 0.0}, y), Error);
}

TEST_CASE("Brier matches the direct formula") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> p(25);
    std::vector<int> y(25);
    double direct = 0.0;
    for (int i = 0; i < 25; ++i) {
      p[i] = u(rng);
      y[i] = u(rng) < 0.4;
      direct += (p[i] - y[i]) * (p[i] - y[i]);
    }
    CHECK(brier(p, y) == doctest::Approx(direct / 25.0).epsilon(1e-14));
  }
}

TEST_CASE("constant predictor minimizing Brier is the prevalence") {
  const std::vector<int> y{1, 0, 0, 1, 0, 0, 0, 1, 0, 0};
  const double prevalence = 0.3;
  const double best = brier(std::vector<double>(10, prevalence), y);
  for (double c = 0.0; c <= 1.0; c += 0.01) {
    CHECK(brier(std::vector<double>(10, c), y) >= best - 1e-15);
  }
}

TEST_CASE("aggregation of identical trials has zero spread") {
  std::vector<TrialResult> r;
  for (std::uint64_t s = 1; s <= 5; ++s) r.push_back(trial(s, 0.81, 0.12));
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  const auto rows = trial_aggregate(r, seeds);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].metric == "roc_auc");
  CHECK(rows[0].mean == doctest::Approx(0.81));
  CHECK(rows[0].sd == 0.0);
  CHECK(rows[1].metric == "brier");
  CHECK(rows[1].sd == 0.0);
}

TEST_CASE("sample sd of 0.8 x3 and 0.9 x2") {
  const std::vector<double> v{0.8, 0.8, 0.8, 0.9, 0.9};
  const MeanSd m = mean_sd(v);
  CHECK(m.mean == doctest::Approx(0.84).epsilon(1e-14));
  // sum of squared deviations = 3(0.04)^2 + 2(0.06)^2 = 0.012; / 4 = 0.003
  CHECK(m.sd == doctest::Approx(std::sqrt(0.003)).epsilon(1e-13));
  CHECK(std::abs(m.sd - 0.0548) < 5e-5);
}

TEST_CASE("aggregation does not depend on trial order") {
  std::vector<TrialResult> r;
  const double aucs[] = {0.71, 0.93, 0.88, 0.64, 0.79};
  for (std::uint64_t s = 1; s <= 5; ++s) r.push_back(trial(s, aucs[s - 1], aucs[s - 1] / 5));
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  const auto a = trial_aggregate(r, seeds);
  std::reverse(r.begin(), r.end());
  const auto b = trial_aggregate(r, seeds);
  std::swap(r[0], r[3]);
  const auto c = trial_aggregate(r, seeds);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].mean == b[i].mean);
    CHECK(a[i].sd == b[i].sd);
    CHECK(a[i].mean == c[i].mean);
    CHECK(a[i].sd == c[i].sd);
  }
}

TEST_CASE("missing and duplicated seeds are named") {
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<TrialResult> r;
  for (std::uint64_t s : {1, 2, 4, 5}) r.push_back(trial(s, 0.8, 0.1));
  try {
    trial_aggregate(r, seeds);
    FAIL("expected a data error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::data);
    CHECK(std::string(e.what()).find('3') != std::string::npos);
  }
  r.push_back(trial(2, 0.8, 0.1));
  r.push_back(trial(3, 0.8, 0.1));
  CHECK_THROWS_AS(trial_aggregate(r, seeds), Error);
}

TEST_CASE("CSV layout") {
  std::vector<TrialResult> r;
  for (std::uint64_t s = 1; s <= 2; ++s) {
    r.push_back(trial(s, 0.8 + 0.1 * s, 0.1, "transformer"));
    r.push_back(trial(s, 0.7, 0.2, "fev1_fvc_ratio"));
  }
  const std::vector<std::uint64_t> seeds{1, 2};
  const std::string csv = to_csv(trial_aggregate(r, seeds));
  CHECK(csv.rfind("endpoint,method,metric,mean,sd\n", 0) == 0);
  CHECK(csv.find("copd_risk,transformer,roc_auc,0.950000,0.070711\n") != std::string::npos);
  CHECK(csv.find("copd_risk,fev1_fvc_ratio,brier,0.200000,0.000000\n") != std::string::npos);
}

}  // TEST_SUITE
