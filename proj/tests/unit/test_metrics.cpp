#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "circuitprobe/error.hpp"
#include "circuitprobe/metrics.hpp"
#include "oracles.hpp"

using namespace circuitprobe;
using namespace circuitprobe::testing;

TEST_CASE("metrics match brute-force oracles on 1000 random cases") {
  std::mt19937_64 rng(2024);
  std::size_t compared = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng() % 40;
    const bool ties = trial % 3 == 0;
    std::vector<double> x(n), y(n), labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = ties ? static_cast<double>(rng() % 5) : static_cast<double>(rng() % 100000) / 977.0 - 50.0;
      y[i] = ties ? static_cast<double>(rng() % 4) : std::sin(static_cast<double>(rng() % 1000)) * 10.0;
      labels[i] = static_cast<double>(rng() % 4);
    }
    const auto p = pearson(x, y);
    const auto s = spearman(x, y);
    if (p) {
      CHECK(std::abs(*p - naive_pearson(x, y)) < 1e-10);
      REQUIRE(s);
      CHECK(std::abs(*s - naive_pearson(naive_ranks(x), naive_ranks(y))) < 1e-10);
      ++compared;
    }
    CHECK(average_ranks(x) == naive_ranks(x));
    const std::size_t k = 1 + rng() % 12;
    const auto nd = ndcg_for_scores(x, labels, k);
    if (nd) CHECK(std::abs(*nd - naive_ndcg(x, labels, k)) < 1e-10);
    else CHECK(std::all_of(labels.begin(), labels.end(), [](double l) { return l == 0.0; }));
  }
  CHECK(compared > 900);
}

TEST_CASE("metric edge cases") {
  const std::vector<double> a{1, 2, 3, 4}, b{2, 4, 6, 8}, c{5, 5, 5, 5};
  CHECK(*pearson(a, b) == doctest::Approx(1.0));
  CHECK_FALSE(pearson(a, c).has_value());
  CHECK_FALSE(spearman(a, c).has_value());
  CHECK_FALSE(pearson(std::vector<double>{1}, std::vector<double>{2}).has_value());
  CHECK_THROWS_AS(pearson(a, std::vector<double>{1, 2}), ValidationError);

  const std::vector<double> ideal{3, 2, 1, 0};
  CHECK(*ndcg_at_k(ideal, 10) == doctest::Approx(1.0));
  CHECK_FALSE(ndcg_at_k(std::vector<double>{0, 0}, 10).has_value());
  CHECK_THROWS_AS(ndcg_at_k(std::vector<double>{-1, 1}, 10), ValidationError);
  CHECK(dcg_at_k(std::vector<double>{1, 1}, 1) == doctest::Approx(1.0));

  const auto s = summarize(std::vector<double>{3, 1, 2, 10});
  CHECK(s.median == 2.5);
  CHECK(s.mean == 4.0);
  CHECK(s.sd == doctest::Approx(std::sqrt(50.0 / 3.0)));
  CHECK(summarize(std::vector<double>{}).n == 0);
}
