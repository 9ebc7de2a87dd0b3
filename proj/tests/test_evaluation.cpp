#include <doctest.h>

#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "nestwave/errors.hpp"
#include "nestwave/evaluation.hpp"
#include "nestwave/pipeline.hpp"

using namespace nestwave;

namespace {

// Straight double loop over the stored matrix.
WaicResult naive_waic(const Eigen::MatrixXd& ll) {
  WaicResult r;
  const auto h = static_cast<double>(ll.rows());
  for (Eigen::Index i = 0; i < ll.cols(); ++i) {
    double s = 0.0;
    double m = 0.0;
    for (Eigen::Index d = 0; d < ll.rows(); ++d) {
      s += std::exp(static_cast<long double>(ll(d, i)));
      m += ll(d, i);
    }
    m /= h;
    double v = 0.0;
    for (Eigen::Index d = 0; d < ll.rows(); ++d) v += (ll(d, i) - m) * (ll(d, i) - m);
    r.lpd_hat += std::log(s / h);
    r.p_waic += v / (h - 1.0);
  }
  r.waic = -2.0 * r.lpd_hat + 2.0 * r.p_waic;
  return r;
}

HaulDataset two_category(const std::vector<int>& quarters, int num_quarters) {
  std::vector<HaulRecord> recs;
  int obs = 0;
  for (int q : quarters) {
    HaulRecord r;
    r.trip = 1;
    r.obs = ++obs;
    r.quarter = q;
    r.counts = {3, 4};
    recs.push_back(r);
  }
  return HaulDataset({"a", "b"}, recs, num_quarters, 1);
}

const char* kPair = R"({"root": "a vs b", "nodes": [{"label": "a vs b", "children": [1, 2]}]})";

// One-draw archive with η = 0 and a vanishing σ, so p = 0.5 at every time point.
SampleArchive half_archive(const BranchPosterior& m) {
  SampleArchive a;
  a.chains = 1;
  a.draws_per_chain = 1;
  a.dimension = m.dimension();
  a.draws.assign(m.dimension(), 0.0);
  a.draws[m.layout().at("log_sigma").offset] = -60.0;
  return a;
}

}  // namespace

TEST_CASE("WAIC worked examples") {
  Eigen::MatrixXd c = Eigen::MatrixXd::Constant(5, 1, -2.5);
  const WaicResult r = waic(c);
  CHECK(r.p_waic == 0.0);
  CHECK(r.waic == doctest::Approx(5.0).epsilon(1e-14));

  Eigen::MatrixXd two(2, 1);
  two << -1.0, -3.0;
  const WaicResult t = waic(two);
  const double lpd = std::log((std::exp(-1.0) + std::exp(-3.0)) / 2.0);
  CHECK(t.lpd_hat == doctest::Approx(lpd).epsilon(1e-14));
  CHECK(t.p_waic == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(t.waic == doctest::Approx(-2.0 * lpd + 4.0).epsilon(1e-14));
  CHECK(t.waic == -2.0 * t.lpd_hat + 2.0 * t.p_waic);

  CHECK_THROWS_AS(waic(Eigen::MatrixXd::Zero(1, 3)), ValidationError);
  Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(3, 2);
  bad(1, 1) = kNegInf;
  CHECK_THROWS_AS(waic(bad), NumericalError);
  bad(1, 1) = std::nan("");
  CHECK_THROWS_AS(waic(bad), NumericalError);
}

TEST_CASE("WAIC matches the naive recomputation and is additive") {
  Rng rng = make_rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int rep = 0; rep < 20; ++rep) {
    const int h = 2 + rep * 37;
    const int m = 1 + rep % 9;
    Eigen::MatrixXd ll(h, m);
    for (Eigen::Index i = 0; i < ll.size(); ++i) ll.data()[i] = -3.0 + 2.0 * n(rng) - 40.0 * (rep % 3);
    const WaicResult fast = waic(ll);
    const WaicResult slow = naive_waic(ll);
    CHECK(std::abs(fast.waic - slow.waic) < 1e-8 * std::max(1.0, std::abs(slow.waic)));
    CHECK(std::abs(fast.p_waic - slow.p_waic) < 1e-8 * std::max(1.0, slow.p_waic));
    CHECK(fast.p_waic >= 0.0);
    CHECK(fast.waic == -2.0 * fast.lpd_hat + 2.0 * fast.p_waic);
    CHECK(fast.lpd_pointwise.size() == static_cast<std::size_t>(m));

    if (m >= 2) {
      const int cut = m / 2;
      const WaicResult left = waic(ll.leftCols(cut));
      const WaicResult right = waic(ll.rightCols(m - cut));
      CHECK(left.waic + right.waic == doctest::Approx(fast.waic).epsilon(1e-12));
      CHECK(left.p_waic + right.p_waic == doctest::Approx(fast.p_waic).epsilon(1e-12));
    }
  }
}

TEST_CASE("WAIC from an archive equals WAIC of its matrix") {
  SampleArchive a;
  a.chains = 2;
  a.draws_per_chain = 3;
  a.dimension = 1;
  a.observations = 2;
  a.draws = {0, 1, 2, 3, 4, 5};
  a.loglik = {-1, -2, -1.5, -2.5, -0.5, -3, -1.2, -2.2, -0.9, -1.9, -1.1, -2.8};
  const WaicResult x = waic(a);
  const WaicResult y = waic(a.loglik_matrix());
  CHECK(x.waic == doctest::Approx(y.waic).epsilon(1e-15));
  CHECK(x.p_waic == doctest::Approx(naive_waic(a.loglik_matrix()).p_waic).epsilon(1e-12));
}

TEST_CASE("holdout splits") {
  std::vector<int> all_single;
  for (int q = 1; q <= 10; ++q) all_single.push_back(q);
  CHECK_THROWS_AS(make_holdout(two_category(all_single, 10), 0.1, 1), ValidationError);

  std::vector<int> quarters;
  for (int i = 0; i < 100; ++i) quarters.push_back(1 + i % 20);
  const HaulDataset d = two_category(quarters, 20);
  const HoldoutSplit s = make_holdout(d, 0.1, 3);
  CHECK(s.test.size() == 10);
  CHECK(s.train.size() == 90);
  CHECK(make_holdout(d, 0.1, 3).test == s.test);
  CHECK(make_holdout(d, 0.1, 4).test != s.test);
  CHECK_THROWS_AS(make_holdout(d, 0.0, 3), ValidationError);
  CHECK_THROWS_AS(make_holdout(d, 1.0, 3), ValidationError);

  // Mixed eligibility: quarters 1..5 have one record each, the rest several.
  std::vector<int> mixed = {1, 2, 3, 4, 5};
  for (int i = 0; i < 60; ++i) mixed.push_back(6 + i % 6);
  const HaulDataset md = two_category(mixed, 11);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const HoldoutSplit h = make_holdout(md, 0.5, seed);
    std::set<int> train_quarters;
    for (std::size_t i : h.train) train_quarters.insert(md.record(i).quarter);
    CHECK(train_quarters.size() == 11);
    for (std::size_t i : h.test) {
      CHECK(h.eligible[i]);
      CHECK(md.record(i).quarter >= 6);
    }
    CHECK(h.train.size() + h.test.size() == md.size());
  }
}

TEST_CASE("holdout test records are drawn uniformly over eligible records") {
  std::vector<int> quarters;
  for (int i = 0; i < 40; ++i) quarters.push_back(1 + i % 4);
  const HaulDataset d = two_category(quarters, 4);
  std::vector<int> hits(40, 0);
  const int reps = 4000;
  for (int rep = 0; rep < reps; ++rep) {
    for (std::size_t i : make_holdout(d, 0.1, static_cast<std::uint64_t>(rep)).test) ++hits[i];
  }
  // Each record is held out with probability 4/40; chi-square over 40 cells.
  const double expected = reps * 0.1;
  double chi2 = 0.0;
  for (int h : hits) chi2 += (h - expected) * (h - expected) / expected;
  CHECK(chi2 < 70.0);  // upper 0.1% point of chi-square with 39 df is 72.05
}

TEST_CASE("predictions from a single known draw") {
  std::vector<int> quarters;
  for (int i = 0; i < 8; ++i) quarters.push_back(1 + i % 4);
  const HaulDataset d = two_category(quarters, 4);
  const NestingTree tree = NestingTree::parse(kPair);
  const ModelDesign design = design_for(4, 2);
  const BranchPosterior cm = make_model(d, tree, 0, Variant::CMB, design);
  const SampleArchive a = half_archive(cm);
  REQUIRE(inv_logit(cm.mu(a.draw(0))[2]) == doctest::Approx(0.5));

  const PredictionTarget none{0, 2, 0, 0};
  const auto p0 = predict_holdout(cm, a, std::span(&none, 1), 1);
  CHECK(p0[0].median == 0.0);
  CHECK(p0[0].lo95 == 0.0);
  CHECK(p0[0].hi95 == 0.0);
  CHECK(p0[0].covers());

  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const PredictionTarget big{1, 3, 1000000, 500000};
    const auto p = predict_holdout(cm, a, std::span(&big, 1), seed);
    CHECK(std::abs(p[0].median - 5e5) < 3.0 * std::sqrt(1e6 * 0.25));
    CHECK(p[0].sqrt_median == doctest::Approx(std::sqrt(p[0].median)));
  }

  const PredictionTarget outside{2, 5, 10, 3};
  CHECK_THROWS_AS(predict_holdout(cm, a, std::span(&outside, 1), 1), ValidationError);

  const BranchPosterior mn = make_model(d, tree, 0, Variant::Multinomial, design);
  SampleArchive ma;
  ma.chains = 1;
  ma.draws_per_chain = 1;
  ma.dimension = mn.dimension();
  ma.draws.assign(mn.dimension(), 0.0);
  const PredictionTarget one{3, 1, 10, 3};
  CHECK_THROWS_AS(predict_holdout(mn, ma, std::span(&one, 1), 1), ValidationError);
  CHECK_NOTHROW(predict_holdout(mn, ma, std::span(&one, 1), 1, &tree.root()));
  CHECK_THROWS_AS(predict_holdout(mn, a, std::span(&one, 1), 1, &tree.root()), ValidationError);
}

TEST_CASE("predictive spread follows the draw distribution") {
  // Many identical draws at p = 0.5: percentiles of Bin(100, 0.5).
  std::vector<int> quarters = {1, 1, 2, 2};
  const HaulDataset d = two_category(quarters, 2);
  const NestingTree tree = NestingTree::parse(kPair);
  const BranchPosterior cm = make_model(d, tree, 0, Variant::CMB, design_for(2, 2));
  SampleArchive a = half_archive(cm);
  const std::vector<double> x = a.draws;
  a.draws_per_chain = 20000;
  a.draws.clear();
  for (int i = 0; i < 20000; ++i) a.draws.insert(a.draws.end(), x.begin(), x.end());
  const PredictionTarget t{0, 1, 100, 50};
  const auto p = predict_holdout(cm, a, std::span(&t, 1), 9);
  CHECK(p[0].median == 50.0);
  CHECK(p[0].lo95 == doctest::Approx(40.0).epsilon(0.03));
  CHECK(p[0].hi95 == doctest::Approx(60.0).epsilon(0.03));
}

TEST_CASE("coverage and predictions CSV round trip") {
  std::vector<Prediction> ps(3);
  ps[0] = {7, 4, 10, 5.5, 4.0, 9.0, 2.0, std::sqrt(5.5), 2.0, 3.0};
  ps[1] = {8, 1, 10, 5.0, 2.0, 9.0, 1.0, std::sqrt(5.0), std::sqrt(2.0), 3.0};
  ps[2] = {9, 9, 10, 5.0, 2.0, 9.0, 3.0, std::sqrt(5.0), std::sqrt(2.0), 3.0};
  CHECK(coverage(ps) == doctest::Approx(2.0 / 3.0));
  CHECK(std::isnan(coverage(std::span<const Prediction>())));
  std::stringstream io;
  write_predictions_csv(io, ps);
  std::string header;
  std::getline(std::istringstream(io.str()), header);
  CHECK(header.rfind("record_id,observed,median,lo95,hi95", 0) == 0);
  const auto back = read_predictions_csv(io);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].record_id == ps[i].record_id);
    CHECK(back[i].observed == ps[i].observed);
    CHECK(back[i].median == ps[i].median);
    CHECK(back[i].lo95 == ps[i].lo95);
    CHECK(back[i].hi95 == ps[i].hi95);
    CHECK(back[i].sqrt_median == ps[i].sqrt_median);
  }
  std::stringstream bad("record_id,observed,median,lo95,hi95\n1,2,x\n");
  CHECK_THROWS_AS(read_predictions_csv(bad), ValidationError);
}
