#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "fedtta/datagen.hpp"
#include "fedtta/federation.hpp"
#include "fedtta/harness.hpp"
#include "fedtta/metrics.hpp"
#include "fedtta/tta.hpp"

using namespace fedtta;

namespace {

DomainSpec small_spec(std::string id = "s") {
  auto s = default_benchmark()[1];
  s.id = std::move(id);
  s.n_real = 60;
  s.n_attack = 40;
  return s;
}

std::size_t count(const std::vector<int>& y, int v) { return static_cast<std::size_t>(std::count(y.begin(), y.end(), v)); }

// Solves A x = b by Gaussian elimination with partial pivoting.
std::vector<double> solve(std::vector<std::vector<double>> A, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(A[r][c]) > std::abs(A[p][c])) p = r;
    std::swap(A[c], A[p]);
    std::swap(b[c], b[p]);
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = A[r][c] / A[c][c];
      for (std::size_t k = c; k < n; ++k) A[r][k] -= f * A[c][k];
      b[r] -= f * b[c];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= A[i][k] * x[k];
    x[i] = s / A[i][i];
  }
  return x;
}

// Fisher discriminant fitted on one draw and scored on a fresh one.
double linear_probe_auc(const DomainSpec& spec) {
  std::mt19937_64 fit_rng(11), test_rng(12);
  const auto fit = sample_base(spec, fit_rng);
  const auto test = sample_base(spec, test_rng);
  const std::size_t d = spec.base_dim;
  std::vector<double> mu[2] = {std::vector<double>(d), std::vector<double>(d)};
  std::size_t n[2] = {0, 0};
  for (std::size_t i = 0; i < fit.y.size(); ++i) {
    ++n[fit.y[i]];
    for (std::size_t j = 0; j < d; ++j) mu[fit.y[i]][j] += fit.X(i, j);
  }
  for (int c = 0; c < 2; ++c)
    for (auto& v : mu[c]) v /= static_cast<double>(n[c]);
  std::vector<std::vector<double>> S(d, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < fit.y.size(); ++i)
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b)
        S[a][b] += (fit.X(i, a) - mu[fit.y[i]][a]) * (fit.X(i, b) - mu[fit.y[i]][b]);
  std::vector<double> diff(d);
  for (std::size_t j = 0; j < d; ++j) diff[j] = mu[1][j] - mu[0][j];
  const auto w = solve(S, diff);
  ScoredSet s;
  for (std::size_t i = 0; i < test.y.size(); ++i) {
    double v = 0;
    for (std::size_t j = 0; j < d; ++j) v += w[j] * test.X(i, j);
    s.scores.push_back(v);
    s.labels.push_back(test.y[i]);
  }
  return auc(s);
}

double model_auc(const Parameters& W, const NetworkSpec& net, const LabeledData& d) {
  return auc({predict(W, net, d.X, NormStats::RunningStats), d.y});
}

}  // namespace

TEST(Datagen, DeterministicPerSeed) {
  EXPECT_EQ(make_domain(small_spec(), 3), make_domain(small_spec(), 3));
  EXPECT_NE(make_domain(small_spec(), 3).X, make_domain(small_spec(), 4).X);
}

TEST(Datagen, ClassCountsAndStratifiedSplit) {
  const auto ds = make_domain(small_spec(), 1);
  EXPECT_EQ(ds.size(), 100u);
  EXPECT_EQ(count(ds.y, 1), 60u);
  EXPECT_EQ(count(ds.y, 0), 40u);
  const auto dev = ds.dev(), train = ds.train();
  EXPECT_EQ(count(dev.y, 1), 12u);
  EXPECT_EQ(count(dev.y, 0), 8u);
  EXPECT_EQ(train.y.size(), 80u);
}

TEST(Datagen, RowsAreShuffled) {
  const auto ds = make_domain(small_spec(), 1);
  EXPECT_NE(std::vector<int>(ds.y.begin(), ds.y.begin() + 60), std::vector<int>(60, 1));
}

TEST(Datagen, RejectsDegenerateSpecs) {
  auto s = small_spec();
  s.shift.scale[3] = 0.0;
  EXPECT_THROW(make_domain(s, 1), std::invalid_argument);
  s = small_spec();
  s.noise_sigma = 0.0;
  EXPECT_THROW(make_domain(s, 1), std::invalid_argument);
  s = small_spec();
  s.n_attack = 1;
  EXPECT_THROW(make_domain(s, 1), std::invalid_argument);
  s = small_spec();
  s.base_dim = 7;
  EXPECT_THROW(make_domain(s, 1), std::invalid_argument);
}

TEST(Datagen, AttackStylesUseDisjointDirections) {
  const std::vector<double> off(8, 2.0);
  const auto p = detail::style_offset(off, AttackStyle::Print);
  const auto r = detail::style_offset(off, AttackStyle::Replay);
  double dot = 0;
  for (std::size_t j = 0; j < 8; ++j) dot += p[j] * r[j];
  EXPECT_EQ(dot, 0.0);
  auto s = small_spec();
  s.attack_style = AttackStyle::Mixed;
  s.print_share = 0.25;
  std::size_t prints = 0;
  for (std::size_t i = 0; i < 40; ++i) prints += attack_offset_for(s, i)[0] != 0.0;
  EXPECT_EQ(prints, 10u);
}

TEST(Datagen, LinearProbeOnUnshiftedBase) {
  for (const auto& spec : center_sweep_benchmark()) EXPECT_GE(linear_probe_auc(spec), 0.95) << spec.id;
  for (const auto& spec : attack_type_benchmark()) EXPECT_GE(linear_probe_auc(spec), 0.95) << spec.id;
}

TEST(Datagen, NearlySeparableConstruction) {
  auto s = small_spec();
  s.n_real = s.n_attack = 200;
  s.noise_sigma = 1e-3;
  s.mixture_separation = 0.0;
  s.attack_offset.assign(8, 10.0);
  const auto ds = make_domain(s, 2);
  FedConfig cfg;
  cfg.rounds = 5;
  const auto W = train_centralized(default_network(), ds.train(), cfg);
  EXPECT_GT(model_auc(W, default_network(), ds.dev()), 0.999);
}

TEST(Datagen, RotationCreatesDomainGap) {
  auto a = small_spec("a");
  a.n_real = a.n_attack = 500;
  a.shift.rotation_deg = 0.0;
  auto b = a;
  b.id = "b";
  b.shift.rotation_deg = 90.0;
  const auto da = make_domain(a, 5), db = make_domain(b, 5);
  FedConfig cfg;
  cfg.rounds = 10;
  const auto W = train_centralized(default_network(), da.train(), cfg);
  const double within = model_auc(W, default_network(), da.dev());
  const double cross = model_auc(W, default_network(), LabeledData{db.X, db.y});
  EXPECT_LT(cross, within);
}

TEST(Datagen, DefaultBenchmarkDomainGap) {
  const auto domains = make_benchmark(default_benchmark(), 1);
  const FedConfig cfg;
  const auto net = default_network();
  for (std::size_t k = 0; k < domains.size(); ++k) {
    const auto W = train_centralized(net, domains[k].train(), cfg);
    const double within = model_auc(W, net, domains[k].dev());
    for (std::size_t j = 0; j < domains.size(); ++j) {
      if (j == k) continue;
      const double cross = model_auc(W, net, LabeledData{domains[j].X, domains[j].y});
      EXPECT_LE(cross, within - 0.03) << domains[k].id << " -> " << domains[j].id;
    }
  }
}

TEST(Datagen, LeaveOneOutPartition) {
  const auto domains = make_benchmark(default_benchmark(), 1);
  const auto s = leave_one_out_split(domains, 0);
  ASSERT_EQ(s.centers.size(), 3u);
  EXPECT_EQ(s.user.id, "dA");
  EXPECT_EQ(s.user.X, domains[0].X);
  EXPECT_EQ(s.user.labels.size(), domains[0].size());
  std::multiset<std::string> as_user;
  for (std::size_t u = 0; u < domains.size(); ++u) {
    const auto split = leave_one_out_split(domains, u);
    as_user.insert(split.user.id);
    for (const auto& c : split.centers) EXPECT_NE(c.id, split.user.id);
  }
  EXPECT_EQ(as_user, (std::multiset<std::string>{"dA", "dB", "dC", "dD"}));
  EXPECT_THROW(leave_one_out_split(domains, 4), std::out_of_range);
  EXPECT_THROW(leave_one_out_split({domains[0]}, 0), std::invalid_argument);
}

TEST(Datagen, SealedLabelsOnlyThroughScoring) {
  const auto domains = make_benchmark(default_benchmark(), 1);
  const auto s = leave_one_out_split(domains, 2);
  const auto scored = score_against(s.user.labels, std::vector<double>(domains[2].size(), 0.5));
  EXPECT_EQ(scored.labels, domains[2].y);
  EXPECT_THROW(score_against(s.user.labels, {0.5}), std::invalid_argument);
}

TEST(Datagen, CsvRoundtrip) {
  std::vector<DomainDataset> ds{make_domain(small_spec("x"), 1), make_domain(small_spec("y"), 2)};
  std::stringstream ss;
  write_dataset_csv(ss, ds);
  const auto back = read_dataset_csv(ss);
  EXPECT_EQ(back, ds);
}

TEST(Datagen, CsvRejectsMalformed) {
  std::stringstream bad("id,f0,f1,label,split\nx,0.1,0.2,3,train\n");
  EXPECT_THROW(read_dataset_csv(bad), std::runtime_error);
  std::stringstream ragged("id,f0,f1,label,split\nx,0.1,1,train\n");
  EXPECT_THROW(read_dataset_csv(ragged), std::runtime_error);
}
