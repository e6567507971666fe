// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.
// Usage: acceptance [--cli <path to fedtta binary>] [--work <scratch dir>]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fd_oracle.hpp"
#include "fedtta/fedtta.hpp"
#include "metric_oracle.hpp"
#include "support.hpp"

using namespace fedtta;
namespace ft = fedtta::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string cli_path;
fs::path work_dir = fs::temp_directory_path() / "fedtta_acceptance";

// 1 ---------------------------------------------------------------------------
Outcome gradient_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t checked = 0, skipped = 0, bad = 0;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto c = ft::random_case(1000 + seed);
    for (auto mode : {ForwardMode::Train, ForwardMode::Eval, ForwardMode::AdaptBatchStats}) {
      for (auto obj : {ft::Objective::Bce, ft::Objective::Entropy}) {
        auto fr = forward(c.params, c.spec, c.X, mode);
        const auto loss = obj == ft::Objective::Bce ? bce_loss(fr.p, c.y) : entropy_loss(fr.p);
        const auto g = backward(c.params, c.spec, fr.cache, loss.grad);
        for (std::size_t a = 0; a < c.params.arrays.size(); ++a) {
          if (!is_trainable(c.params.arrays[a].kind)) continue;
          for (std::size_t i = 0; i < c.params.arrays[a].values.size(); ++i) {
            const auto fd = ft::fd_gradient(c, mode, obj, a, i);
            if (!fd.valid) {
              ++skipped;
              continue;
            }
            ++checked;
            const double e = ft::fd_relative_error(g.arrays[a][i], fd.numeric);
            worst = std::max(worst, e);
            if (e > ft::kFdRelTol) ++bad;
          }
        }
      }
    }
  }
  const double t = seconds_since(t0);
  return {bad == 0 && t < 30.0 && skipped * 100 < checked,
          std::to_string(checked) + " entries, " + std::to_string(bad) + " over tolerance, worst rel err " +
              fmt("%.2e", worst) + ", " + std::to_string(skipped) + " skipped at ReLU kinks, " + fmt("%.1f s", t)};
}

// 2 ---------------------------------------------------------------------------
Outcome aggregation_exactness() {
  std::mt19937_64 rng(77);
  double worst_mean = 0.0, worst_lin = 0.0;
  bool identity = true, permutation = true;
  for (int trial = 0; trial < 60; ++trial) {
    const NetworkSpec spec{2 + rng() % 6, {1 + rng() % 7, 1 + rng() % 5}};
    const std::size_t K = 1 + rng() % 7;
    std::vector<Parameters> u, v;
    for (std::size_t k = 0; k < K; ++k) {
      u.push_back(ft::random_parameters(spec, rng()));
      v.push_back(ft::random_parameters(spec, rng()));
    }
    const auto au = aggregate(u), av = aggregate(v);
    for (std::size_t a = 0; a < au.arrays.size(); ++a)
      for (std::size_t i = 0; i < au.arrays[a].values.size(); ++i) {
        long double s = 0;
        for (const auto& p : u) s += p.arrays[a].values[i];
        worst_mean = std::max(worst_mean, static_cast<double>(std::abs(s / K - au.arrays[a].values[i])));
      }
    identity = identity && aggregate(std::span<const Parameters>(u.data(), 1)) == u[0];
    auto shuffled = u;
    for (int r = 0; r < 5; ++r) {
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      permutation = permutation && aggregate(shuffled) == au;
    }
    const double alpha = std::uniform_real_distribution<double>(-2, 2)(rng);
    const double beta = std::uniform_real_distribution<double>(-2, 2)(rng);
    std::vector<Parameters> w = u;
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t a = 0; a < w[k].arrays.size(); ++a)
        for (std::size_t i = 0; i < w[k].arrays[a].values.size(); ++i)
          w[k].arrays[a].values[i] = alpha * u[k].arrays[a].values[i] + beta * v[k].arrays[a].values[i];
    const auto aw = aggregate(w);
    for (std::size_t a = 0; a < aw.arrays.size(); ++a)
      for (std::size_t i = 0; i < aw.arrays[a].values.size(); ++i)
        worst_lin = std::max(worst_lin, std::abs(aw.arrays[a].values[i] -
                                                 (alpha * au.arrays[a].values[i] + beta * av.arrays[a].values[i])));
  }
  return {worst_mean <= 1e-12 && worst_lin <= 1e-12 && identity && permutation,
          "60 random sets, max mean err " + fmt("%.1e", worst_mean) + ", max linearity err " + fmt("%.1e", worst_lin) +
              ", K=1 identity " + (identity ? "ok" : "broken") + ", permutation " + (permutation ? "bitwise" : "differs")};
}

// 3 ---------------------------------------------------------------------------
Outcome freeze_contract() {
  std::mt19937_64 rng(303);
  std::size_t runs = 0, min_steps = SIZE_MAX, violations = 0;
  for (int trial = 0; trial < 12; ++trial) {
    const NetworkSpec spec{2 + rng() % 7, {2 + rng() % 10, 2 + rng() % 6}};
    const auto W = ft::random_parameters(spec, rng());
    std::vector<Matrix> stream;
    std::size_t rows_total = 0;
    TtaConfig cfg;
    cfg.steps_per_batch = 1 + rng() % 4;
    cfg.lr = std::pow(10.0, -1.0 - static_cast<double>(rng() % 30) / 10.0);
    cfg.mode = trial % 2 ? TtaMode::Episodic : TtaMode::Online;
    while (stream.size() * cfg.steps_per_batch < 200) {
      const std::size_t n = 2 + rng() % 40;
      stream.push_back(ft::gaussian_matrix(n, spec.input_dim, rng(), 0.5 + (rng() % 20) / 5.0, 0.1 * (rng() % 30)));
      rows_total += n;
    }
    const auto r = adapt(W, spec, stream, cfg);
    ++runs;
    min_steps = std::min(min_steps, r.trace.steps.size());
    for (std::size_t a = 0; a < W.arrays.size(); ++a) {
      if (is_affine(W.arrays[a].kind)) continue;
      const auto& x = W.arrays[a].values;
      const auto& y = r.params.arrays[a].values;
      if (std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) != 0) ++violations;
    }
    if (r.params.affine_mask != W.affine_mask || !(r.params.spec == W.spec)) ++violations;
  }
  return {violations == 0 && min_steps >= 200,
          std::to_string(runs) + " randomized runs, >= " + std::to_string(min_steps) + " steps each, " +
              std::to_string(violations) + " frozen arrays changed"};
}

// Fed models for each leave-one-out split of the default benchmark.
struct DefaultSplits {
  ExperimentConfig cfg;
  std::vector<LeaveOneOut> splits;
  std::vector<Parameters> fed;
};

const DefaultSplits& default_splits() {
  static const DefaultSplits d = [] {
    DefaultSplits s;
    const auto domains = make_benchmark(s.cfg.domains, s.cfg.data_seed);
    for (std::size_t u = 0; u < domains.size(); ++u) {
      s.splits.push_back(leave_one_out_split(domains, u));
      s.fed.push_back(run_federated_training(s.cfg.net, s.splits.back().centers, s.cfg.fed).params);
    }
    return s;
  }();
  return d;
}

// 4 ---------------------------------------------------------------------------
Outcome entropy_descent() {
  const auto& d = default_splits();
  TtaConfig cfg;
  cfg.lr = 1e-4;
  std::size_t failures = 0;
  double worst = -1e300;
  for (std::uint64_t b = 0; b < 50; ++b) {
    const std::size_t u = b % d.splits.size();
    const Matrix& X = d.splits[u].user.X;
    std::mt19937_64 rng(b);
    std::vector<std::size_t> idx(X.rows());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(64);
    const std::vector<Matrix> one{X.select_rows(idx)};
    const double before = entropy_loss(predict(d.fed[u], d.cfg.net, one[0], NormStats::BatchStats)).value;
    const auto r = adapt(d.fed[u], d.cfg.net, one, cfg);
    const double after = entropy_loss(predict(r.params, d.cfg.net, one[0], NormStats::BatchStats)).value;
    worst = std::max(worst, after - before);
    if (after > before + 1e-8) ++failures;
  }
  return {failures == 0, "50 batches, " + std::to_string(failures) + " increases, max change " + fmt("%.3e", worst)};
}

// 5 ---------------------------------------------------------------------------
Outcome metric_oracles() {
  std::size_t cases = 0, mismatches = 0;
  double worst_auc = 0.0;
  for (std::size_t n = 2; n <= 12; ++n) {
    for (const auto& scores : ft::fixed_score_grids(n)) {
      for (unsigned bits = 1; bits + 1 < (1u << n); ++bits) {
        ScoredSet s{scores, {}};
        for (std::size_t i = 0; i < n; ++i) s.labels.push_back((bits >> i) & 1u);
        ++cases;
        const auto ref = ft::brute_eer(s);
        const auto got = eer(s);
        if (got.eer != ref.eer || ft::accept_set(s, got.threshold) != ft::accept_set(s, ref.threshold)) ++mismatches;
        for (double t : ft::grid_thresholds()) {
          const auto c = ft::brute_counts(s, t);
          const auto h = hter(s, t);
          if (h.far != c.far() || h.frr != c.frr() || h.hter != 0.5 * (c.far() + c.frr())) ++mismatches;
        }
        const auto roc = roc_curve(s), roc_ref = ft::brute_roc(s);
        bool same = roc.size() == roc_ref.size();
        for (std::size_t i = 0; same && i < roc.size(); ++i)
          same = roc[i].far == roc_ref[i].far && roc[i].tpr == roc_ref[i].tpr && roc[i].threshold == roc_ref[i].threshold;
        if (!same) ++mismatches;
        const double pairwise = ft::brute_auc(s);
        worst_auc = std::max({worst_auc, std::abs(pairwise - trapezoid_area(roc)), std::abs(pairwise - auc(s))});
      }
    }
  }
  const double hand = auc({{0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}});
  return {mismatches == 0 && worst_auc <= 1e-12 && std::abs(hand - 0.75) <= 1e-12,
          std::to_string(cases) + " labelings, " + std::to_string(mismatches) + " mismatches, max AUC gap " +
              fmt("%.1e", worst_auc) + ", hand case AUC " + fmt("%.4f", hand)};
}

// 6 ---------------------------------------------------------------------------
bool same_metrics(const MetricsReport& a, const MetricsReport& b) {
  if (a.hter != b.hter || a.eer != b.eer || a.auc != b.auc || a.threshold != b.threshold) return false;
  if (a.roc.size() != b.roc.size()) return false;
  for (std::size_t i = 0; i < a.roc.size(); ++i)
    if (a.roc[i].far != b.roc[i].far || a.roc[i].tpr != b.roc[i].tpr) return false;
  return true;
}

Outcome degenerate_equivalences() {
  const ExperimentConfig cfg;
  const auto domains = make_benchmark(cfg.domains, cfg.data_seed);
  const std::vector<DomainDataset> one{domains[1]};
  const bool k1 = run_federated_training(cfg.net, one, cfg.fed).params ==
                  train_centralized(cfg.net, domains[1].train(), cfg.fed);

  const auto local = data_center_update(0, init_network(cfg.net, cfg.fed.seed), domains[2], cfg.fed);
  const bool identical = aggregate(std::vector<Parameters>(4, local.params)) == local.params;

  const auto two = leave_one_out_split({domains[0], domains[3]}, 0);
  const bool fused = same_metrics(run_baseline(Baseline::Fused, two, cfg)[0].metrics,
                                  run_baseline(Baseline::Single, two, cfg)[0].metrics);

  auto off = cfg;
  off.tta.steps_per_batch = 0;
  const auto& split = default_splits().splits[2];
  const bool tta_off = same_metrics(run_baseline(Baseline::FedTta, split, off)[0].metrics,
                                    run_baseline(Baseline::Fed, split, off)[0].metrics);
  auto yes = [](bool b) { return b ? "equal" : "DIFFER"; };
  return {k1 && identical && fused && tta_off, std::string("K=1 fed vs centralized ") + yes(k1) +
                                                   ", identical clients " + yes(identical) + ", Fused(K=1) vs Single " +
                                                   yes(fused) + ", FedTta(off) vs Fed " + yes(tta_off)};
}

// 7 ---------------------------------------------------------------------------
Outcome default_ladder() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto rep = run_experiment(ExperimentConfig{}, false);
  const double t = seconds_since(t0);
  if (rep.failed) return {false, "experiment reported failed rows"};
  const auto& A = rep.averages;
  const auto s = A.at(Baseline::Single), f = A.at(Baseline::Fused), fe = A.at(Baseline::Fed), tt = A.at(Baseline::FedTta);
  const bool auc_order = s.auc < f.auc && f.auc <= fe.auc && fe.auc < tt.auc && tt.auc - s.auc >= 0.05;
  const bool hter_order = s.hter > f.hter && f.hter >= fe.hter && fe.hter > tt.hter;
  std::ostringstream os;
  os.precision(4);
  os << std::fixed << "AUC single " << s.auc << " fused " << f.auc << " fed " << fe.auc << " fedtta " << tt.auc
     << " (all " << A.at(Baseline::All).auc << "); HTER " << s.hter << " " << f.hter << " " << fe.hter << " " << tt.hter
     << "; " << std::setprecision(1) << t << " s";
  return {auc_order && hter_order && t < 300.0, os.str()};
}

// 8 ---------------------------------------------------------------------------
Outcome center_count_trend() {
  ExperimentConfig cfg;
  cfg.benchmark = "sweep";
  cfg.domains = center_sweep_benchmark();
  const auto pts = center_sweep(cfg);
  std::ostringstream os;
  os.precision(4);
  os << std::fixed << "user " << pts.front().row.user << ", FedTta AUC";
  for (const auto& p : pts) os << " " << p.centers << "c=" << p.row.metrics.auc;
  const double gain = pts.back().row.metrics.auc - pts.front().row.metrics.auc;
  os << ", gain " << gain;
  return {pts.size() == 3 && pts.back().centers == 4 && gain >= 0.02, os.str()};
}

// 9 ---------------------------------------------------------------------------
Outcome attack_type_generalization() {
  ExperimentConfig cfg;
  cfg.benchmark = "attack_type";
  cfg.domains = attack_type_benchmark();
  const auto domains = make_benchmark(cfg.domains, cfg.data_seed);
  const auto split = leave_one_out_split(domains, 2);
  SplitModels shared;
  const double fused = run_baseline(Baseline::Fused, split, cfg, &shared)[0].metrics.auc;
  const double fedtta = run_baseline(Baseline::FedTta, split, cfg, &shared)[0].metrics.auc;
  const double fed = run_baseline(Baseline::Fed, split, cfg, &shared)[0].metrics.auc;
  return {fedtta - fused >= 0.02, "user '" + split.user.id + "' from print-only and replay-only centers: Fused AUC " +
                                      fmt("%.4f", fused) + ", Fed " + fmt("%.4f", fed) + ", FedTta " +
                                      fmt("%.4f", fedtta) + ", margin " + fmt("%.4f", fedtta - fused)};
}

// 10 --------------------------------------------------------------------------
std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Outcome bench_determinism() {
  const auto a = work_dir / "bench_a", b = work_dir / "bench_b";
  fs::remove_all(a);
  fs::remove_all(b);
  std::string how;
  if (!cli_path.empty()) {
    for (const auto& dir : {a, b}) {
      const std::string cmd = "\"" + cli_path + "\" bench --output-dir \"" + dir.string() + "\" > /dev/null";
      if (std::system(cmd.c_str()) != 0) return {false, "bench command failed: " + cmd};
    }
    how = "fedtta bench";
  } else {
    ExperimentConfig cfg;
    cfg.output_dir = a.string();
    run_experiment(cfg);
    cfg.output_dir = b.string();
    run_experiment(cfg);
    how = "run_experiment";
  }
  std::size_t files = 0, diffs = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++files;
    const auto other = b / e.path().filename();
    if (!fs::exists(other) || slurp(e.path()) != slurp(other)) ++diffs;
  }
  std::size_t files_b = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(b)) ++files_b;
  const bool has_report = fs::exists(a / "report.txt");
  return {files > 1 && files == files_b && diffs == 0 && has_report,
          how + " twice: " + std::to_string(files) + " files, " + std::to_string(diffs) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 1; i + 1 < argc; i += 2) {
    if (std::strcmp(argv[i], "--cli") == 0) cli_path = argv[i + 1];
    else if (std::strcmp(argv[i], "--work") == 0) work_dir = argv[i + 1];
  }
  fs::create_directories(work_dir);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient oracle", gradient_oracle},
      {"aggregation exactness", aggregation_exactness},
      {"freeze contract", freeze_contract},
      {"single-step entropy descent", entropy_descent},
      {"metric oracles", metric_oracles},
      {"degenerate-protocol equivalences", degenerate_equivalences},
      {"default benchmark ladder", default_ladder},
      {"more data centers help", center_count_trend},
      {"attack-type generalization", attack_type_generalization},
      {"bench determinism", bench_determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << (i + 1) << ". " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
