#pragma once

// Leave-one-domain-out experiment runner for the baseline ladder
// single / fused / all / fed / fedtta, and its report files.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedtta/datagen.hpp"
#include "fedtta/federation.hpp"
#include "fedtta/metrics.hpp"
#include "fedtta/nn.hpp"
#include "fedtta/tta.hpp"

namespace fedtta {

enum class Baseline { Single, Fused, All, Fed, FedTta };

inline std::string to_string(Baseline b) {
  switch (b) {
    case Baseline::Single: return "single";
    case Baseline::Fused: return "fused";
    case Baseline::All: return "all";
    case Baseline::Fed: return "fed";
    case Baseline::FedTta: return "fedtta";
  }
  return "unknown";
}

inline Baseline parse_baseline(const std::string& s) {
  for (auto b : {Baseline::Single, Baseline::Fused, Baseline::All, Baseline::Fed, Baseline::FedTta}) {
    if (to_string(b) == s) return b;
  }
  throw std::invalid_argument("unknown baseline '" + s + "'");
}

inline std::vector<DomainSpec> benchmark_by_name(const std::string& name) {
  if (name == "default") return default_benchmark();
  if (name == "sweep") return center_sweep_benchmark();
  if (name == "attack_type") return attack_type_benchmark();
  throw std::invalid_argument("unknown benchmark '" + name + "'");
}

inline NetworkSpec default_network() { return NetworkSpec{8, {16, 16}}; }

struct ExperimentConfig {
  std::string benchmark = "default";
  std::vector<DomainSpec> domains = default_benchmark();
  std::uint64_t data_seed = 1;
  NetworkSpec net = default_network();
  FedConfig fed;
  TtaConfig tta;
  std::vector<Baseline> baselines = {Baseline::Single, Baseline::Fused, Baseline::All, Baseline::Fed,
                                     Baseline::FedTta};
  std::string output_dir = "out";
  bool parallel_users = true;

  void validate() const {
    if (baselines.empty()) throw std::invalid_argument("ExperimentConfig: no baselines requested");
    if (domains.size() < 2) throw std::invalid_argument("ExperimentConfig: need at least 2 domains");
    net.validate();
    fed.validate();
    tta.validate();
  }
};

namespace detail {

inline std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::string trim(std::string s) {
  s.erase(0, s.find_first_not_of(" \t\r"));
  const auto e = s.find_last_not_of(" \t\r");
  s.erase(e == std::string::npos ? 0 : e + 1);
  return s;
}

}  // namespace detail

// Canonical key=value text of everything that influences results. The output
// directory and scheduling flags are excluded.
inline std::string canonical_config(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "benchmark=" << c.benchmark << '\n'
     << "data_seed=" << c.data_seed << '\n'
     << "input_dim=" << c.net.input_dim << '\n'
     << "hidden=" << detail::join_sizes(c.net.hidden_dims) << '\n'
     << "seed=" << c.fed.seed << '\n'
     << "rounds=" << c.fed.rounds << '\n'
     << "local_epochs=" << c.fed.local_epochs << '\n'
     << "lr_fed=" << format_double(c.fed.lr) << '\n'
     << "batch_size=" << c.fed.batch_size << '\n'
     << "early_stop=" << (c.fed.early_stop ? 1 : 0) << '\n'
     << "lr_tta=" << format_double(c.tta.lr) << '\n'
     << "tta_steps=" << c.tta.steps_per_batch << '\n'
     << "tta_batch_size=" << c.tta.batch_size << '\n'
     << "tta_mode=" << (c.tta.mode == TtaMode::Online ? "online" : "episodic") << '\n';
  os << "baselines=";
  for (std::size_t i = 0; i < c.baselines.size(); ++i) os << (i ? "," : "") << to_string(c.baselines[i]);
  os << '\n';
  for (const auto& d : c.domains) {
    os << "domain." << d.id << "=n_real:" << d.n_real << ";n_attack:" << d.n_attack << ";dim:" << d.base_dim
       << ";rot:" << format_double(d.shift.rotation_deg) << ";t:" << detail::join_doubles(d.shift.translation)
       << ";s:" << detail::join_doubles(d.shift.scale) << ";off:" << detail::join_doubles(d.attack_offset)
       << ";noise:" << format_double(d.noise_sigma) << ";style:" << to_string(d.attack_style) << ";print_share:" << format_double(d.print_share)
       << ";mix:" << format_double(d.mixture_separation) << ";dev:" << format_double(d.dev_fraction) << '\n';
  }
  return os.str();
}

inline std::uint64_t config_hash(const ExperimentConfig& c) {
  const auto text = canonical_config(c);
  return detail::fnv1a(detail::kFnvOffset, text.data(), text.size());
}

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Applies one key=value setting. Unknown keys are an error.
inline void apply_setting(ExperimentConfig& c, const std::string& key, const std::string& value) {
  auto to_u64 = [&](const std::string& v) { return static_cast<std::uint64_t>(std::stoull(v)); };
  if (key == "benchmark") {
    c.benchmark = value;
    c.domains = benchmark_by_name(value);
  } else if (key == "data_seed") {
    c.data_seed = to_u64(value);
  } else if (key == "hidden") {
    c.net.hidden_dims.clear();
    for (const auto& s : detail::split_list(value)) c.net.hidden_dims.push_back(static_cast<std::size_t>(std::stoull(s)));
  } else if (key == "seed") {
    c.fed.seed = to_u64(value);
  } else if (key == "rounds") {
    c.fed.rounds = to_u64(value);
  } else if (key == "local_epochs") {
    c.fed.local_epochs = to_u64(value);
  } else if (key == "lr_fed") {
    c.fed.lr = std::stod(value);
  } else if (key == "batch_size") {
    c.fed.batch_size = to_u64(value);
  } else if (key == "early_stop") {
    c.fed.early_stop = value == "1" || value == "true";
  } else if (key == "lr_tta") {
    c.tta.lr = std::stod(value);
  } else if (key == "tta_steps") {
    c.tta.steps_per_batch = to_u64(value);
  } else if (key == "tta_batch_size") {
    c.tta.batch_size = to_u64(value);
  } else if (key == "tta_mode") {
    if (value == "online") c.tta.mode = TtaMode::Online;
    else if (value == "episodic") c.tta.mode = TtaMode::Episodic;
    else throw std::invalid_argument("tta_mode must be online or episodic");
  } else if (key == "baselines") {
    c.baselines.clear();
    for (const auto& s : detail::split_list(value)) c.baselines.push_back(parse_baseline(s));
  } else if (key == "output_dir") {
    c.output_dir = value;
  } else {
    throw std::invalid_argument("unknown config key '" + key + "'");
  }
}

inline void parse_config(ExperimentConfig& c, std::istream& is) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key=value");
    apply_setting(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
}

// One evaluated (baseline, user) pair; Single rows also name their center.
struct EvaluatedRow {
  Baseline baseline = Baseline::Fed;
  std::string user;
  std::string center;
  MetricsReport metrics;
  bool failed = false;
  std::string error;
};

struct BaselineAverage {
  double hter = 0.0;
  double eer = 0.0;
  double auc = 0.0;
  std::size_t rows = 0;
};

struct ExperimentReport {
  std::vector<EvaluatedRow> rows;
  std::map<Baseline, BaselineAverage> averages;
  std::uint64_t config_hash = 0;
  std::uint64_t data_seed = 0;
  std::uint64_t seed = 0;
  double wall_seconds = 0.0;
  bool failed = false;
};

// Models shared between baselines of the same split, trained on first use.
struct SplitModels {
  std::optional<std::vector<Parameters>> singles;
  std::optional<Parameters> fed;
};

namespace detail {

inline ScoredSet pooled_dev_scores(const std::vector<DomainDataset>& centers,
                                   const std::function<std::vector<double>(const Matrix&)>& score) {
  ScoredSet pooled;
  for (const auto& c : centers) {
    const auto dev = c.dev();
    const auto s = score(dev.X);
    pooled.scores.insert(pooled.scores.end(), s.begin(), s.end());
    pooled.labels.insert(pooled.labels.end(), dev.y.begin(), dev.y.end());
  }
  return pooled;
}

inline MetricsReport evaluate_scorer(const LeaveOneOut& split,
                                     const std::function<std::vector<double>(const Matrix&)>& score) {
  const double tau = select_threshold(pooled_dev_scores(split.centers, score));
  return evaluate(score_against(split.user.labels, score(split.user.X)), tau);
}

inline const std::vector<Parameters>& singles(const LeaveOneOut& split, const ExperimentConfig& cfg, SplitModels& m) {
  if (!m.singles) {
    std::vector<Parameters> models;
    for (const auto& c : split.centers) models.push_back(train_centralized(cfg.net, c.train(), cfg.fed));
    m.singles = std::move(models);
  }
  return *m.singles;
}

inline const Parameters& fed_model(const LeaveOneOut& split, const ExperimentConfig& cfg, SplitModels& m) {
  if (!m.fed) m.fed = run_federated_training(cfg.net, split.centers, cfg.fed).params;
  return *m.fed;
}

}  // namespace detail

// Runs one baseline on one leave-one-out split. Single yields one row per
// center; every other baseline yields one row.
inline std::vector<EvaluatedRow> run_baseline(Baseline name, const LeaveOneOut& split, const ExperimentConfig& cfg,
                                              SplitModels* shared = nullptr) {
  SplitModels local;
  SplitModels& models = shared ? *shared : local;
  const auto& net = cfg.net;
  std::vector<EvaluatedRow> rows;
  auto row = [&](MetricsReport m, std::string center = {}) {
    rows.push_back(EvaluatedRow{name, split.user.id, std::move(center), std::move(m), false, {}});
  };

  try {
    switch (name) {
      case Baseline::Single: {
        const auto& ms = detail::singles(split, cfg, models);
        for (std::size_t k = 0; k < ms.size(); ++k) {
          const auto& W = ms[k];
          row(detail::evaluate_scorer(split, [&](const Matrix& X) { return predict(W, net, X, NormStats::RunningStats); }),
              split.centers[k].id);
        }
        break;
      }
      case Baseline::Fused: {
        const auto& ms = detail::singles(split, cfg, models);
        row(detail::evaluate_scorer(split, [&](const Matrix& X) {
          std::vector<double> mean(X.rows(), 0.0);
          for (const auto& W : ms) {
            const auto s = predict(W, net, X, NormStats::RunningStats);
            for (std::size_t i = 0; i < s.size(); ++i) mean[i] += s[i];
          }
          for (auto& v : mean) v /= static_cast<double>(ms.size());
          return mean;
        }));
        break;
      }
      case Baseline::All: {
        LabeledData pooled{Matrix(0, net.input_dim), {}};
        for (const auto& c : split.centers) {
          auto t = c.train();
          pooled.X.append_rows(t.X);
          pooled.y.insert(pooled.y.end(), t.y.begin(), t.y.end());
        }
        const Parameters W = train_centralized(net, pooled, cfg.fed);
        row(detail::evaluate_scorer(split, [&](const Matrix& X) { return predict(W, net, X, NormStats::RunningStats); }));
        break;
      }
      case Baseline::Fed: {
        const auto& W = detail::fed_model(split, cfg, models);
        row(detail::evaluate_scorer(split, [&](const Matrix& X) { return predict(W, net, X, NormStats::RunningStats); }));
        break;
      }
      case Baseline::FedTta: {
        const auto& W = detail::fed_model(split, cfg, models);
        if (cfg.tta.steps_per_batch == 0) {
          row(detail::evaluate_scorer(split, [&](const Matrix& X) { return predict(W, net, X, NormStats::RunningStats); }));
          break;
        }
        const auto stream = make_stream(split.user.X, cfg.tta.batch_size);
        const Parameters adapted = adapt(W, net, stream, cfg.tta).params;
        row(detail::evaluate_scorer(split, [&](const Matrix& X) { return predict(adapted, net, X, NormStats::BatchStats); }));
        break;
      }
    }
  } catch (const std::exception& e) {
    throw std::runtime_error(to_string(name) + " baseline, user " + split.user.id + ": " + e.what());
  }
  return rows;
}

inline std::string roc_file_name(const EvaluatedRow& r) {
  std::string name = "roc_" + to_string(r.baseline) + "_";
  if (!r.center.empty()) name += r.center + "_to_";
  return name + r.user + ".csv";
}

inline void write_report(std::ostream& os, const ExperimentReport& rep, const ExperimentConfig& cfg) {
  os << "# fedtta experiment report\n"
     << "config_hash=" << hex64(rep.config_hash) << '\n'
     << "data_seed=" << rep.data_seed << '\n'
     << "seed=" << rep.seed << '\n'
     << "status=" << (rep.failed ? "failed" : "ok") << '\n';
  for (auto b : cfg.baselines) {
    for (const auto& r : rep.rows) {
      if (r.baseline != b) continue;
      os << "\n[" << to_string(b) << " user=" << r.user;
      if (!r.center.empty()) os << " center=" << r.center;
      os << "]\n";
      if (r.failed) {
        os << "status=failed\nerror=" << r.error << '\n';
      } else {
        write_report_lines(os, r.metrics);
      }
    }
    if (auto it = rep.averages.find(b); it != rep.averages.end()) {
      os << "\n[" << to_string(b) << " average]\n"
         << "rows=" << it->second.rows << '\n'
         << "avg_hter=" << format_double(it->second.hter) << '\n'
         << "avg_eer=" << format_double(it->second.eer) << '\n'
         << "avg_auc=" << format_double(it->second.auc) << '\n';
    }
  }
}

inline void compute_averages(ExperimentReport& rep) {
  rep.averages.clear();
  for (const auto& r : rep.rows) {
    if (r.failed) continue;
    auto& a = rep.averages[r.baseline];
    a.hter += r.metrics.hter;
    a.eer += r.metrics.eer;
    a.auc += r.metrics.auc;
    a.rows += 1;
  }
  for (auto& [b, a] : rep.averages) {
    a.hter /= static_cast<double>(a.rows);
    a.eer /= static_cast<double>(a.rows);
    a.auc /= static_cast<double>(a.rows);
  }
}

// Writes report.txt and one ROC CSV per evaluated row into `dir`.
inline void write_outputs(const std::string& dir, const ExperimentReport& rep, const ExperimentConfig& cfg) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(std::filesystem::path(dir) / "report.txt");
    if (!os) throw std::runtime_error("cannot write report in " + dir);
    write_report(os, rep, cfg);
  }
  for (const auto& r : rep.rows) {
    if (r.failed) continue;
    std::ofstream os(std::filesystem::path(dir) / roc_file_name(r));
    write_roc_csv(os, r.metrics.roc);
  }
}

// Every domain plays the user once; rows are ordered by (baseline, user).
inline ExperimentReport run_experiment(const ExperimentConfig& cfg, bool write_files = true) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const auto domains = make_benchmark(cfg.domains, cfg.data_seed);

  auto run_user = [&](std::size_t u) {
    const auto split = leave_one_out_split(domains, u);
    SplitModels shared;
    std::vector<EvaluatedRow> rows;
    for (auto b : cfg.baselines) {
      try {
        auto r = run_baseline(b, split, cfg, &shared);
        rows.insert(rows.end(), r.begin(), r.end());
      } catch (const std::exception& e) {
        rows.push_back(EvaluatedRow{b, split.user.id, {}, {}, true, e.what()});
      }
    }
    return rows;
  };

  std::vector<std::vector<EvaluatedRow>> per_user(domains.size());
  if (cfg.parallel_users) {
    std::vector<std::future<std::vector<EvaluatedRow>>> jobs;
    for (std::size_t u = 0; u < domains.size(); ++u) jobs.push_back(std::async(std::launch::async, run_user, u));
    for (std::size_t u = 0; u < domains.size(); ++u) per_user[u] = jobs[u].get();
  } else {
    for (std::size_t u = 0; u < domains.size(); ++u) per_user[u] = run_user(u);
  }

  ExperimentReport rep;
  rep.config_hash = config_hash(cfg);
  rep.data_seed = cfg.data_seed;
  rep.seed = cfg.fed.seed;
  for (auto b : cfg.baselines) {
    for (const auto& rows : per_user)
      for (const auto& r : rows)
        if (r.baseline == b) rep.rows.push_back(r);
  }
  rep.failed = std::any_of(rep.rows.begin(), rep.rows.end(), [](const auto& r) { return r.failed; });
  compute_averages(rep);
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (write_files) write_outputs(cfg.output_dir, rep, cfg);
  return rep;
}

struct SweepPoint {
  std::size_t centers = 0;
  EvaluatedRow row;
};

// Fixes the last configured domain as the user and trains on the first k
// domains for k = 2 .. N-1, running one baseline per center count.
inline std::vector<SweepPoint> center_sweep(const ExperimentConfig& cfg, Baseline baseline = Baseline::FedTta) {
  cfg.validate();
  if (cfg.domains.size() < 3) throw std::invalid_argument("center_sweep: need at least 3 domains");
  const auto domains = make_benchmark(cfg.domains, cfg.data_seed);
  std::vector<SweepPoint> out;
  for (std::size_t k = 2; k < domains.size(); ++k) {
    std::vector<DomainDataset> subset(domains.begin(), domains.begin() + static_cast<std::ptrdiff_t>(k));
    subset.push_back(domains.back());
    const auto rows = run_baseline(baseline, leave_one_out_split(subset, k), cfg);
    out.push_back({k, rows.front()});
  }
  return out;
}

}  // namespace fedtta
