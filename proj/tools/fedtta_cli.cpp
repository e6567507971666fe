// fedtta command line: gen, train, adapt, eval, bench.
//
// Settings resolve in order: built-in defaults, then --config (key=value
// lines), then explicit flags.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fedtta/fedtta.hpp"

namespace fs = std::filesystem;
using namespace fedtta;

namespace {

struct CommonFlags {
  std::string config_path;
  std::string output_dir;
  std::uint64_t seed = 0, data_seed = 0;
  std::size_t rounds = 0, local_epochs = 0, batch_size = 0, tta_steps = 0;
  double lr_fed = 0.0, lr_tta = 0.0;
  std::string benchmark, tta_mode;

  std::vector<std::pair<std::string, CLI::Option*>> set;
};

void add_common(CLI::App& app, CommonFlags& f) {
  app.add_option("--config", f.config_path, "key=value settings file")->check(CLI::ExistingFile);
  f.set = {
      {"output_dir", app.add_option("-o,--output-dir", f.output_dir, "Output directory (default: out)")},
      {"seed", app.add_option("--seed", f.seed, "Training seed (default: 1)")},
      {"data_seed", app.add_option("--data-seed", f.data_seed, "Benchmark generation seed (default: 1)")},
      {"rounds", app.add_option("--rounds", f.rounds, "Communication rounds (default: 30)")},
      {"local_epochs", app.add_option("--local-epochs", f.local_epochs, "Local epochs per round (default: 3)")},
      {"batch_size", app.add_option("--batch-size", f.batch_size, "Training batch size (default: 64)")},
      {"lr_fed", app.add_option("--lr-fed", f.lr_fed, "Local Adam learning rate (default: 1e-2)")},
      {"lr_tta", app.add_option("--lr-tta", f.lr_tta, "Adaptation learning rate (default: 5e-3)")},
      {"tta_steps", app.add_option("--tta-steps", f.tta_steps, "Adaptation steps per batch, 0 disables (default: 1)")},
      {"tta_mode", app.add_option("--tta-mode", f.tta_mode, "online or episodic (default: online)")},
      {"benchmark", app.add_option("--benchmark", f.benchmark, "default, sweep or attack_type")},
  };
}

ExperimentConfig resolve(const CommonFlags& f) {
  ExperimentConfig cfg;
  if (!f.config_path.empty()) {
    std::ifstream is(f.config_path);
    parse_config(cfg, is);
  }
  for (const auto& [key, opt] : f.set) {
    if (opt->count() == 0) continue;
    apply_setting(cfg, key, opt->as<std::string>());
  }
  return cfg;
}

fs::path out_dir(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  return cfg.output_dir;
}

std::vector<DomainDataset> load_or_generate(const std::string& data_path, const ExperimentConfig& cfg) {
  if (!data_path.empty()) return load_dataset_csv(data_path);
  return make_benchmark(cfg.domains, cfg.data_seed);
}

std::size_t index_of(const std::vector<DomainDataset>& ds, const std::string& id) {
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds[i].id == id) return i;
  throw std::invalid_argument("no domain named '" + id + "' in the dataset");
}

void write_scores(const fs::path& path, const ScoredSet& s) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "score,label\n";
  for (std::size_t i = 0; i < s.size(); ++i) os << format_double(s.scores[i]) << ',' << s.labels[i] << '\n';
}

ScoredSet read_scores(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::string line;
  std::getline(is, line);
  if (line != "score,label") throw std::runtime_error(path + ": expected header 'score,label'");
  ScoredSet s;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error(path + ": malformed line '" + line + "'");
    s.scores.push_back(std::stod(line.substr(0, comma)));
    s.labels.push_back(std::stoi(line.substr(comma + 1)));
  }
  return s;
}

// Pooled center dev scores under `score`.
ScoredSet dev_scores(const std::vector<DomainDataset>& centers,
                     const std::function<std::vector<double>(const Matrix&)>& score) {
  return detail::pooled_dev_scores(centers, score);
}

int cmd_gen(const ExperimentConfig& cfg) {
  const auto dir = out_dir(cfg);
  const auto domains = make_benchmark(cfg.domains, cfg.data_seed);
  save_dataset_csv((dir / "datasets.csv").string(), domains);
  std::cout << "wrote " << domains.size() << " domains to " << (dir / "datasets.csv").string() << '\n';
  return 0;
}

int cmd_train(const ExperimentConfig& cfg, const std::string& data_path, const std::string& user) {
  const auto dir = out_dir(cfg);
  auto domains = load_or_generate(data_path, cfg);
  std::vector<DomainDataset> centers = domains;
  std::optional<LeaveOneOut> split;
  if (!user.empty()) {
    split = leave_one_out_split(domains, index_of(domains, user));
    centers = split->centers;
  }
  const auto res = run_federated_training(cfg.net, centers, cfg.fed);
  save_parameters((dir / "model.bin").string(), res.params);
  {
    std::ofstream os(dir / "round_history.csv");
    write_round_history(os, res.history);
  }
  if (split) {
    auto score = [&](const Matrix& X) { return predict(res.params, cfg.net, X, NormStats::RunningStats); };
    write_scores(dir / "scores_dev.csv", dev_scores(split->centers, score));
    write_scores(dir / "scores_user.csv", score_against(split->user.labels, score(split->user.X)));
  }
  std::cout << "trained on " << centers.size() << " centers for " << res.history.rounds.size()
            << " rounds; checksum " << hex64(parameters_checksum(res.params)) << '\n';
  return 0;
}

int cmd_adapt(const ExperimentConfig& cfg, const std::string& model_path, const std::string& data_path,
              const std::string& user) {
  const auto dir = out_dir(cfg);
  const Parameters W = load_parameters(model_path);
  const auto domains = load_or_generate(data_path, cfg);
  const auto split = leave_one_out_split(domains, index_of(domains, user));
  const NetworkSpec& net = W.spec;
  const auto stream = make_stream(split.user.X, cfg.tta.batch_size);
  const auto res = adapt(W, net, stream, cfg.tta);
  save_parameters((dir / "adapted.bin").string(), res.params);
  {
    std::ofstream os(dir / "adaptation_trace.csv");
    write_adaptation_trace(os, res.trace);
  }
  const NormStats stats = cfg.tta.steps_per_batch == 0 ? NormStats::RunningStats : NormStats::BatchStats;
  auto score = [&](const Matrix& X) { return predict(res.params, net, X, stats); };
  write_scores(dir / "scores_dev.csv", dev_scores(split.centers, score));
  write_scores(dir / "scores_user.csv", score_against(split.user.labels, score(split.user.X)));
  std::cout << "adapted on " << stream.size() << " batches (" << res.trace.steps.size() << " steps)\n";
  return 0;
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& scores_path, const std::string& dev_path,
             std::optional<double> threshold) {
  const auto dir = out_dir(cfg);
  const auto test = read_scores(scores_path);
  double tau = 0.0;
  if (threshold) tau = *threshold;
  else if (!dev_path.empty()) tau = select_threshold(read_scores(dev_path));
  else throw std::invalid_argument("eval needs --dev-scores or --threshold");
  const auto r = evaluate(test, tau);
  {
    std::ofstream os(dir / "eval_report.txt");
    write_report_lines(os, r);
  }
  {
    std::ofstream os(dir / "roc.csv");
    write_roc_csv(os, r.roc);
  }
  write_report_lines(std::cout, r);
  return 0;
}

int cmd_bench(const ExperimentConfig& cfg) {
  const auto rep = run_experiment(cfg, true);
  std::cout << "config_hash=" << hex64(rep.config_hash) << '\n';
  for (auto b : cfg.baselines) {
    const auto it = rep.averages.find(b);
    if (it == rep.averages.end()) {
      std::cout << to_string(b) << ": no successful rows\n";
      continue;
    }
    std::printf("%-7s avg_hter=%.4f avg_eer=%.4f avg_auc=%.4f (%zu rows)\n", to_string(b).c_str(), it->second.hter,
                it->second.eer, it->second.auc, it->second.rows);
  }
  std::printf("wall %.2f s, report in %s\n", rep.wall_seconds, cfg.output_dir.c_str());
  return rep.failed ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated training with test-time adaptation on synthetic multi-domain data"};
  app.require_subcommand(1);

  CommonFlags gen_f, train_f, adapt_f, eval_f, bench_f;
  auto* gen = app.add_subcommand("gen", "Write the benchmark datasets as CSV");
  add_common(*gen, gen_f);

  std::string train_data, train_user;
  auto* train = app.add_subcommand("train", "Federated training; writes model.bin and round_history.csv");
  add_common(*train, train_f);
  train->add_option("--data", train_data, "Dataset CSV (default: generate the benchmark)");
  train->add_option("--user", train_user, "Domain held out as the user; also writes score files");

  std::string model_path, adapt_data, adapt_user;
  auto* adapt_cmd = app.add_subcommand("adapt", "Entropy adaptation of a trained model on a user domain");
  add_common(*adapt_cmd, adapt_f);
  adapt_cmd->add_option("--model", model_path, "Parameter file from train")->required()->check(CLI::ExistingFile);
  adapt_cmd->add_option("--data", adapt_data, "Dataset CSV (default: generate the benchmark)");
  adapt_cmd->add_option("--user", adapt_user, "User domain id")->required();

  std::string scores_path, dev_path;
  std::optional<double> threshold;
  auto* eval = app.add_subcommand("eval", "HTER/EER/AUC from a score,label CSV");
  add_common(*eval, eval_f);
  eval->add_option("--scores", scores_path, "Test scores CSV")->required()->check(CLI::ExistingFile);
  eval->add_option("--dev-scores", dev_path, "Development scores used to pick the threshold")
      ->check(CLI::ExistingFile);
  eval->add_option("--threshold", threshold, "Fixed acceptance threshold");

  auto* bench = app.add_subcommand("bench", "Full baseline ladder over every user domain");
  add_common(*bench, bench_f);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen(resolve(gen_f));
    if (train->parsed()) return cmd_train(resolve(train_f), train_data, train_user);
    if (adapt_cmd->parsed()) return cmd_adapt(resolve(adapt_f), model_path, adapt_data, adapt_user);
    if (eval->parsed()) return cmd_eval(resolve(eval_f), scores_path, dev_path, threshold);
    if (bench->parsed()) return cmd_bench(resolve(bench_f));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
