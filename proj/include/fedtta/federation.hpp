#pragma once

// Training phase: local mini-batch Adam at each data center, equal-weight
// parameter averaging at the server, and the round loop that redistributes
// the averaged parameters.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <future>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedtta/datagen.hpp"
#include "fedtta/nn.hpp"

namespace fedtta {

struct FedConfig {
  std::size_t rounds = 30;
  std::size_t local_epochs = 3;
  double lr = 1e-2;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;
  // Stop once the mean client loss changes by less than plateau_tol
  // (relative) over plateau_window rounds.
  bool early_stop = false;
  double plateau_tol = 1e-4;
  std::size_t plateau_window = 5;
  bool parallel_clients = true;

  void validate() const {
    if (rounds == 0) throw std::invalid_argument("FedConfig: rounds must be positive");
    if (batch_size < 2) throw std::invalid_argument("FedConfig: batch_size must be at least 2");
    if (!(lr > 0.0)) throw std::invalid_argument("FedConfig: lr must be positive");
  }
};

struct LocalUpdate {
  Parameters params;
  std::vector<double> epoch_losses;  // mean batch loss per local epoch

  double final_loss() const { return epoch_losses.empty() ? 0.0 : epoch_losses.back(); }
};

struct RoundRecord {
  std::size_t round = 0;
  std::vector<double> client_losses;
  std::uint64_t checksum = 0;
  double wall_seconds = 0.0;
};

struct RoundHistory {
  std::vector<RoundRecord> rounds;
};

// Shuffling randomness for client k in a given round; independent of the
// order in which clients are scheduled.
inline std::mt19937_64 client_rng(std::uint64_t seed, std::size_t client, std::size_t round) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(client), static_cast<std::uint32_t>(round)};
  return std::mt19937_64(seq);
}

// Batch boundaries over n rows. A trailing single row is folded into the
// previous batch so every batch can be normalized by its own statistics.
inline std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t batch_size) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t b = 0; b < n; b += batch_size) out.emplace_back(b, std::min(n, b + batch_size));
  if (out.size() > 1 && out.back().second - out.back().first < 2) {
    out[out.size() - 2].second = out.back().second;
    out.pop_back();
  }
  return out;
}

namespace detail {

inline void check_trainable_data(const LabeledData& data, const std::string& who) {
  if (data.y.empty()) throw std::invalid_argument(who + ": empty training set");
  if (data.y.size() < 2) throw std::invalid_argument(who + ": training set needs at least 2 rows");
  const bool has_real = std::find(data.y.begin(), data.y.end(), 1) != data.y.end();
  const bool has_attack = std::find(data.y.begin(), data.y.end(), 0) != data.y.end();
  if (!has_real || !has_attack) throw std::invalid_argument(who + ": training set holds a single class");
}

// One epoch of mini-batch Adam over a shuffled order; returns the mean loss.
inline double run_epoch(Parameters& params, AdamState& adam, const LabeledData& data, std::mt19937_64& rng,
                        const FedConfig& cfg) {
  const std::size_t n = data.y.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto ranges = batch_ranges(n, cfg.batch_size);
  double loss_sum = 0.0;
  std::vector<int> yb;
  for (auto [b, e] : ranges) {
    const std::span<const std::size_t> idx(order.data() + b, e - b);
    const Matrix xb = data.X.select_rows(idx);
    yb.clear();
    for (auto i : idx) yb.push_back(data.y[i]);
    auto fr = forward(params, params.spec, xb, ForwardMode::Train);
    const auto loss = bce_loss(fr.p, yb);
    auto grads = backward(params, params.spec, fr.cache, loss.grad);
    commit_running_stats(params, fr);
    adam_step(params, grads, adam, cfg.lr);
    loss_sum += loss.value;
  }
  return loss_sum / static_cast<double>(ranges.size());
}

}  // namespace detail

// Local training at data center `client` during `round`: local_epochs passes
// of mini-batch Adam on the center's training split, from W, with a fresh
// optimizer state.
inline LocalUpdate data_center_update(std::size_t client, const Parameters& W, const DomainDataset& dataset,
                                      const FedConfig& cfg, std::size_t round = 0) {
  const std::string who = "data center " + std::to_string(client) + " (" + dataset.id + ")";
  const LabeledData data = dataset.train();
  detail::check_trainable_data(data, who);
  if (data.X.cols() != W.spec.input_dim) throw std::invalid_argument(who + ": feature dimension mismatch");

  LocalUpdate out{W, {}};
  if (cfg.local_epochs == 0) return out;
  auto rng = client_rng(cfg.seed, client, round);
  AdamState adam = AdamState::for_params(W);
  for (std::size_t e = 0; e < cfg.local_epochs; ++e) {
    out.epoch_losses.push_back(detail::run_epoch(out.params, adam, data, rng, cfg));
  }
  return out;
}

// Equal-weight element-wise mean of every stored array, running statistics
// included. Each entry is summed in sorted order, so the result does not
// depend on the order of `updates`.
inline Parameters aggregate(std::span<const Parameters> updates) {
  if (updates.empty()) throw std::invalid_argument("aggregate: no updates");
  const Parameters& first = updates.front();
  for (const auto& u : updates) {
    if (!(u.spec == first.spec) || u.arrays.size() != first.arrays.size()) {
      throw std::invalid_argument("aggregate: updates have different network shapes");
    }
    for (std::size_t a = 0; a < u.arrays.size(); ++a) {
      if (u.arrays[a].values.size() != first.arrays[a].values.size() || u.arrays[a].kind != first.arrays[a].kind) {
        throw std::invalid_argument("aggregate: shape mismatch in " + first.arrays[a].name);
      }
    }
  }
  Parameters out = first;
  const double k = static_cast<double>(updates.size());
  std::vector<double> column(updates.size());
  for (std::size_t a = 0; a < out.arrays.size(); ++a) {
    auto& dst = out.arrays[a].values;
    for (std::size_t i = 0; i < dst.size(); ++i) {
      for (std::size_t c = 0; c < updates.size(); ++c) column[c] = updates[c].arrays[a].values[i];
      std::sort(column.begin(), column.end());
      if (column.front() == column.back()) {
        dst[i] = column.front();
        continue;
      }
      double sum = 0.0;
      for (double v : column) sum += v;
      dst[i] = sum / k;
    }
  }
  return out;
}

struct FederatedResult {
  Parameters params;
  RoundHistory history;
};

inline FederatedResult run_federated_training(const NetworkSpec& spec, const std::vector<DomainDataset>& datasets,
                                              const FedConfig& cfg) {
  cfg.validate();
  if (datasets.empty()) throw std::invalid_argument("run_federated_training: no data centers");
  FederatedResult res{init_network(spec, cfg.seed), {}};
  const std::size_t K = datasets.size();

  for (std::size_t round = 0; round < cfg.rounds; ++round) {
    const auto t0 = std::chrono::steady_clock::now();
    const Parameters& global = res.params;
    std::vector<LocalUpdate> updates(K);
    std::vector<std::exception_ptr> errors(K);
    auto run_client = [&](std::size_t k) {
      try {
        updates[k] = data_center_update(k, global, datasets[k], cfg, round);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    };
    if (cfg.parallel_clients && K > 1) {
      std::vector<std::future<void>> jobs;
      for (std::size_t k = 0; k < K; ++k) jobs.push_back(std::async(std::launch::async, run_client, k));
      for (auto& j : jobs) j.get();
    } else {
      for (std::size_t k = 0; k < K; ++k) run_client(k);
    }
    for (std::size_t k = 0; k < K; ++k) {
      if (!errors[k]) continue;
      try {
        std::rethrow_exception(errors[k]);
      } catch (const std::exception& e) {
        throw std::runtime_error("round " + std::to_string(round) + ", client " + std::to_string(k) + ": " + e.what());
      }
    }

    std::vector<Parameters> uploaded;
    uploaded.reserve(K);
    RoundRecord rec;
    rec.round = round;
    for (auto& u : updates) {
      rec.client_losses.push_back(u.final_loss());
      uploaded.push_back(std::move(u.params));
    }
    res.params = aggregate(uploaded);
    rec.checksum = parameters_checksum(res.params);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.history.rounds.push_back(std::move(rec));

    if (cfg.early_stop && res.history.rounds.size() > cfg.plateau_window) {
      auto mean_loss = [](const RoundRecord& r) {
        return std::accumulate(r.client_losses.begin(), r.client_losses.end(), 0.0) /
               static_cast<double>(r.client_losses.size());
      };
      const double now = mean_loss(res.history.rounds.back());
      const double before = mean_loss(res.history.rounds[res.history.rounds.size() - 1 - cfg.plateau_window]);
      if (before != 0.0 && std::abs(now - before) / std::abs(before) < cfg.plateau_tol) break;
    }
  }
  return res;
}

// Single-site training with the same schedule the protocol applies to one
// client: `rounds` blocks of `local_epochs` epochs, optimizer reset per block.
// Used by the single-center and pooled-data baselines.
inline Parameters train_centralized(const NetworkSpec& spec, const LabeledData& data, const FedConfig& cfg) {
  cfg.validate();
  detail::check_trainable_data(data, "centralized training");
  Parameters params = init_network(spec, cfg.seed);
  for (std::size_t round = 0; round < cfg.rounds; ++round) {
    auto rng = client_rng(cfg.seed, 0, round);
    AdamState adam = AdamState::for_params(params);
    for (std::size_t e = 0; e < cfg.local_epochs; ++e) detail::run_epoch(params, adam, data, rng, cfg);
  }
  return params;
}

// One line per round: round,checksum,loss_0,...,loss_{K-1}
inline void write_round_history(std::ostream& os, const RoundHistory& history) {
  os << "round,checksum";
  if (!history.rounds.empty()) {
    for (std::size_t k = 0; k < history.rounds.front().client_losses.size(); ++k) os << ",loss_" << k;
  }
  os << '\n';
  for (const auto& r : history.rounds) {
    char hex[20];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(r.checksum));
    os << r.round << ',' << hex;
    for (double l : r.client_losses) os << ',' << format_double(l);
    os << '\n';
  }
}

}  // namespace fedtta
