#pragma once

// Testing phase: unsupervised adaptation of the batch-norm scale/shift
// parameters by minimizing prediction entropy on unlabeled user batches.

#include <cmath>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "fedtta/federation.hpp"
#include "fedtta/matrix.hpp"
#include "fedtta/nn.hpp"

namespace fedtta {

enum class TtaMode {
  Online,    // parameters and optimizer state carry over between batches
  Episodic,  // every batch starts again from the downloaded parameters
};

struct TtaConfig {
  double lr = 5e-3;
  // 0 disables adaptation entirely.
  std::size_t steps_per_batch = 1;
  std::size_t batch_size = 64;
  TtaMode mode = TtaMode::Online;

  void validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("TtaConfig: lr must be positive");
    if (batch_size < 2) throw std::invalid_argument("TtaConfig: batch_size must be at least 2");
  }
};

struct AdaptationStep {
  std::size_t batch = 0;
  std::size_t step = 0;  // within the batch
  double entropy_before = 0.0;
  double entropy_after = 0.0;
  double affine_delta_norm = 0.0;  // L2 norm of the gamma/beta change
};

struct AdaptationTrace {
  std::vector<AdaptationStep> steps;
};

struct AdaptResult {
  Parameters params;
  AdaptationTrace trace;
};

enum class NormStats { RunningStats, BatchStats };

// Pure scoring pass; score is the probability of the real class.
inline std::vector<double> predict(const Parameters& W, const NetworkSpec& spec, const Matrix& X, NormStats stats) {
  return forward(W, spec, X, stats == NormStats::RunningStats ? ForwardMode::Eval : ForwardMode::AdaptBatchStats).p;
}

// Splits an unlabeled matrix into consecutive user batches.
inline std::vector<Matrix> make_stream(const Matrix& X, std::size_t batch_size) {
  std::vector<Matrix> out;
  for (auto [b, e] : batch_ranges(X.rows(), batch_size)) out.push_back(X.slice_rows(b, e));
  return out;
}

inline double batch_entropy(const Parameters& W, const NetworkSpec& spec, const Matrix& batch) {
  return entropy_loss(predict(W, spec, batch, NormStats::BatchStats)).value;
}

inline AdaptResult adapt(const Parameters& W_t, const NetworkSpec& spec, std::span<const Matrix> stream,
                         const TtaConfig& cfg) {
  cfg.validate();
  if (stream.empty()) throw std::invalid_argument("adapt: empty user stream");
  for (std::size_t b = 0; b < stream.size(); ++b) {
    if (stream[b].rows() < 2) {
      throw std::invalid_argument("adapt: batch " + std::to_string(b) + " has fewer than 2 rows");
    }
  }
  AdaptResult res{W_t, {}};
  if (cfg.steps_per_batch == 0) return res;

  const EntryMask& mask = W_t.affine_mask;
  AdamState adam = AdamState::for_params(W_t);
  for (std::size_t b = 0; b < stream.size(); ++b) {
    if (cfg.mode == TtaMode::Episodic) {
      res.params = W_t;
      adam = AdamState::for_params(W_t);
    }
    for (std::size_t s = 0; s < cfg.steps_per_batch; ++s) {
      const Parameters before = res.params;
      auto fr = forward(res.params, spec, stream[b], ForwardMode::AdaptBatchStats);
      const auto h = entropy_loss(fr.p);
      auto grads = backward(res.params, spec, fr.cache, h.grad);
      adam_step(res.params, grads, adam, cfg.lr, &mask);

      double delta_sq = 0.0;
      for (std::size_t a = 0; a < before.arrays.size(); ++a) {
        if (!is_affine(before.arrays[a].kind)) continue;
        const auto& x0 = before.arrays[a].values;
        const auto& x1 = res.params.arrays[a].values;
        for (std::size_t i = 0; i < x0.size(); ++i) delta_sq += (x1[i] - x0[i]) * (x1[i] - x0[i]);
      }
      res.trace.steps.push_back({b, s, h.value, batch_entropy(res.params, spec, stream[b]), std::sqrt(delta_sq)});
    }
  }
  return res;
}

// One line per step: batch,step,entropy_before,entropy_after,affine_delta_norm
inline void write_adaptation_trace(std::ostream& os, const AdaptationTrace& trace) {
  os << "batch,step,entropy_before,entropy_after,affine_delta_norm\n";
  for (const auto& s : trace.steps) {
    os << s.batch << ',' << s.step << ',' << format_double(s.entropy_before) << ','
       << format_double(s.entropy_after) << ',' << format_double(s.affine_delta_norm) << '\n';
  }
}

}  // namespace fedtta
