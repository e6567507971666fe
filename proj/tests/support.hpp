#pragma once

#include <random>
#include <vector>

#include "fedtta/datagen.hpp"
#include "fedtta/nn.hpp"

namespace fedtta::testing {

// Fresh layout with every stored entry drawn at random; running variances
// stay positive.
inline Parameters random_parameters(const NetworkSpec& spec, std::uint64_t seed) {
  Parameters p = init_network(spec, seed);
  std::mt19937_64 rng(seed * 31 + 7);
  std::normal_distribution<double> g(0.0, 1.0);
  for (auto& a : p.arrays)
    for (auto& v : a.values) v = a.kind == ArrayKind::BnRunningVar ? 0.1 + std::abs(g(rng)) : g(rng);
  return p;
}

inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0,
                              double shift = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(shift, scale);
  Matrix m(rows, cols);
  for (auto& v : m.data()) v = g(rng);
  return m;
}

// Small domains from the default benchmark, shrunk for quick unit tests.
inline std::vector<DomainDataset> small_domains(std::size_t count, std::size_t per_class, std::uint64_t seed) {
  auto specs = center_sweep_benchmark();
  specs.resize(count);
  for (auto& s : specs) s.n_real = s.n_attack = per_class;
  return make_benchmark(specs, seed);
}

}  // namespace fedtta::testing
