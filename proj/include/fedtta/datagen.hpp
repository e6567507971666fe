#pragma once

// Seeded synthetic multi-domain real/attack data and the leave-one-domain-out
// partition into data centers and a user.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedtta/matrix.hpp"
#include "fedtta/metrics.hpp"

namespace fedtta {

// Which coordinates an attack perturbs. Print attacks move the first half of
// the base coordinates, replay attacks the second half; Mixed draws both, with
// DomainSpec::print_share of the attacks being prints.
enum class AttackStyle : std::uint8_t { Print, Replay, Mixed };

inline std::string to_string(AttackStyle s) {
  switch (s) {
    case AttackStyle::Print: return "print";
    case AttackStyle::Replay: return "replay";
    case AttackStyle::Mixed: return "mixed";
  }
  return "unknown";
}

inline AttackStyle parse_attack_style(const std::string& s) {
  if (s == "print") return AttackStyle::Print;
  if (s == "replay") return AttackStyle::Replay;
  if (s == "mixed") return AttackStyle::Mixed;
  throw std::invalid_argument("unknown attack style '" + s + "'");
}

// x -> R(angle) * (scale .* x) + translation, R rotating each coordinate
// plane (j, j + d/2) by the same angle.
struct DomainShift {
  double rotation_deg = 0.0;
  std::vector<double> translation;
  std::vector<double> scale;
};

struct DomainSpec {
  std::string id;
  std::size_t n_real = 1000;
  std::size_t n_attack = 1000;
  std::size_t base_dim = 8;
  DomainShift shift;
  std::vector<double> attack_offset;
  double noise_sigma = 0.3;
  AttackStyle attack_style = AttackStyle::Mixed;
  double print_share = 0.5;  // Mixed only
  // Distance of the two real-class mixture components from the origin.
  double mixture_separation = 1.0;
  double dev_fraction = 0.2;

  void validate() const {
    if (id.empty()) throw std::invalid_argument("DomainSpec: empty id");
    if (base_dim < 2 || base_dim % 2 != 0) throw std::invalid_argument("DomainSpec " + id + ": base_dim must be even and >= 2");
    if (n_real < 2 || n_attack < 2) {
      throw std::invalid_argument("DomainSpec " + id + ": need at least 2 samples per class for train/dev splits");
    }
    if (!(noise_sigma > 0.0)) throw std::invalid_argument("DomainSpec " + id + ": noise_sigma must be positive");
    if (!(print_share >= 0.0 && print_share <= 1.0)) throw std::invalid_argument("DomainSpec " + id + ": print_share outside [0,1]");
    if (!(dev_fraction > 0.0 && dev_fraction < 1.0)) throw std::invalid_argument("DomainSpec " + id + ": dev_fraction outside (0,1)");
    if (shift.translation.size() != base_dim || shift.scale.size() != base_dim || attack_offset.size() != base_dim) {
      throw std::invalid_argument("DomainSpec " + id + ": shift/offset vectors must have base_dim entries");
    }
    for (double s : shift.scale) {
      if (s == 0.0 || !std::isfinite(s)) throw std::invalid_argument("DomainSpec " + id + ": degenerate scale entry");
    }
  }
};

enum class Split : std::uint8_t { Train, Dev };

struct LabeledData {
  Matrix X;
  std::vector<int> y;
};

struct DomainDataset {
  std::string id;
  Matrix X;
  std::vector<int> y;
  std::vector<Split> split;

  std::size_t size() const noexcept { return y.size(); }

  LabeledData part(Split which) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < split.size(); ++i)
      if (split[i] == which) idx.push_back(i);
    LabeledData out{X.select_rows(idx), {}};
    out.y.reserve(idx.size());
    for (auto i : idx) out.y.push_back(y[i]);
    return out;
  }
  LabeledData train() const { return part(Split::Train); }
  LabeledData dev() const { return part(Split::Dev); }

  friend bool operator==(const DomainDataset&, const DomainDataset&) = default;
};

namespace detail {

inline std::vector<double> style_offset(const std::vector<double>& offset, AttackStyle s) {
  std::vector<double> o(offset.size(), 0.0);
  const std::size_t half = offset.size() / 2;
  for (std::size_t j = 0; j < offset.size(); ++j) {
    const bool first = j < half;
    if ((s == AttackStyle::Print && first) || (s == AttackStyle::Replay && !first)) o[j] = offset[j];
  }
  return o;
}

inline std::vector<double> mixture_axis(std::size_t d) {
  std::vector<double> u(d);
  const double norm = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t j = 0; j < d; ++j) u[j] = (j % 2 == 0 ? 1.0 : -1.0) * norm;
  return u;
}

}  // namespace detail

// Attack offset actually applied to the i-th attack sample.
inline std::vector<double> attack_offset_for(const DomainSpec& spec, std::size_t attack_index) {
  AttackStyle s = spec.attack_style;
  if (s == AttackStyle::Mixed) {
    // Evenly interleaved allocation: exactly round-down(share * n) prints in any prefix of n.
    const auto before = static_cast<std::size_t>(std::floor(spec.print_share * static_cast<double>(attack_index)));
    const auto after = static_cast<std::size_t>(std::floor(spec.print_share * static_cast<double>(attack_index + 1)));
    s = after > before ? AttackStyle::Print : AttackStyle::Replay;
  }
  return detail::style_offset(spec.attack_offset, s);
}

// Draws the unshifted base samples (before the domain transform and noise).
// Rows are reals first, then attacks.
inline LabeledData sample_base(const DomainSpec& spec, std::mt19937_64& rng) {
  const std::size_t d = spec.base_dim;
  const std::size_t n = spec.n_real + spec.n_attack;
  const auto axis = detail::mixture_axis(d);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  LabeledData out{Matrix(n, d), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const bool real = i < spec.n_real;
    const double side = coin(rng) ? 1.0 : -1.0;
    auto row = out.X.row(i);
    for (std::size_t j = 0; j < d; ++j) row[j] = side * spec.mixture_separation * axis[j] + gauss(rng);
    if (!real) {
      const auto off = attack_offset_for(spec, i - spec.n_real);
      for (std::size_t j = 0; j < d; ++j) row[j] += off[j];
    }
    out.y[i] = real ? 1 : 0;
  }
  return out;
}

inline void apply_shift(const DomainShift& shift, std::span<double> x) {
  const std::size_t d = x.size();
  const std::size_t half = d / 2;
  for (std::size_t j = 0; j < d; ++j) x[j] *= shift.scale[j];
  const double a = shift.rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(a), s = std::sin(a);
  for (std::size_t j = 0; j < half; ++j) {
    const double u = x[j], v = x[j + half];
    x[j] = c * u - s * v;
    x[j + half] = s * u + c * v;
  }
  for (std::size_t j = 0; j < d; ++j) x[j] += shift.translation[j];
}

inline DomainDataset make_domain(const DomainSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  LabeledData base = sample_base(spec, rng);
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);
  const std::size_t n = base.y.size();
  for (std::size_t i = 0; i < n; ++i) {
    auto row = base.X.row(i);
    apply_shift(spec.shift, row);
    for (auto& v : row) v += noise(rng);
  }

  // Stratified dev split: the last dev_fraction of each class.
  std::vector<Split> split(n, Split::Train);
  auto mark_dev = [&](std::size_t begin, std::size_t count) {
    std::size_t n_dev = static_cast<std::size_t>(std::llround(spec.dev_fraction * static_cast<double>(count)));
    n_dev = std::clamp<std::size_t>(n_dev, 1, count - 1);
    for (std::size_t i = begin + count - n_dev; i < begin + count; ++i) split[i] = Split::Dev;
  };
  mark_dev(0, spec.n_real);
  mark_dev(spec.n_real, spec.n_attack);

  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);

  DomainDataset ds;
  ds.id = spec.id;
  ds.X = base.X.select_rows(perm);
  ds.y.resize(n);
  ds.split.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.y[i] = base.y[perm[i]];
    ds.split[i] = split[perm[i]];
  }
  return ds;
}

// Labels of the user domain. Only metric computation can read them, through
// score_against(); adaptation code receives the feature matrix alone.
class SealedLabels {
 public:
  SealedLabels() = default;
  explicit SealedLabels(std::vector<int> labels) : labels_(std::move(labels)) {}
  std::size_t size() const noexcept { return labels_.size(); }

  friend ScoredSet score_against(const SealedLabels& sealed, std::vector<double> scores);

 private:
  std::vector<int> labels_;
};

inline ScoredSet score_against(const SealedLabels& sealed, std::vector<double> scores) {
  if (scores.size() != sealed.labels_.size()) {
    throw std::invalid_argument("score_against: score count does not match the user domain");
  }
  return ScoredSet{std::move(scores), sealed.labels_};
}

struct UserDomain {
  std::string id;
  Matrix X;  // unlabeled stream, in stored row order
  SealedLabels labels;
};

struct LeaveOneOut {
  std::vector<DomainDataset> centers;
  UserDomain user;
};

inline LeaveOneOut leave_one_out_split(const std::vector<DomainDataset>& domains, std::size_t user_index) {
  if (domains.size() < 2) throw std::invalid_argument("leave_one_out_split: need at least 2 domains");
  if (user_index >= domains.size()) {
    throw std::out_of_range("leave_one_out_split: user index " + std::to_string(user_index) + " out of range");
  }
  LeaveOneOut out;
  for (std::size_t i = 0; i < domains.size(); ++i) {
    if (i == user_index) {
      out.user = UserDomain{domains[i].id, domains[i].X, SealedLabels(domains[i].y)};
    } else {
      out.centers.push_back(domains[i]);
    }
  }
  return out;
}

// Benchmark definitions ------------------------------------------------------

namespace detail {
inline DomainSpec benchmark_domain(std::string id, AttackStyle style, double print_share, double rot,
                                   std::vector<double> translation, std::vector<double> scale) {
  DomainSpec s;
  s.id = std::move(id);
  s.attack_style = style;
  s.print_share = print_share;
  s.shift = DomainShift{rot, std::move(translation), std::move(scale)};
  s.attack_offset = std::vector<double>(8, 1.7);
  s.noise_sigma = 0.45;
  return s;
}
}  // namespace detail

// Four domains with distinct acquisition shifts. Attack styles are spread
// unevenly: two balanced domains, one print-heavy, one replay-heavy.
inline std::vector<DomainSpec> default_benchmark() {
  using detail::benchmark_domain;
  return {
      benchmark_domain("dA", AttackStyle::Mixed, 0.5, 0.0, {0, 0, 0, 0, 0, 0, 0, 0}, {1, 1, 1, 1, 1, 1, 1, 1}),
      benchmark_domain("dB", AttackStyle::Mixed, 0.75, 25.0, {2.25, -1.5, 0.75, 3.0, -2.25, 1.5, 0.0, -0.75},
                       {1.4, 0.8, 1.2, 0.7, 1.3, 0.9, 1.1, 0.6}),
      benchmark_domain("dC", AttackStyle::Mixed, 0.25, -20.0, {-3.0, 1.5, -1.5, 0.75, 1.5, -3.0, 2.25, 0.0},
                       {0.7, 1.3, 0.8, 1.4, 0.6, 1.2, 0.9, 1.5}),
      benchmark_domain("dD", AttackStyle::Mixed, 0.5, 30.0, {0.75, 3.0, -2.25, -1.5, 3.0, 0.75, -1.5, 2.25},
                       {1.2, 1.1, 0.6, 1.3, 0.8, 0.7, 1.4, 1.0}),
  };
}

// Default benchmark plus a fifth, balanced user domain for sweeping the
// number of data centers.
inline std::vector<DomainSpec> center_sweep_benchmark() {
  auto specs = default_benchmark();
  specs.push_back(detail::benchmark_domain("dE", AttackStyle::Mixed, 0.5, 45.0,
                                           {-1.5, -2.25, 3.0, 1.5, -0.75, 2.25, -3.0, 1.5},
                                           {0.9, 1.3, 1.0, 0.8, 1.2, 0.7, 1.1, 1.3}));
  return specs;
}

// Two single-style centers (print only, replay only) and a user holding both.
inline std::vector<DomainSpec> attack_type_benchmark() {
  using detail::benchmark_domain;
  return {
      benchmark_domain("print", AttackStyle::Print, 1.0, 20.0, {1.5, -1.5, 0.75, 2.25, -1.5, 0.75, 0.0, -0.75},
                       {1.44, 0.81, 1.21, 0.64, 1.44, 1.0, 1.0, 0.64}),
      benchmark_domain("replay", AttackStyle::Replay, 0.0, -20.0, {-2.25, 0.75, -0.75, 0.75, 1.5, -2.25, 1.5, 0.0},
                       {0.64, 1.44, 0.81, 1.21, 0.64, 1.21, 0.81, 1.44}),
      benchmark_domain("both", AttackStyle::Mixed, 0.5, 0.0, {0.75, 2.25, -1.5, -1.5, 2.25, 0.75, -1.5, 1.5},
                       {1.21, 1.0, 0.49, 1.44, 0.81, 0.64, 1.69, 1.0}),
  };
}

inline std::vector<DomainDataset> make_benchmark(const std::vector<DomainSpec>& specs, std::uint64_t seed) {
  std::vector<DomainDataset> out;
  out.reserve(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) out.push_back(make_domain(specs[i], seed * 1000003ULL + i));
  return out;
}

// CSV: header "id,f0,...,f{d-1},label,split", then one row per sample.

inline void write_dataset_csv(std::ostream& os, const std::vector<DomainDataset>& domains) {
  if (domains.empty()) return;
  const std::size_t d = domains.front().X.cols();
  os << "id";
  for (std::size_t j = 0; j < d; ++j) os << ",f" << j;
  os << ",label,split\n";
  for (const auto& ds : domains) {
    if (ds.X.cols() != d) throw std::invalid_argument("write_dataset_csv: domains differ in dimensionality");
    for (std::size_t i = 0; i < ds.size(); ++i) {
      os << ds.id;
      for (double v : ds.X.row(i)) os << ',' << format_double(v);
      os << ',' << ds.y[i] << ',' << (ds.split[i] == Split::Train ? "train" : "dev") << '\n';
    }
  }
}

inline std::vector<DomainDataset> read_dataset_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("read_dataset_csv: missing header");
  std::size_t fields = 1;
  for (char ch : line) fields += ch == ',';
  if (fields < 4) throw std::runtime_error("read_dataset_csv: header has too few columns");
  const std::size_t d = fields - 3;

  std::vector<DomainDataset> out;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != fields) {
      throw std::runtime_error("read_dataset_csv: line " + std::to_string(line_no) + " has " +
                               std::to_string(cells.size()) + " fields, expected " + std::to_string(fields));
    }
    if (out.empty() || out.back().id != cells[0]) {
      auto it = std::find_if(out.begin(), out.end(), [&](const auto& ds) { return ds.id == cells[0]; });
      if (it != out.end()) throw std::runtime_error("read_dataset_csv: rows of domain '" + cells[0] + "' are not contiguous");
      out.push_back(DomainDataset{cells[0], Matrix(0, d), {}, {}});
    }
    auto& ds = out.back();
    std::vector<double>& data = ds.X.data();
    for (std::size_t j = 0; j < d; ++j) {
      const auto& c = cells[1 + j];
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
      if (ec != std::errc() || ptr != c.data() + c.size()) {
        throw std::runtime_error("read_dataset_csv: bad number '" + c + "' on line " + std::to_string(line_no));
      }
      data.push_back(v);
    }
    const auto& lab = cells[1 + d];
    if (lab != "0" && lab != "1") throw std::runtime_error("read_dataset_csv: bad label on line " + std::to_string(line_no));
    ds.y.push_back(lab == "1" ? 1 : 0);
    const auto& sp = cells[2 + d];
    if (sp != "train" && sp != "dev") throw std::runtime_error("read_dataset_csv: bad split on line " + std::to_string(line_no));
    ds.split.push_back(sp == "train" ? Split::Train : Split::Dev);
  }
  for (auto& ds : out) ds.X = Matrix(ds.y.size(), d, std::move(ds.X.data()));
  return out;
}

inline void save_dataset_csv(const std::string& path, const std::vector<DomainDataset>& domains) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  write_dataset_csv(os, domains);
}

inline std::vector<DomainDataset> load_dataset_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  return read_dataset_csv(is);
}

}  // namespace fedtta
