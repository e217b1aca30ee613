#include "subbag/sampling.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "subbag/error.hpp"

namespace subbag {

std::string to_string(Algorithm algorithm) {
  return algorithm == Algorithm::alg1 ? "1" : "2";
}

Algorithm parse_algorithm(const std::string& text) {
  if (text == "1" || text == "alg1") return Algorithm::alg1;
  if (text == "2" || text == "alg2") return Algorithm::alg2;
  throw Error(ErrorKind::usage, "unknown algorithm '" + text + "' (expected 1 or 2)");
}

namespace {

// floor() with a relative nudge so that values which are integers up to
// rounding (e.g. 10000^(1/2)) land on the integer.
std::uint64_t nudged_floor(long double x) {
  return static_cast<std::uint64_t>(std::floor(x * (1.0L + 1e-12L)));
}

}  // namespace

std::uint64_t subsample_count(std::uint64_t n_total, std::uint64_t k_n, double alpha,
                              double delta_m) {
  require(k_n >= 1, "k_n must be at least 1");
  const long double n = static_cast<long double>(n_total);
  return nudged_floor(static_cast<long double>(alpha) * std::pow(n, 1.0L + delta_m) /
                      static_cast<long double>(k_n));
}

HyperParams select_hyperparams(std::uint64_t n_total, const HyperRequest& request) {
  require(n_total >= 2, "n_total must be at least 2");
  require(request.alpha > 0.0 && std::isfinite(request.alpha), "alpha must be positive");
  require(request.delta_m >= 0.0, "delta_m must be non-negative");

  HyperParams hyper;
  hyper.algorithm = request.algorithm;
  hyper.alpha = request.alpha;
  hyper.delta_k = request.delta_k;
  hyper.delta_m = request.delta_m;

  if (request.k_override) {
    require(*request.k_override >= 1, "k_n must be at least 1");
    hyper.k_n = *request.k_override;
    hyper.k_overridden = true;
  } else {
    if (!request.estimator_is_biased) {
      throw Error(ErrorKind::usage,
                  "estimator is unbiased: the k_N formula does not apply, supply k_n explicitly");
    }
    const long double n = static_cast<long double>(n_total);
    if (request.algorithm == Algorithm::alg1) {
      require(request.delta_k > 0.0 && request.delta_k < 0.5,
              "algorithm 1 requires 0 < delta_k < 1/2");
      hyper.k_n = nudged_floor(std::pow(n, 0.5L + request.delta_k));
    } else {
      require(request.delta_k > 0.0 && request.delta_k <= 1.0 / 6.0,
              "algorithm 2 requires 0 < delta_k <= 1/6");
      hyper.k_n = nudged_floor(std::pow(n, 1.0L / 3.0L + request.delta_k));
    }
  }
  if (hyper.k_n > n_total) {
    hyper.k_n = n_total;
    hyper.k_clamped = true;
  }

  if (request.m_override) {
    hyper.m_n = *request.m_override;
    hyper.m_overridden = true;
    // a fixed m_n determines alpha through m_n = alpha N^(1 + delta_m) / k_n
    hyper.alpha = static_cast<double>(static_cast<long double>(hyper.m_n) * hyper.k_n /
                                      std::pow(static_cast<long double>(n_total),
                                               1.0L + request.delta_m));
  } else {
    hyper.m_n = subsample_count(n_total, hyper.k_n, request.alpha, request.delta_m);
  }
  if (hyper.m_n == 0) {
    throw Error(ErrorKind::usage, "resulting m_n is 0; increase alpha or delta_m");
  }
  return hyper;
}

namespace {

// Insert-only open-addressing set of row indices, sized for k entries.
class IndexSet {
 public:
  explicit IndexSet(std::uint64_t k) {
    const std::uint64_t capacity = std::bit_ceil(std::max<std::uint64_t>(2 * k, 8));
    slots_.assign(capacity, kEmpty);
    mask_ = capacity - 1;
    shift_ = 64 - std::countr_zero(capacity);
  }

  // Returns false if already present.
  bool insert(std::uint64_t value) {
    std::uint64_t h = (value * 0x9e3779b97f4a7c15ULL) >> shift_;
    while (true) {
      std::uint64_t& slot = slots_[h];
      if (slot == kEmpty) {
        slot = value;
        return true;
      }
      if (slot == value) return false;
      h = (h + 1) & mask_;
    }
  }

 private:
  static constexpr std::uint64_t kEmpty = ~std::uint64_t{0};
  std::vector<std::uint64_t> slots_;
  std::uint64_t mask_ = 0;
  int shift_ = 0;
};

}  // namespace

void draw_sorted_srs(std::uint64_t n_total, std::uint64_t k_n, Xoshiro256& rng, IndexList& out) {
  if (k_n == 0 || k_n > n_total) {
    throw Error(ErrorKind::usage, "subsample size must satisfy 1 <= k_n <= n_total (k_n=" +
                                      std::to_string(k_n) + ", n_total=" +
                                      std::to_string(n_total) + ")");
  }
  out.clear();
  out.reserve(k_n);
  if (k_n == n_total) {
    for (std::uint64_t i = 0; i < n_total; ++i) out.push_back(i);
    return;
  }
  IndexSet chosen(k_n);
  for (std::uint64_t j = n_total - k_n; j < n_total; ++j) {
    const std::uint64_t t = rng.below(j + 1);
    if (chosen.insert(t)) {
      out.push_back(t);
    } else {
      chosen.insert(j);
      out.push_back(j);
    }
  }
  std::sort(out.begin(), out.end());
}

IndexList draw_sorted_srs(std::uint64_t n_total, std::uint64_t k_n, std::uint64_t stream_seed) {
  Xoshiro256 rng(stream_seed);
  IndexList out;
  draw_sorted_srs(n_total, k_n, rng, out);
  return out;
}

SamplingPlan SamplingPlan::generated(std::uint64_t n_total, std::uint64_t k_n, std::uint64_t m_n,
                                     std::uint64_t master_seed) {
  if (k_n == 0 || k_n > n_total) {
    throw Error(ErrorKind::usage, "subsample size must satisfy 1 <= k_n <= n_total");
  }
  require(m_n >= 1, "m_n must be at least 1");
  SamplingPlan plan;
  plan.n_total_ = n_total;
  plan.k_n_ = k_n;
  plan.m_n_ = m_n;
  plan.master_seed_ = master_seed;
  return plan;
}

SamplingPlan SamplingPlan::from_lists(std::uint64_t n_total, std::vector<IndexList> subsamples) {
  require(!subsamples.empty(), "explicit plan must contain at least one subsample");
  const std::size_t k = subsamples.front().size();
  require(k >= 1 && k <= n_total, "explicit plan subsample size out of range");
  for (std::size_t j = 0; j < subsamples.size(); ++j) {
    const auto& s = subsamples[j];
    if (s.size() != k) {
      throw Error(ErrorKind::usage, "explicit plan subsample " + std::to_string(j) +
                                        " has size " + std::to_string(s.size()) + ", expected " +
                                        std::to_string(k));
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= n_total || (i > 0 && s[i] <= s[i - 1])) {
        throw Error(ErrorKind::usage, "explicit plan subsample " + std::to_string(j) +
                                          " is not strictly increasing within [0, n_total)");
      }
    }
  }
  SamplingPlan plan;
  plan.n_total_ = n_total;
  plan.k_n_ = k;
  plan.m_n_ = subsamples.size();
  plan.lists_ = std::move(subsamples);
  return plan;
}

void SamplingPlan::subsample(std::size_t j, IndexList& out) const {
  if (j >= m_n_) throw Error(ErrorKind::usage, "subsample id out of range");
  if (!lists_.empty()) {
    out = lists_[j];
    return;
  }
  Xoshiro256 rng(stream_seed(j));
  draw_sorted_srs(n_total_, k_n_, rng, out);
}

IndexList SamplingPlan::subsample(std::size_t j) const {
  IndexList out;
  subsample(j, out);
  return out;
}

std::vector<IndexList> SamplingPlan::materialize() const {
  std::vector<IndexList> all(m_n_);
  for (std::size_t j = 0; j < m_n_; ++j) subsample(j, all[j]);
  return all;
}

SamplingPlan build_plan(std::uint64_t n_total, const HyperParams& hyper,
                        std::uint64_t master_seed) {
  return SamplingPlan::generated(n_total, hyper.k_n, hyper.m_n, master_seed);
}

double binomial(std::uint64_t n, std::uint64_t k) {
  if (k > n) return 0.0;
  k = std::min(k, n - k);
  double result = 1.0;
  for (std::uint64_t i = 1; i <= k; ++i) {
    result = result * static_cast<double>(n - k + i) / static_cast<double>(i);
  }
  return std::round(result);
}

std::vector<IndexList> all_subsets(std::uint64_t n_total, std::uint64_t k_n) {
  require(k_n >= 1 && k_n <= n_total, "all_subsets requires 1 <= k <= n");
  std::vector<IndexList> out;
  out.reserve(static_cast<std::size_t>(binomial(n_total, k_n)));
  IndexList current(k_n);
  for (std::uint64_t i = 0; i < k_n; ++i) current[i] = i;
  while (true) {
    out.push_back(current);
    // advance to the next combination in lexicographic order
    std::int64_t pos = static_cast<std::int64_t>(k_n) - 1;
    while (pos >= 0 && current[pos] == n_total - k_n + static_cast<std::uint64_t>(pos)) --pos;
    if (pos < 0) break;
    ++current[pos];
    for (std::uint64_t i = pos + 1; i < k_n; ++i) current[i] = current[i - 1] + 1;
  }
  return out;
}

}  // namespace subbag
