#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "subbag/error.hpp"
#include "subbag/rng.hpp"

namespace subbag {

enum class Algorithm { alg1, alg2 };

std::string to_string(Algorithm algorithm);
Algorithm parse_algorithm(const std::string& text);

/// Subsample size, subsample count and the inputs that produced them.
struct HyperParams {
  std::uint64_t k_n = 0;
  std::uint64_t m_n = 0;
  double alpha = 1.0;
  double delta_k = 0.0;
  double delta_m = 0.0;
  Algorithm algorithm = Algorithm::alg1;
  bool k_clamped = false;      // formula exceeded N and was clamped
  bool k_overridden = false;   // k_n supplied by the caller
  bool m_overridden = false;   // m_n supplied by the caller
};

struct HyperRequest {
  Algorithm algorithm = Algorithm::alg1;
  double alpha = 1.0;
  double delta_k = 0.0;
  double delta_m = 0.0;
  /// Whether the subsample estimator is still biased (after correction, for alg2).
  /// When false the k_N formula does not apply and k_override is required.
  bool estimator_is_biased = true;
  std::optional<std::uint64_t> k_override;
  std::optional<std::uint64_t> m_override;
};

/// k_N = floor(N^(1/2 + delta_k)) for alg1 or floor(N^(1/3 + delta_k)) for alg2,
/// m_N = floor(alpha * N^(1 + delta_m) / k_N). Overrides win over formulas; a
/// fixed m_N replaces alpha by k_N m_N / N^(1 + delta_m).
HyperParams select_hyperparams(std::uint64_t n_total, const HyperRequest& request);

/// floor(alpha * N^(1 + delta_m) / k_n); exposed for callers that fix k_n.
std::uint64_t subsample_count(std::uint64_t n_total, std::uint64_t k_n, double alpha,
                              double delta_m);

using IndexList = std::vector<std::uint64_t>;

/// Uniform size-k subset of {0, ..., n-1}, sorted ascending. Floyd's algorithm
/// over an open-addressing set: O(k) memory, O(k log k) time.
IndexList draw_sorted_srs(std::uint64_t n_total, std::uint64_t k_n, std::uint64_t stream_seed);
void draw_sorted_srs(std::uint64_t n_total, std::uint64_t k_n, Xoshiro256& rng, IndexList& out);

/// m_N subsamples of size k_N. Generated plans are lazy: subsample j is
/// redrawn from its substream seed derive_seed(master_seed, j) on demand, so
/// the whole plan never has to be resident. Explicit plans hold their lists.
class SamplingPlan {
 public:
  static SamplingPlan generated(std::uint64_t n_total, std::uint64_t k_n, std::uint64_t m_n,
                                std::uint64_t master_seed);
  static SamplingPlan from_lists(std::uint64_t n_total, std::vector<IndexList> subsamples);

  std::uint64_t n_total() const noexcept { return n_total_; }
  std::uint64_t k_n() const noexcept { return k_n_; }
  std::size_t size() const noexcept { return m_n_; }
  std::uint64_t master_seed() const noexcept { return master_seed_; }
  bool is_explicit() const noexcept { return !lists_.empty(); }

  std::uint64_t stream_id(std::size_t j) const noexcept { return j; }
  std::uint64_t stream_seed(std::size_t j) const noexcept {
    return derive_seed(master_seed_, stream_id(j));
  }

  IndexList subsample(std::size_t j) const;
  void subsample(std::size_t j, IndexList& out) const;

  std::vector<IndexList> materialize() const;

 private:
  SamplingPlan() = default;

  std::uint64_t n_total_ = 0;
  std::uint64_t k_n_ = 0;
  std::size_t m_n_ = 0;
  std::uint64_t master_seed_ = 0;
  std::vector<IndexList> lists_;
};

SamplingPlan build_plan(std::uint64_t n_total, const HyperParams& hyper, std::uint64_t master_seed);

/// Every size-k subset of {0, ..., n-1} in lexicographic order.
std::vector<IndexList> all_subsets(std::uint64_t n_total, std::uint64_t k_n);

/// C(n, k) as a double (exact below 2^53).
double binomial(std::uint64_t n, std::uint64_t k);

}  // namespace subbag
