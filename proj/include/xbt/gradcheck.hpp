#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>

#include "xbt/netgraph.hpp"
#include "xbt/rng.hpp"

namespace xbt {

struct GradCheckCase {
  ModelSpec spec;
  ParameterStore params;
  Tensor input;
  Tensor upstream;            // weights of the scalar probe <upstream, output>
  bool include_softmax = false;
};

/// Random small composite. Case i cycles through templates so that a run of
/// consecutive cases exercises every layer kind. Inputs closer than `margin`
/// to a ReLU or max-pool kink are redrawn.
GradCheckCase random_gradcheck_case(std::size_t i, RngStream& rng, double margin = 1e-3);

/// Smallest distance of the case's input to a ReLU zero crossing or a max-pool tie.
double kink_margin(const GradCheckCase& c);

struct GradCheckResult {
  double rel_error = 0.0;  // ||g_rev - g_fd|| / max(||g_rev||, ||g_fd||)
  double elementwise_error = 0.0;  // max_i |a_i - b_i| / max(1, |a_i|, |b_i|)
  std::size_t input_size = 0;

  double worst() const noexcept { return rel_error > elementwise_error ? rel_error : elementwise_error; }
};

/// Reverse-mode input gradient versus central differences with step h.
GradCheckResult check_input_gradient(const GradCheckCase& c, double h = 1e-4);

struct GradCheckSummary {
  std::size_t cases = 0;
  std::size_t passed = 0;
  double worst_rel_error = 0.0;
  double tolerance = 1e-4;
  std::map<std::string, std::size_t> kind_counts;  // layer kind -> cases containing it

  bool all_passed() const noexcept { return passed == cases; }
  bool all_kinds_covered() const;
};

GradCheckSummary run_gradcheck(std::size_t cases, std::uint64_t seed, double tolerance = 1e-4);

}  // namespace xbt
