#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace qaf {

struct GradCheckGroup {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t checked = 0;  // parameters that cleared the magnitude guard
};

// Central finite differences against the analytic backward passes, on small
// random detector instances (T=3, d_ssl=4, d_codec=2, Q=2, K=3, H=3) and on
// standalone qaf_backward instances. Relative error per parameter is
// |a - n| / (|a| + |n|), skipped when |a| + |n| <= 1e-8.
std::vector<GradCheckGroup> run_gradcheck(std::uint64_t seed, std::size_t rounds = 20);

constexpr double kGradCheckTolerance = 1e-5;

}  // namespace qaf
