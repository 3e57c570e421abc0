#pragma once

#include <functional>
#include <vector>

#include "fsl/tape.hpp"

namespace fsl {

// A differentiable scalar program: builds a graph on the given tape from
// leaves bound to the parameter matrices and returns the 1x1 loss node.
// The program must be deterministic in the parameters (fix any RNG seeds
// inside the closure).
using TapeProgram = std::function<Var(Tape&, const std::vector<Var>&)>;

// Compares tape gradients against central finite differences, entry by
// entry, and returns max over entries of
//   |analytic - numeric| / max(1, |analytic|).
// Throws a numeric error if any evaluation is non-finite.
double finite_diff_check(const TapeProgram& program, const std::vector<Matrix>& params,
                         double step = 1e-5);

} // namespace fsl
