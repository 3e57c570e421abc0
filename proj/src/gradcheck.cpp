#include "fsl/gradcheck.hpp"

#include <cmath>

#include "fsl/errors.hpp"

namespace fsl {

namespace {

double evaluate_value(const TapeProgram& program, const std::vector<Matrix>& params) {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(params.size());
    for (const Matrix& p : params) leaves.push_back(tape.leaf(p));
    Var loss = program(tape, leaves);
    const Matrix& lv = tape.value(loss);
    if (lv.rows() != 1 || lv.cols() != 1)
        raise(ErrorCode::contract, "finite_diff_check: program must return a scalar");
    double v = lv(0, 0);
    if (!std::isfinite(v)) raise(ErrorCode::numeric, "finite_diff_check: non-finite loss value");
    return v;
}

} // namespace

double finite_diff_check(const TapeProgram& program, const std::vector<Matrix>& params,
                         double step) {
    if (step <= 0.0) raise(ErrorCode::invalid_argument, "finite_diff_check: step must be positive");

    // Analytic pass.
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(params.size());
    for (const Matrix& p : params) leaves.push_back(tape.leaf(p));
    Var loss = program(tape, leaves);
    const Matrix& lv = tape.value(loss);
    if (lv.rows() != 1 || lv.cols() != 1)
        raise(ErrorCode::contract, "finite_diff_check: program must return a scalar");
    tape.backward(loss);
    std::vector<Matrix> analytic;
    analytic.reserve(params.size());
    for (Var v : leaves) analytic.push_back(tape.grad(v));

    double worst = 0.0;
    std::vector<Matrix> probe = params;
    for (size_t p = 0; p < probe.size(); ++p) {
        for (size_t i = 0; i < probe[p].size(); ++i) {
            double saved = probe[p].data()[i];
            probe[p].data()[i] = saved + step;
            double up = evaluate_value(program, probe);
            probe[p].data()[i] = saved - step;
            double down = evaluate_value(program, probe);
            probe[p].data()[i] = saved;
            double numeric = (up - down) / (2.0 * step);
            double a = analytic[p].data()[i];
            if (!std::isfinite(numeric) || !std::isfinite(a))
                raise(ErrorCode::numeric, "finite_diff_check: non-finite gradient");
            double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

} // namespace fsl
