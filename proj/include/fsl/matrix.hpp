#pragma once

#include <cstddef>
#include <vector>

#include "fsl/rng.hpp"

namespace fsl {

// Dense row-major matrix of doubles. This is the value type for every
// embedding, parameter and autodiff intermediate in the library.
class Matrix {
public:
    Matrix() = default;
    Matrix(size_t rows, size_t cols);                            // zero filled
    Matrix(size_t rows, size_t cols, std::vector<double> data);  // rejects non-finite entries

    static Matrix identity(size_t n);
    static Matrix filled(size_t rows, size_t cols, double value);
    static Matrix glorot_uniform(size_t rows, size_t cols, Rng& rng);
    static Matrix gaussian(size_t rows, size_t cols, Rng& rng, double mean = 0.0, double stddev = 1.0);

    size_t rows() const { return rows_; }
    size_t cols() const { return cols_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(size_t r, size_t c) { return data_[r * cols_ + c]; }
    double operator()(size_t r, size_t c) const { return data_[r * cols_ + c]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    bool same_shape(const Matrix& other) const { return rows_ == other.rows_ && cols_ == other.cols_; }

    // Throws a numeric error naming `what` if any entry is NaN or infinite.
    void ensure_finite(const char* what) const;

private:
    size_t rows_ = 0;
    size_t cols_ = 0;
    std::vector<double> data_;
};

// Post-operation finite checks on tape values. On by default; heavy inner
// loops can switch them off once a configuration is trusted.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& m, double s);

// Row-wise softmax with max subtraction, safe for entries up to +-1e6.
Matrix stable_softmax_rows(const Matrix& m);

// Per-row normalization: (x - mean) / sqrt(var + eps), then gain/bias.
// gain and bias are 1 x cols. Variance is the population variance.
Matrix layer_norm_rows(const Matrix& m, const Matrix& gain, const Matrix& bias, double eps = 1e-5);

// Inverted dropout mask: entries are 1/(1-rate) with probability 1-rate,
// else 0. All ones when training is false or rate is 0.
Matrix dropout_mask(size_t rows, size_t cols, double rate, Rng& rng, bool training);

} // namespace fsl
