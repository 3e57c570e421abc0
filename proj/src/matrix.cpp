#include "fsl/matrix.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <utility>

#include "fsl/errors.hpp"

namespace fsl {

const char* error_code_name(ErrorCode code) {
    switch (code) {
    case ErrorCode::invalid_argument: return "invalid argument";
    case ErrorCode::dimension: return "dimension mismatch";
    case ErrorCode::config: return "config error";
    case ErrorCode::parse: return "parse error";
    case ErrorCode::schema: return "schema error";
    case ErrorCode::io: return "io error";
    case ErrorCode::version: return "version mismatch";
    case ErrorCode::integrity: return "integrity error";
    case ErrorCode::sampling: return "sampling error";
    case ErrorCode::contract: return "contract violation";
    case ErrorCode::numeric: return "numeric error";
    case ErrorCode::unsupported: return "unsupported";
    case ErrorCode::internal: return "internal error";
    }
    return "unknown error";
}

namespace {
std::atomic<bool> g_finite_checks{true};

std::string shape_str(const Matrix& m) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%zux%zu", m.rows(), m.cols());
    return buf;
}
} // namespace

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }
bool finite_checks_enabled() { return g_finite_checks.load(); }

Matrix::Matrix(size_t rows, size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Matrix::Matrix(size_t rows, size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols)
        raise(ErrorCode::dimension, "matrix data size does not match " + shape_str(*this));
    ensure_finite("matrix construction");
}

Matrix Matrix::identity(size_t n) {
    Matrix m(n, n);
    for (size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::filled(size_t rows, size_t cols, double value) {
    Matrix m(rows, cols);
    for (size_t i = 0; i < m.size(); ++i) m.data()[i] = value;
    m.ensure_finite("matrix fill");
    return m;
}

Matrix Matrix::glorot_uniform(size_t rows, size_t cols, Rng& rng) {
    Matrix m(rows, cols);
    double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-limit, limit);
    return m;
}

Matrix Matrix::gaussian(size_t rows, size_t cols, Rng& rng, double mean, double stddev) {
    Matrix m(rows, cols);
    for (size_t i = 0; i < m.size(); ++i) m.data()[i] = mean + stddev * rng.normal();
    return m;
}

void Matrix::ensure_finite(const char* what) const {
    for (size_t i = 0; i < data_.size(); ++i)
        if (!std::isfinite(data_[i]))
            raise(ErrorCode::numeric, std::string(what) + ": non-finite entry at offset " +
                                          std::to_string(i) + " in " + shape_str(*this));
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        raise(ErrorCode::dimension,
              "matmul: inner dimensions " + shape_str(a) + " * " + shape_str(b));
    Matrix out(a.rows(), b.cols());
    for (size_t i = 0; i < a.rows(); ++i) {
        const double* arow = a.data() + i * a.cols();
        double* orow = out.data() + i * out.cols();
        for (size_t k = 0; k < a.cols(); ++k) {
            double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = b.data() + k * b.cols();
            for (size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

Matrix transpose(const Matrix& m) {
    Matrix out(m.cols(), m.rows());
    for (size_t i = 0; i < m.rows(); ++i)
        for (size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
    return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b))
        raise(ErrorCode::dimension, "add: shapes " + shape_str(a) + " vs " + shape_str(b));
    Matrix out = a;
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
    return out;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b))
        raise(ErrorCode::dimension, "sub: shapes " + shape_str(a) + " vs " + shape_str(b));
    Matrix out = a;
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
    return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b))
        raise(ErrorCode::dimension, "hadamard: shapes " + shape_str(a) + " vs " + shape_str(b));
    Matrix out = a;
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.data()[i];
    return out;
}

Matrix scale(const Matrix& m, double s) {
    Matrix out = m;
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] *= s;
    return out;
}

Matrix stable_softmax_rows(const Matrix& m) {
    if (m.cols() == 0) raise(ErrorCode::dimension, "softmax: zero-width input");
    Matrix out(m.rows(), m.cols());
    for (size_t i = 0; i < m.rows(); ++i) {
        double mx = m(i, 0);
        for (size_t j = 1; j < m.cols(); ++j) mx = std::max(mx, m(i, j));
        double sum = 0.0;
        for (size_t j = 0; j < m.cols(); ++j) {
            double e = std::exp(m(i, j) - mx);
            out(i, j) = e;
            sum += e;
        }
        for (size_t j = 0; j < m.cols(); ++j) out(i, j) /= sum;
    }
    return out;
}

Matrix layer_norm_rows(const Matrix& m, const Matrix& gain, const Matrix& bias, double eps) {
    if (gain.rows() != 1 || gain.cols() != m.cols() || bias.rows() != 1 || bias.cols() != m.cols())
        raise(ErrorCode::dimension, "layer_norm: gain/bias must be 1x" + std::to_string(m.cols()));
    if (m.cols() == 0) raise(ErrorCode::dimension, "layer_norm: zero-width input");
    Matrix out(m.rows(), m.cols());
    double n = static_cast<double>(m.cols());
    for (size_t i = 0; i < m.rows(); ++i) {
        double mean = 0.0;
        for (size_t j = 0; j < m.cols(); ++j) mean += m(i, j);
        mean /= n;
        double var = 0.0;
        for (size_t j = 0; j < m.cols(); ++j) {
            double d = m(i, j) - mean;
            var += d * d;
        }
        var /= n;
        double inv = 1.0 / std::sqrt(var + eps);
        for (size_t j = 0; j < m.cols(); ++j)
            out(i, j) = gain(0, j) * ((m(i, j) - mean) * inv) + bias(0, j);
    }
    return out;
}

Matrix dropout_mask(size_t rows, size_t cols, double rate, Rng& rng, bool training) {
    if (rate < 0.0 || rate >= 1.0)
        raise(ErrorCode::config, "dropout rate must lie in [0, 1), got " + std::to_string(rate));
    if (!training || rate == 0.0) return Matrix::filled(rows, cols, 1.0);
    Matrix mask(rows, cols);
    double keep = 1.0 / (1.0 - rate);
    for (size_t i = 0; i < mask.size(); ++i)
        mask.data()[i] = (rng.uniform() >= rate) ? keep : 0.0;
    return mask;
}

} // namespace fsl
