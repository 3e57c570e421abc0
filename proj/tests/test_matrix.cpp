#include <cmath>
#include <limits>

#include "doctest.h"

#include "fsl/matrix.hpp"
#include "helpers.hpp"

using namespace fsl;
using fsl_test::error_code_of;

TEST_CASE("construction and fills") {
    Matrix z(2, 3);
    CHECK(z.rows() == 2);
    CHECK(z.cols() == 3);
    for (size_t i = 0; i < z.size(); ++i) CHECK(z.data()[i] == 0.0);

    Matrix id = Matrix::identity(3);
    for (size_t i = 0; i < 3; ++i)
        for (size_t j = 0; j < 3; ++j) CHECK(id(i, j) == (i == j ? 1.0 : 0.0));

    Matrix f = Matrix::filled(2, 2, -1.5);
    for (size_t i = 0; i < f.size(); ++i) CHECK(f.data()[i] == -1.5);

    CHECK(error_code_of([] { Matrix(2, 2, {1.0, 2.0, 3.0}); }) == ErrorCode::dimension);
    double nan = std::numeric_limits<double>::quiet_NaN();
    CHECK(error_code_of([&] { Matrix(1, 2, {1.0, nan}); }) == ErrorCode::numeric);
    double inf = std::numeric_limits<double>::infinity();
    CHECK(error_code_of([&] { Matrix(1, 1, {inf}); }) == ErrorCode::numeric);
}

TEST_CASE("matmul agrees with the scalar triple loop") {
    Rng rng(21);
    Matrix a = Matrix::gaussian(7, 5, rng);
    Matrix b = Matrix::gaussian(5, 9, rng);
    Matrix c = matmul(a, b);
    REQUIRE(c.rows() == 7);
    REQUIRE(c.cols() == 9);
    for (size_t i = 0; i < 7; ++i)
        for (size_t j = 0; j < 9; ++j) {
            double s = 0.0;
            for (size_t k = 0; k < 5; ++k) s += a(i, k) * b(k, j);
            CHECK(c(i, j) == doctest::Approx(s).epsilon(1e-12));
        }
    CHECK(error_code_of([&] { matmul(a, a); }) == ErrorCode::dimension);
}

TEST_CASE("matmul skips zero entries without changing results") {
    Rng rng(22);
    Matrix a = Matrix::gaussian(4, 6, rng);
    a(0, 0) = 0.0;
    a(2, 3) = 0.0;
    Matrix b = Matrix::gaussian(6, 3, rng);
    Matrix c = matmul(a, b);
    for (size_t i = 0; i < 4; ++i)
        for (size_t j = 0; j < 3; ++j) {
            double s = 0.0;
            for (size_t k = 0; k < 6; ++k) s += a(i, k) * b(k, j);
            CHECK(c(i, j) == doctest::Approx(s).epsilon(1e-12));
        }
}

TEST_CASE("elementwise ops match loops") {
    Rng rng(23);
    Matrix a = Matrix::gaussian(3, 4, rng);
    Matrix b = Matrix::gaussian(3, 4, rng);
    Matrix s = add(a, b), d = sub(a, b), h = hadamard(a, b), k = scale(a, -2.5);
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(s.data()[i] == a.data()[i] + b.data()[i]);
        CHECK(d.data()[i] == a.data()[i] - b.data()[i]);
        CHECK(h.data()[i] == a.data()[i] * b.data()[i]);
        CHECK(k.data()[i] == a.data()[i] * -2.5);
    }
    Matrix t = transpose(a);
    for (size_t i = 0; i < a.rows(); ++i)
        for (size_t j = 0; j < a.cols(); ++j) CHECK(t(j, i) == a(i, j));
    Matrix wrong(4, 3);
    CHECK(error_code_of([&] { add(a, wrong); }) == ErrorCode::dimension);
}

TEST_CASE("softmax rows are stable and shift invariant") {
    Matrix m(2, 3, {1.0, 2.0, 3.0, 1000.0, 1000.0, 999.0});
    Matrix p = stable_softmax_rows(m);
    for (size_t i = 0; i < 2; ++i) {
        double sum = 0.0;
        for (size_t j = 0; j < 3; ++j) {
            CHECK(std::isfinite(p(i, j)));
            sum += p(i, j);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
    // Hand oracle for the small row.
    double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK(p(0, 0) == doctest::Approx(std::exp(1.0) / z).epsilon(1e-12));
    CHECK(p(0, 2) == doctest::Approx(std::exp(3.0) / z).epsilon(1e-12));
    // Adding a constant per row must not change anything.
    Matrix shifted(2, 3);
    for (size_t i = 0; i < 2; ++i)
        for (size_t j = 0; j < 3; ++j) shifted(i, j) = m(i, j) + 17.5;
    Matrix p2 = stable_softmax_rows(shifted);
    for (size_t i = 0; i < p.size(); ++i)
        CHECK(p.data()[i] == doctest::Approx(p2.data()[i]).epsilon(1e-12));
}

TEST_CASE("layer norm matches the scalar recipe") {
    Rng rng(31);
    Matrix x = Matrix::gaussian(4, 6, rng, 3.0, 2.0);
    Matrix gain = Matrix::gaussian(1, 6, rng);
    Matrix bias = Matrix::gaussian(1, 6, rng);
    double eps = 1e-5;
    Matrix y = layer_norm_rows(x, gain, bias, eps);
    for (size_t i = 0; i < x.rows(); ++i) {
        double mean = 0.0;
        for (size_t j = 0; j < 6; ++j) mean += x(i, j);
        mean /= 6.0;
        double var = 0.0;
        for (size_t j = 0; j < 6; ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
        var /= 6.0;
        for (size_t j = 0; j < 6; ++j) {
            double expect = gain(0, j) * (x(i, j) - mean) / std::sqrt(var + eps) + bias(0, j);
            CHECK(y(i, j) == doctest::Approx(expect).epsilon(1e-12));
        }
    }
    // Unit gain, zero bias: rows come out centered with unit variance.
    Matrix ones = Matrix::filled(1, 6, 1.0);
    Matrix zeros(1, 6);
    Matrix yn = layer_norm_rows(x, ones, zeros, 0.0);
    for (size_t i = 0; i < yn.rows(); ++i) {
        double mean = 0.0, var = 0.0;
        for (size_t j = 0; j < 6; ++j) mean += yn(i, j);
        mean /= 6.0;
        for (size_t j = 0; j < 6; ++j) var += (yn(i, j) - mean) * (yn(i, j) - mean);
        var /= 6.0;
        CHECK(std::abs(mean) < 1e-12);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-9));
    }
    CHECK(error_code_of([&] { layer_norm_rows(x, zeros, Matrix(1, 7), eps); }) ==
          ErrorCode::dimension);
}

TEST_CASE("dropout masks scale surviving entries") {
    Rng rng(41);
    Matrix off = dropout_mask(5, 5, 0.4, rng, false);
    for (size_t i = 0; i < off.size(); ++i) CHECK(off.data()[i] == 1.0);
    Matrix zero_rate = dropout_mask(5, 5, 0.0, rng, true);
    for (size_t i = 0; i < zero_rate.size(); ++i) CHECK(zero_rate.data()[i] == 1.0);

    Matrix m = dropout_mask(40, 40, 0.4, rng, true);
    double keep = 1.0 / 0.6;
    size_t kept = 0;
    for (size_t i = 0; i < m.size(); ++i) {
        bool valid = m.data()[i] == 0.0 || m.data()[i] == doctest::Approx(keep);
        CHECK(valid);
        kept += m.data()[i] != 0.0;
    }
    // Inverted scaling keeps the expectation at one.
    double frac = static_cast<double>(kept) / static_cast<double>(m.size());
    CHECK(frac == doctest::Approx(0.6).epsilon(0.05));

    CHECK(error_code_of([&] { dropout_mask(2, 2, 1.0, rng, true); }) == ErrorCode::config);
    CHECK(error_code_of([&] { dropout_mask(2, 2, -0.1, rng, true); }) == ErrorCode::config);
}

TEST_CASE("glorot uniform respects its limit") {
    Rng rng(51);
    Matrix w = Matrix::glorot_uniform(30, 10, rng);
    double limit = std::sqrt(6.0 / 40.0);
    for (size_t i = 0; i < w.size(); ++i) {
        CHECK(w.data()[i] >= -limit);
        CHECK(w.data()[i] < limit);
    }
}

TEST_CASE("finite checks can be toggled for diagnostics") {
    CHECK(finite_checks_enabled());
    set_finite_checks(false);
    CHECK(!finite_checks_enabled());
    set_finite_checks(true);
    CHECK(finite_checks_enabled());
}
