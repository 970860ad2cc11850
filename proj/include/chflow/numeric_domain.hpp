#pragma once
/**
 * @file  numeric_domain.hpp
 * @brief Two interchangeable representations for the message-passing algebra:
 *        plain values (sum-product) and log-values (logsumexp-plus).
 *
 * Both domains expose the same static interface so the chain algorithms are
 * written once. Inputs and outputs crossing the domain boundary are always
 * log-values, which keeps the caller agnostic of the representation.
 */

#include "discretization.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>

namespace chflow
{

class NumericalOverflow : public std::overflow_error
{
public:
    using std::overflow_error::overflow_error;
};

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

namespace detail
{

/// max-shifted log(sum(exp(v))); returns -inf for an empty or all -inf input.
template <class Derived> [[nodiscard]] double log_sum_exp(const Eigen::DenseBase<Derived>& v)
{
    if (v.size() == 0)
        return kNegInf;
    const double m = v.maxCoeff();
    if (m == kNegInf)
        return kNegInf;
    return m + std::log((v.derived().array() - m).exp().sum());
}

/// Entrywise exp with exp(-inf) = 0 exactly; the vectorized exp clamps its
/// argument and would turn structural zeros into denormals.
template <class Derived> [[nodiscard]] typename Derived::PlainObject exp_exact(const Eigen::MatrixBase<Derived>& v)
{
    return v.unaryExpr([](double x) { return std::exp(x); });
}

} // namespace detail

struct LinearDomain
{
    static constexpr const char* name = "dense";
    static constexpr double zero = 0.0;
    static constexpr double one = 1.0;

    [[nodiscard]] static Matrix from_log(const Matrix& logs) { return logs.array().exp().matrix(); }

    /// A fixed factor reused across many products.
    struct Kernel
    {
        explicit Kernel(const Matrix& logs) : value(from_log(logs)) {}
        Matrix value;
    };

    [[nodiscard]] static Matrix product(const Matrix& a, const Matrix& b) { return a * b; }
    [[nodiscard]] static Matrix product(const Kernel& a, const Matrix& b) { return a.value * b; }
    [[nodiscard]] static Matrix product(const Matrix& a, const Kernel& b) { return a * b.value; }

    /// a(:, j) *= exp(loga_j)
    static void scale_cols(Matrix& a, const Vector& loga) { a = a * loga.array().exp().matrix().asDiagonal(); }

    /// a(i, :) *= exp(loga_i)
    static void scale_rows(Matrix& a, const Vector& loga) { a = loga.array().exp().matrix().asDiagonal() * a; }

    /// log of sum_s f(s, j) g(j, s) for every column j of f.
    [[nodiscard]] static Vector contract_log(const Matrix& f, const Matrix& g)
    {
        const Eigen::ArrayXd sums = (f.array() * g.transpose().array()).colwise().sum().transpose();
        if (!sums.allFinite())
            throw NumericalOverflow("dense message contraction overflowed");
        return sums.log().matrix();
    }

    [[nodiscard]] static Matrix to_log(const Matrix& a) { return a.array().log().matrix(); }

    /// Plain value of the product of two domain entries.
    [[nodiscard]] static double times_value(double a, double b) { return a * b; }

    static void check_finite(const Matrix& a)
    {
        if (!a.allFinite())
            throw NumericalOverflow("dense message passing produced non-finite values");
    }
};

struct LogDomain
{
    static constexpr const char* name = "log";
    static constexpr double zero = kNegInf;
    static constexpr double one = 0.0;

    [[nodiscard]] static Matrix from_log(const Matrix& logs) { return logs; }

    /**
     * Fixed factor with its shifted exponentials cached for both product
     * orientations: exp(L - row max) when it is the left operand and
     * exp(L - column max) when it is the right one.
     */
    struct Kernel
    {
        explicit Kernel(const Matrix& logs)
            : log(logs), row_max(finite_or_zero(logs.rowwise().maxCoeff())),
              col_max(finite_or_zero(logs.colwise().maxCoeff().transpose())),
              left_exp((logs.colwise() - row_max).array().exp().matrix()),
              right_exp((logs.rowwise() - col_max.transpose()).array().exp().matrix())
        {
        }
        Matrix log;
        Vector row_max;
        Vector col_max;
        Matrix left_exp;
        Matrix right_exp;
    };

    /// Log-domain matrix product C(i,c) = log sum_j exp(A(i,j) + B(j,c)).
    [[nodiscard]] static Matrix product(const Matrix& a, const Matrix& b)
    {
        const Vector ma = finite_or_zero(a.rowwise().maxCoeff());
        const Vector mb = finite_or_zero(b.colwise().maxCoeff().transpose());
        return finish((a.colwise() - ma).array().exp().matrix() * (b.rowwise() - mb.transpose()).array().exp().matrix(),
                      ma, mb, a, b);
    }

    [[nodiscard]] static Matrix product(const Kernel& a, const Matrix& b)
    {
        const Vector mb = finite_or_zero(b.colwise().maxCoeff().transpose());
        return finish(a.left_exp * (b.rowwise() - mb.transpose()).array().exp().matrix(), a.row_max, mb, a.log, b);
    }

    [[nodiscard]] static Matrix product(const Matrix& a, const Kernel& b)
    {
        const Vector ma = finite_or_zero(a.rowwise().maxCoeff());
        return finish((a.colwise() - ma).array().exp().matrix() * b.right_exp, ma, b.col_max, a, b.log);
    }

    static void scale_cols(Matrix& a, const Vector& loga) { a.rowwise() += loga.transpose(); }

    static void scale_rows(Matrix& a, const Vector& loga) { a.colwise() += loga; }

    [[nodiscard]] static Vector contract_log(const Matrix& f, const Matrix& g)
    {
        Vector out(f.cols());
        const Matrix t = f + g.transpose();
        for (Eigen::Index j = 0; j < f.cols(); ++j)
            out[j] = detail::log_sum_exp(t.col(j));
        return out;
    }

    [[nodiscard]] static Matrix to_log(const Matrix& a) { return a; }

    [[nodiscard]] static double times_value(double a, double b) { return std::exp(a + b); }

    static void check_finite(const Matrix& a)
    {
        if ((a.array() == std::numeric_limits<double>::infinity()).any() || a.hasNaN())
            throw NumericalOverflow("log-domain message passing produced NaN or +inf");
    }

private:
    /// All -inf rows or columns get a zero shift so the scaled block stays exact.
    [[nodiscard]] static Vector finite_or_zero(Vector m)
    {
        for (auto& v : m)
            if (v == kNegInf)
                v = 0.0;
        return m;
    }

    /**
     * Undo the shifts of a scaled product s. An entry below 1e-280 may have
     * lost terms to underflow and is recomputed exactly from the logs.
     */
    [[nodiscard]] static Matrix finish(Matrix s, const Vector& ma, const Vector& mb, const Matrix& a, const Matrix& b)
    {
        constexpr double tiny = 1e-280;
        Matrix at; // transposed copy of a, built on the first fallback
        for (Eigen::Index c = 0; c < s.cols(); ++c)
        {
            for (Eigen::Index i = 0; i < s.rows(); ++i)
            {
                const double v = s(i, c);
                if (v >= tiny)
                {
                    s(i, c) = ma[i] + mb[c] + std::log(v);
                    continue;
                }
                if (at.size() == 0)
                    at = a.transpose();
                s(i, c) = detail::log_sum_exp(at.col(i) + b.col(c));
            }
        }
        return s;
    }
};

} // namespace chflow
