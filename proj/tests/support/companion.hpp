#pragma once

#include <Eigen/Eigenvalues>
#include <vector>

#include <gafsim/pointprocess.hpp>

namespace gafsim::oracle
{

// Roots of sum c_n z^n by eigenvalues of the companion matrix, with the
// variable rescaled by s to tame coefficient growth, then Newton-polished.
inline std::vector<Complex> companion_roots(std::vector<Complex> c, double s)
{
    while (!c.empty() && c.back() == Complex(0.0))
        c.pop_back();
    int const n = int(c.size()) - 1;
    std::vector<Complex> q(c.size());
    double sp = 1;
    for (int k = 0; k <= n; ++k, sp *= s)
        q[k] = c[k] * sp;
    Eigen::MatrixXcd M = Eigen::MatrixXcd::Zero(n, n);
    for (int i = 1; i < n; ++i)
        M(i, i - 1) = 1.0;
    for (int i = 0; i < n; ++i)
        M(i, n - 1) = -q[i] / q[n];
    Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(M, false);
    std::vector<Complex> roots;
    for (int i = 0; i < n; ++i)
    {
        Complex z = es.eigenvalues()[i] * s;
        for (int it = 0; it < 5; ++it)
        {
            Complex p = 0, dp = 0;
            for (int k = n; k >= 0; --k)
            {
                dp = dp * z + p;
                p = p * z + c[k];
            }
            if (dp != Complex(0.0))
                z -= p / dp;
        }
        roots.push_back(z);
    }
    return roots;
}

inline std::vector<Complex> truncated_series(GafSample const& g)
{
    auto const& b = g.model().basis();
    std::vector<Complex> c(b.n_max() + 1);
    for (int n = 0; n <= b.n_max(); ++n)
        c[n] = g.coeffs()[n] / b.norm(n);
    return c;
}

}  // namespace gafsim::oracle
