#pragma once

// Soatto/Brockett closed-form cost with the normalizing denominators dropped:
//   G(t) = sum_i B_i^T J A_i t t^T A_i^T J^T B_i
//   H(t) = sum_i B_i^T J A_i t t^T A_i^T J^T u_i
//   S    = sum_i A_i^T J^T u_i u_i^T J A_i
//   f(t) = t^T S t - H(t)^T G(t)^{-1} H(t)
// G and H are quadratic forms in t. One O(N) pass gathers their six coefficient
// blocks, then the adjugate (degree 4), determinant and omega numerator
// (degree 6) are expanded as polynomials so f(t) costs O(1) per evaluation.

#include <array>
#include <cmath>
#include <cstddef>

#include "erl_egomotion/types.hpp"

namespace erl {

namespace detail {

/// Monomials t1^a t2^b t3^c of total degree D, ordered by decreasing a then decreasing b.
/// For D = 2 the order is t1^2, t1t2, t1t3, t2^2, t2t3, t3^2.
template <int D>
struct Monomials {
  static constexpr std::size_t count = static_cast<std::size_t>((D + 1) * (D + 2) / 2);

  static constexpr std::size_t index(int a, int b) {
    std::size_t idx = 0;
    for (int ap = D; ap > a; --ap) idx += static_cast<std::size_t>(D - ap + 1);
    return idx + static_cast<std::size_t>(D - a - b);
  }

  struct Exponent {
    int a, b, c;
  };

  static constexpr std::array<Exponent, count> exponents() {
    std::array<Exponent, count> out{};
    std::size_t k = 0;
    for (int a = D; a >= 0; --a) {
      for (int b = D - a; b >= 0; --b) out[k++] = {a, b, D - a - b};
    }
    return out;
  }

  static std::array<double, count> evaluate(const Vector3d& t) {
    std::array<double, D + 1> p1{}, p2{}, p3{};
    p1[0] = p2[0] = p3[0] = 1.0;
    for (int k = 1; k <= D; ++k) {
      p1[k] = p1[k - 1] * t.x();
      p2[k] = p2[k - 1] * t.y();
      p3[k] = p3[k - 1] * t.z();
    }
    std::array<double, count> out{};
    constexpr auto exps = exponents();
    for (std::size_t k = 0; k < count; ++k) out[k] = p1[exps[k].a] * p2[exps[k].b] * p3[exps[k].c];
    return out;
  }
};

/// Index of the product of a degree-P and a degree-Q monomial in the degree P+Q basis.
template <int P, int Q>
constexpr std::size_t product_index(std::size_t i, std::size_t j) {
  constexpr auto ep = Monomials<P>::exponents();
  constexpr auto eq = Monomials<Q>::exponents();
  return Monomials<P + Q>::index(ep[i].a + eq[j].a, ep[i].b + eq[j].b);
}

}  // namespace detail

struct SoattoPrecompute {
  /// Coefficient of the k-th degree-2 monomial in G(t) and H(t).
  std::array<Matrix3d, 6> G;
  std::array<Vector3d, 6> H;
  Matrix3d S = Matrix3d::Zero();

  /// Adjugate of G(t) as a degree-4 matrix polynomial (15 terms).
  std::array<Matrix3d, 15> adjugate;
  /// det G(t), degree 6 (28 terms).
  std::array<double, 28> determinant{};
  /// adj(G(t)) H(t), degree 6 (28 terms).
  std::array<Vector3d, 28> numerator;
};

inline SoattoPrecompute soatto_precompute(const FlowField& flow) {
  validate_flow_field(flow, 6);
  SoattoPrecompute pre;
  for (auto& g : pre.G) g.setZero();
  for (auto& h : pre.H) h.setZero();

  constexpr auto quad = detail::Monomials<2>::exponents();
  for (std::size_t i = 0; i < flow.size(); ++i) {
    const double x = flow.points[i].x, y = flow.points[i].y;
    Eigen::Matrix<double, 2, 3> ja;  // J A(x)
    ja << 0.0, -1.0, y,
          1.0, 0.0, -x;
    Eigen::Matrix<double, 2, 3> b;
    b << -x * y, 1.0 + x * x, -y,
         -1.0 - y * y, x * y, x;
    const Matrix3d p = b.transpose() * ja;
    const Vector3d m_u = ja.transpose() * flow.flows[i].vec();

    pre.S.noalias() += m_u * m_u.transpose();
    for (std::size_t k = 0; k < 6; ++k) {
      // Selector S^{kl}: ones at (k,l) and (l,k).
      int idx[2];
      int n_idx = 0;
      if (quad[k].a) idx[n_idx++] = 0;
      if (quad[k].b) idx[n_idx++] = 1;
      if (quad[k].c) idx[n_idx++] = 2;
      const int r = idx[0];
      const int c = n_idx == 2 ? idx[1] : idx[0];
      if (r == c) {
        pre.G[k].noalias() += p.col(r) * p.col(r).transpose();
        pre.H[k] += p.col(r) * m_u(r);
      } else {
        pre.G[k].noalias() += p.col(r) * p.col(c).transpose() + p.col(c) * p.col(r).transpose();
        pre.H[k] += p.col(r) * m_u(c) + p.col(c) * m_u(r);
      }
    }
  }

  for (auto& a : pre.adjugate) a.setZero();
  for (std::size_t p = 0; p < 6; ++p) {
    for (std::size_t q = 0; q < 6; ++q) {
      const std::size_t k = detail::product_index<2, 2>(p, q);
      pre.adjugate[k].row(0) += pre.G[p].col(1).cross(pre.G[q].col(2)).transpose();
      pre.adjugate[k].row(1) += pre.G[p].col(2).cross(pre.G[q].col(0)).transpose();
      pre.adjugate[k].row(2) += pre.G[p].col(0).cross(pre.G[q].col(1)).transpose();
    }
  }
  for (auto& v : pre.numerator) v.setZero();
  for (std::size_t k = 0; k < 15; ++k) {
    for (std::size_t r = 0; r < 6; ++r) {
      const std::size_t m = detail::product_index<4, 2>(k, r);
      pre.determinant[m] += pre.adjugate[k].row(0).dot(pre.G[r].col(0));
      pre.numerator[m] += pre.adjugate[k] * pre.H[r];
    }
  }
  return pre;
}

inline Matrix3d soatto_G(const SoattoPrecompute& pre, const Vector3d& t) {
  const auto m = detail::Monomials<2>::evaluate(t);
  Matrix3d g = Matrix3d::Zero();
  for (std::size_t k = 0; k < 6; ++k) g += m[k] * pre.G[k];
  return g;
}

inline Vector3d soatto_H(const SoattoPrecompute& pre, const Vector3d& t) {
  const auto m = detail::Monomials<2>::evaluate(t);
  Vector3d h = Vector3d::Zero();
  for (std::size_t k = 0; k < 6; ++k) h += m[k] * pre.H[k];
  return h;
}

inline double soatto_determinant(const SoattoPrecompute& pre, const Vector3d& t) {
  const auto m = detail::Monomials<6>::evaluate(t);
  double det = 0.0;
  for (std::size_t k = 0; k < 28; ++k) det += m[k] * pre.determinant[k];
  return det;
}

/// omega_hat(t) = G(t)^{-1} H(t) from the rational form.
inline Vector3d soatto_omega(const SoattoPrecompute& pre, const Vector3d& t) {
  const auto m = detail::Monomials<6>::evaluate(t);
  double det = 0.0;
  Vector3d num = Vector3d::Zero();
  for (std::size_t k = 0; k < 28; ++k) {
    det += m[k] * pre.determinant[k];
    num += m[k] * pre.numerator[k];
  }
  const double g_norm = soatto_G(pre, t).norm();
  if (!(std::abs(det) >= 1e-12 * g_norm * g_norm * g_norm) || det == 0.0) {
    throw NearSingularError("soatto: G(t) is near singular");
  }
  return num / det;
}

inline double soatto_cost(const SoattoPrecompute& pre, const Vector3d& t) {
  const Vector3d omega = soatto_omega(pre, t);
  return t.dot(pre.S * t) - soatto_H(pre, t).dot(omega);
}

}  // namespace erl
