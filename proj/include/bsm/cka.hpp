#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bsm/error.hpp"

namespace bsm {

// Per-model activation matrices aligned on a shared prompt list. Each layer
// is n_samples x d_layer; widths may differ per layer and per model.
struct ActivationSet {
  std::string model_id;
  std::vector<std::string> prompt_ids;
  std::vector<Eigen::MatrixXd> layers;

  void validate() const {
    const auto n = static_cast<Eigen::Index>(prompt_ids.size());
    if (n < 2) throw DataError("activations for '" + model_id + "': need at least 2 samples");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (layers[l].rows() != n)
        throw DataError("activations for '" + model_id + "': layer " + std::to_string(l) +
                        " has " + std::to_string(layers[l].rows()) + " rows, expected " +
                        std::to_string(n));
      if (!layers[l].allFinite())
        throw DataError("activations for '" + model_id + "': layer " + std::to_string(l) +
                        " contains non-finite entries");
    }
  }

  // Rows restricted to the given prompt_ids, in this set's row order.
  ActivationSet filter_rows(const std::vector<std::string>& keep) const {
    std::vector<Eigen::Index> rows;
    std::vector<std::string> kept_ids;
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(prompt_ids.size()); ++i) {
      for (const auto& k : keep) {
        if (prompt_ids[static_cast<std::size_t>(i)] == k) {
          rows.push_back(i);
          kept_ids.push_back(k);
          break;
        }
      }
    }
    ActivationSet out;
    out.model_id = model_id;
    out.prompt_ids = std::move(kept_ids);
    out.layers.reserve(layers.size());
    for (const auto& L : layers) {
      Eigen::MatrixXd M(static_cast<Eigen::Index>(rows.size()), L.cols());
      for (Eigen::Index r = 0; r < M.rows(); ++r)
        M.row(r) = L.row(rows[static_cast<std::size_t>(r)]);
      out.layers.push_back(std::move(M));
    }
    return out;
  }
};

// HKH with H = I - (1/n) 1 1^T. Output rows and columns each sum to zero.
inline Eigen::MatrixXd center_gram(const Eigen::MatrixXd& K) {
  if (K.rows() != K.cols()) throw DataError("center_gram: matrix must be square");
  if (K.rows() < 2) throw DataError("center_gram: need n >= 2");
  const Eigen::VectorXd row_means = K.rowwise().mean();
  const Eigen::VectorXd col_means = K.colwise().mean();
  const double grand = K.mean();
  Eigen::MatrixXd C = K;
  C.colwise() -= row_means;
  C.rowwise() -= col_means.transpose();
  C.array() += grand;
  return C;
}

namespace detail {

inline Eigen::MatrixXd column_centered(const Eigen::MatrixXd& X) {
  Eigen::MatrixXd C = X;
  C.rowwise() -= X.colwise().mean();
  return C;
}

}  // namespace detail

// Linear CKA via the p x q cross-covariance (Frobenius) form:
//   ||Yc^T Xc||_F^2 / (||Xc^T Xc||_F ||Yc^T Yc||_F)
inline std::optional<double> linear_cka_feature(const Eigen::MatrixXd& X,
                                                const Eigen::MatrixXd& Y) {
  const Eigen::MatrixXd Xc = detail::column_centered(X);
  const Eigen::MatrixXd Yc = detail::column_centered(Y);
  const double cross = (Yc.transpose() * Xc).squaredNorm();
  const double nx = (Xc.transpose() * Xc).norm();
  const double ny = (Yc.transpose() * Yc).norm();
  if (nx <= 0.0 || ny <= 0.0) return std::nullopt;  // constant rows: undefined
  return std::clamp(cross / (nx * ny), 0.0, 1.0);
}

// Linear CKA via explicit centered Gram matrices and the biased HSIC
// estimator: <Kc, Lc>_F / sqrt(<Kc, Kc>_F <Lc, Lc>_F).
inline std::optional<double> linear_cka_gram(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) {
  const Eigen::MatrixXd Kc = center_gram(X * X.transpose());
  const Eigen::MatrixXd Lc = center_gram(Y * Y.transpose());
  const double hsic_kl = Kc.cwiseProduct(Lc).sum();
  const double hsic_kk = Kc.squaredNorm();
  const double hsic_ll = Lc.squaredNorm();
  if (hsic_kk <= 0.0 || hsic_ll <= 0.0) return std::nullopt;
  return std::clamp(hsic_kl / std::sqrt(hsic_kk * hsic_ll), 0.0, 1.0);
}

// Linear CKA between two activation matrices with aligned sample rows.
// Invariant to orthogonal transforms and isotropic scaling of either side.
// Picks the cheaper of the Frobenius and Gram formulations; both agree.
inline std::optional<double> linear_cka(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) {
  if (X.rows() != Y.rows())
    throw DataError("linear_cka: sample counts differ (" + std::to_string(X.rows()) + " vs " +
                    std::to_string(Y.rows()) + ")");
  if (X.rows() < 2) throw DataError("linear_cka: need n >= 2 samples");
  const double n2 = static_cast<double>(X.rows()) * static_cast<double>(X.rows());
  if (static_cast<double>(X.cols()) * static_cast<double>(Y.cols()) < n2)
    return linear_cka_feature(X, Y);
  return linear_cka_gram(X, Y);
}

namespace detail {

inline void check_prompt_alignment(const ActivationSet& a, const ActivationSet& b,
                                   const char* op) {
  if (a.prompt_ids != b.prompt_ids)
    throw DataError(std::string(op) + ": prompt lists differ between '" + a.model_id +
                    "' and '" + b.model_id + "'");
}

}  // namespace detail

// All layer-pair CKA values; entry (i, j) compares a.layers[i] with
// b.layers[j]. Degenerate pairs are absent.
inline std::vector<std::vector<std::optional<double>>> cka_matrix(const ActivationSet& a,
                                                                  const ActivationSet& b) {
  detail::check_prompt_alignment(a, b, "cka_matrix");
  std::vector<std::vector<std::optional<double>>> m(a.layers.size());
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    m[i].resize(b.layers.size());
    for (std::size_t j = 0; j < b.layers.size(); ++j)
      m[i][j] = linear_cka(a.layers[i], b.layers[j]);
  }
  return m;
}

// Mean CKA over matched layers. Layer-count mismatch is an error, never a
// silent truncation; a degenerate layer makes the aggregate absent.
inline std::optional<double> diag_cka(const ActivationSet& a, const ActivationSet& b) {
  detail::check_prompt_alignment(a, b, "diag_cka");
  if (a.layers.size() != b.layers.size())
    throw DataError("diag_cka: layer counts differ (" + std::to_string(a.layers.size()) +
                    " vs " + std::to_string(b.layers.size()) + "); use full_cka across depths");
  if (a.layers.empty()) throw DataError("diag_cka: no layers");
  double sum = 0;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    auto v = linear_cka(a.layers[l], b.layers[l]);
    if (!v) return std::nullopt;
    sum += *v;
  }
  return sum / static_cast<double>(a.layers.size());
}

// Mean CKA over the full cross product of layer pairs; the sanctioned
// cross-depth comparison.
inline std::optional<double> full_cka(const ActivationSet& a, const ActivationSet& b) {
  detail::check_prompt_alignment(a, b, "full_cka");
  if (a.layers.empty() || b.layers.empty()) throw DataError("full_cka: no layers");
  double sum = 0;
  for (const auto& La : a.layers) {
    for (const auto& Lb : b.layers) {
      auto v = linear_cka(La, Lb);
      if (!v) return std::nullopt;
      sum += *v;
    }
  }
  return sum / static_cast<double>(a.layers.size() * b.layers.size());
}

}  // namespace bsm
