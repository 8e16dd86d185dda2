#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace ipb {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class RankDeficientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LeastSquaresFit {
  Vector coef;
  Vector residuals;
  double rss = 0.0;
};

// Least squares through a rank-revealing QR. Throws when the design
// has fewer independent columns than columns.
inline LeastSquaresFit least_squares(const Matrix& z, const Vector& y, const char* who = "least_squares") {
  if (z.rows() != y.size()) throw std::invalid_argument(std::string(who) + ": design and response sizes differ");
  if (z.rows() < z.cols())
    throw RankDeficientError(std::string(who) + ": fewer rows than columns (" + std::to_string(z.rows()) + " < " +
                             std::to_string(z.cols()) + ")");
  Eigen::ColPivHouseholderQR<Matrix> qr(z);
  qr.setThreshold(1e-10);
  if (qr.rank() < z.cols())
    throw RankDeficientError(std::string(who) + ": design matrix is rank deficient (rank " +
                             std::to_string(qr.rank()) + " of " + std::to_string(z.cols()) + ")");
  LeastSquaresFit fit;
  fit.coef = qr.solve(y);
  fit.residuals = y - z * fit.coef;
  fit.rss = fit.residuals.squaredNorm();
  return fit;
}

// Weighted least squares: minimizes sum w_i (y_i - z_i b)^2 with w_i >= 0.
inline LeastSquaresFit weighted_least_squares(const Matrix& z, const Vector& y, const Vector& w,
                                              const char* who = "weighted_least_squares") {
  const Vector sw = w.cwiseSqrt();
  LeastSquaresFit fit = least_squares(sw.asDiagonal() * z, sw.cwiseProduct(y), who);
  fit.residuals = y - z * fit.coef;
  fit.rss = fit.residuals.cwiseAbs2().dot(w);
  return fit;
}

}  // namespace ipb
