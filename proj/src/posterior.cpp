#include "tvmagi/posterior.hpp"

#include <cmath>
#include <limits>

#include "tvmagi/errors.hpp"

namespace tvmagi {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;
}

Posterior::Posterior(PosteriorSpec spec) : spec_(std::move(spec)) {
  const OdeModel& m = spec_.model;
  d_ = m.dim_x;
  p_ = m.dim_theta;
  q_ = m.dim_psi;
  n_ = static_cast<int>(spec_.grid.size());
  if (n_ < 2) throw ConfigError("posterior: grid needs at least two points");
  theta_cols_ = spec_.theta_mode == ThetaMode::Grid ? n_ : 1;
  dim_ = d_ * n_ + p_ * theta_cols_ + q_ + d_;

  if (static_cast<int>(spec_.x_gram.size()) != d_)
    throw ConfigError("posterior: need one state kernel bundle per component");
  if (spec_.x_mean.rows() != d_ || spec_.x_mean.cols() != n_)
    throw ConfigError("posterior: x_mean must be dim_x by grid size");
  for (const auto& b : spec_.x_gram) {
    if (!b || b->grid.size() != n_ || (b->grid - spec_.grid).cwiseAbs().maxCoeff() > 1e-12)
      throw ConfigError("posterior: state kernel bundle grid mismatch");
  }
  if (spec_.theta_prior && spec_.theta_mode == ThetaMode::Constant)
    throw ConfigError("posterior: theta prior requires grid-valued theta");
  if (spec_.theta_prior) {
    if (static_cast<int>(spec_.theta_gram.size()) != p_)
      throw ConfigError("posterior: need one parameter kernel bundle per theta");
    if (spec_.theta_mean.rows() != p_ || spec_.theta_mean.cols() != n_)
      throw ConfigError("posterior: theta_mean must be dim_theta by grid size");
    for (const auto& b : spec_.theta_gram) {
      if (!b || b->grid.size() != n_ || (b->grid - spec_.grid).cwiseAbs().maxCoeff() > 1e-12)
        throw ConfigError("posterior: parameter kernel bundle grid mismatch");
    }
  }
  if (static_cast<int>(m.psi_positive.size()) != q_)
    throw ConfigError("posterior: psi_positive flags missing");
  if (static_cast<int>(spec_.obs.times.size()) != d_)
    throw ConfigError("posterior: observation set must have one series per component");

  obs_idx_.resize(d_);
  for (int c = 0; c < d_; c++) {
    const auto& tv = spec_.obs.times[c];
    if (tv.size() != spec_.obs.values[c].size())
      throw ConfigError("posterior: observation times/values length mismatch");
    obs_idx_[c].reserve(tv.size());
    for (int i = 0; i < tv.size(); i++) {
      double tol = 1e-9 * std::max(1.0, std::abs(tv[i]));
      int hit = -1;
      for (int g = 0; g < n_; g++) {
        if (std::abs(spec_.grid[g] - tv[i]) <= tol) {
          hit = g;
          break;
        }
      }
      if (hit < 0) throw ConfigError("posterior: observation time not on the grid");
      obs_idx_[c].push_back(hit);
    }
  }

  for (int d = 0; d < d_; d++) {
    part2_const_ += 0.5 * (n_ * kLog2Pi + spec_.x_gram[d]->logdet_k);
    part4_const_ += 0.5 * (n_ * kLog2Pi + spec_.x_gram[d]->logdet_cond);
  }
  if (spec_.theta_prior)
    for (int p = 0; p < p_; p++)
      part1_const_ += 0.5 * (n_ * kLog2Pi + spec_.theta_gram[p]->logdet_k);

  f_.resize(n_, d_);
  m_.resize(n_, d_);
  h_.resize(n_, d_);
  ax_.resize(n_, d_);
  at_.resize(n_, std::max(p_, 1));
  jx_.resize(d_, d_);
  jth_.resize(d_, std::max(p_, 1));
  jps_.resize(d_, std::max(q_, 1));
  xi_.resize(d_);
  thi_.resize(p_);
  hi_.resize(d_);
  fi_.resize(d_);
  psi_nat_.resize(q_);
  sigma2_.resize(d_);
  cx_.resize(n_);
  gthp_.resize(std::max(p_, 1));
}

double Posterior::eval(const Eigen::VectorXd& v, Eigen::VectorXd* grad,
                       PosteriorBreakdown* parts) {
  const OdeModel& mdl = spec_.model;
  Eigen::Map<const Eigen::MatrixXd> Xn(v.data(), n_, d_);
  Eigen::Map<const Eigen::MatrixXd> Tn(v.data() + theta_offset(), theta_cols_, p_);
  // note Tn is (theta_cols x p): column p holds theta_p over the grid

  for (int i = 0; i < q_; i++) {
    double raw = v[psi_offset() + i];
    psi_nat_[i] = mdl.psi_positive[i] ? std::exp(raw) : raw;
  }
  const double floor2 = spec_.sigma_floor * spec_.sigma_floor;
  for (int d = 0; d < d_; d++) {
    double u = v[sigma_offset() + d];
    sigma2_[d] = std::exp(2.0 * u) + floor2;
  }

  // part2: GP prior of the states
  double part2 = part2_const_;
  for (int d = 0; d < d_; d++) {
    cx_ = Xn.col(d) - spec_.x_mean.row(d).transpose();
    ax_.col(d) = spec_.x_gram[d]->chol_k.solve(cx_);
    part2 += 0.5 * cx_.dot(ax_.col(d));
  }

  // part1: GP prior of the parameters
  double part1 = 0.0;
  if (spec_.theta_prior) {
    part1 = part1_const_;
    for (int p = 0; p < p_; p++) {
      cx_ = Tn.col(p) - spec_.theta_mean.row(p).transpose();
      at_.col(p) = spec_.theta_gram[p]->chol_k.solve(cx_);
      part1 += 0.5 * cx_.dot(at_.col(p));
    }
  }

  // part3: observation likelihood
  double part3 = 0.0;
  for (int d = 0; d < d_; d++) {
    const auto& idx = obs_idx_[d];
    if (idx.empty()) continue;
    double sse = 0.0;
    for (size_t k = 0; k < idx.size(); k++) {
      double r = Xn(idx[k], d) - spec_.obs.values[d][static_cast<int>(k)];
      sse += r * r;
    }
    part3 += 0.5 * (idx.size() * (kLog2Pi + std::log(sigma2_[d])) + sse / sigma2_[d]);
  }

  // part4: ODE residual under the conditional derivative law
  for (int i = 0; i < n_; i++) {
    xi_ = Xn.row(i).transpose();
    if (theta_cols_ == n_)
      thi_ = Tn.row(i).transpose();
    else
      thi_ = Tn.row(0).transpose();
    mdl.f(xi_, thi_, psi_nat_, spec_.grid[i], fi_);
    f_.row(i) = fi_.transpose();
  }
  double part4 = part4_const_;
  for (int d = 0; d < d_; d++) {
    cx_ = Xn.col(d) - spec_.x_mean.row(d).transpose();
    m_.col(d).noalias() = spec_.x_gram[d]->deriv_gain * cx_;
    m_.col(d) = f_.col(d) - m_.col(d);
    h_.col(d) = spec_.x_gram[d]->chol_cond.solve(m_.col(d));
    part4 += 0.5 * m_.col(d).dot(h_.col(d));
  }

  double total = part1 + part2 + part3 + part4;
  if (parts) {
    parts->part1_theta_prior = part1;
    parts->part2_x_prior = part2;
    parts->part3_obs = part3;
    parts->part4_manifold = part4;
    parts->total = total;
  }
  if (!grad) return total;

  grad->setZero(dim_);
  Eigen::Map<Eigen::MatrixXd> gX(grad->data(), n_, d_);
  Eigen::Map<Eigen::MatrixXd> gT(grad->data() + theta_offset(), theta_cols_, p_);

  // part2
  gX += ax_;
  // part1
  if (spec_.theta_prior) gT += at_.leftCols(p_);
  // part3
  for (int d = 0; d < d_; d++) {
    const auto& idx = obs_idx_[d];
    if (idx.empty()) continue;
    double sse = 0.0;
    for (size_t k = 0; k < idx.size(); k++) {
      double r = Xn(idx[k], d) - spec_.obs.values[d][static_cast<int>(k)];
      sse += r * r;
      gX(idx[k], d) += r / sigma2_[d];
    }
    double u = v[sigma_offset() + d];
    (*grad)[sigma_offset() + d] =
        (static_cast<double>(idx.size()) - sse / sigma2_[d]) * std::exp(2.0 * u) / sigma2_[d];
  }
  // part4: direct dependence through f plus the conditional-mean pullback
  for (int d = 0; d < d_; d++)
    gX.col(d).noalias() -= spec_.x_gram[d]->deriv_gain.transpose() * h_.col(d);
  for (int i = 0; i < n_; i++) {
    xi_ = Xn.row(i).transpose();
    if (theta_cols_ == n_)
      thi_ = Tn.row(i).transpose();
    else
      thi_ = Tn.row(0).transpose();
    mdl.jac(xi_, thi_, psi_nat_, spec_.grid[i], jx_, jth_, jps_);
    hi_ = h_.row(i).transpose();
    fi_.noalias() = jx_.transpose() * hi_;
    gX.row(i) += fi_.transpose();
    if (p_ > 0) {
      gthp_.noalias() = jth_.transpose() * hi_;
      gT.row(theta_cols_ == n_ ? i : 0) += gthp_.head(p_).transpose();
    }
    for (int qq = 0; qq < q_; qq++)
      (*grad)[psi_offset() + qq] += jps_.col(qq).dot(hi_);
  }
  // chain through the psi reparameterization
  for (int i = 0; i < q_; i++)
    if (mdl.psi_positive[i]) (*grad)[psi_offset() + i] *= psi_nat_[i];

  return total;
}

double Posterior::value_grad(const Eigen::VectorXd& v, Eigen::VectorXd& grad) {
  if (v.size() != dim_) throw DomainError("posterior: free vector has wrong length");
  double val = eval(v, &grad, nullptr);
  if (!std::isfinite(val) || !grad.allFinite()) {
    grad.setZero(dim_);
    return std::numeric_limits<double>::infinity();
  }
  return val;
}

double Posterior::value(const Eigen::VectorXd& v) {
  if (v.size() != dim_) throw DomainError("posterior: free vector has wrong length");
  double val = eval(v, nullptr, nullptr);
  return std::isfinite(val) ? val : std::numeric_limits<double>::infinity();
}

PosteriorBreakdown Posterior::breakdown(const Eigen::VectorXd& v) {
  if (v.size() != dim_) throw DomainError("posterior: free vector has wrong length");
  PosteriorBreakdown parts;
  eval(v, nullptr, &parts);
  if (!std::isfinite(parts.part1_theta_prior))
    throw NonFiniteError("posterior: theta prior term non-finite");
  if (!std::isfinite(parts.part2_x_prior))
    throw NonFiniteError("posterior: state prior term non-finite");
  if (!std::isfinite(parts.part3_obs))
    throw NonFiniteError("posterior: observation term non-finite");
  if (!std::isfinite(parts.part4_manifold))
    throw NonFiniteError("posterior: manifold term non-finite");
  return parts;
}

Eigen::VectorXd Posterior::pack(const InferenceState& st) const {
  if (st.x.rows() != d_ || st.x.cols() != n_)
    throw DomainError("posterior pack: x shape mismatch");
  if (st.theta.rows() != p_ || st.theta.cols() != theta_cols_)
    throw DomainError("posterior pack: theta shape mismatch");
  if (st.psi.size() != q_ || st.sigma.size() != d_)
    throw DomainError("posterior pack: psi/sigma length mismatch");
  Eigen::VectorXd v(dim_);
  Eigen::Map<Eigen::MatrixXd>(v.data(), n_, d_) = st.x.transpose();
  Eigen::Map<Eigen::MatrixXd>(v.data() + theta_offset(), theta_cols_, p_) = st.theta.transpose();
  for (int i = 0; i < q_; i++) {
    if (spec_.model.psi_positive[i]) {
      if (!(st.psi[i] > 0.0)) throw DomainError("posterior pack: psi must be positive");
      v[psi_offset() + i] = std::log(st.psi[i]);
    } else {
      v[psi_offset() + i] = st.psi[i];
    }
  }
  const double floor2 = spec_.sigma_floor * spec_.sigma_floor;
  for (int d = 0; d < d_; d++) {
    double s2 = st.sigma[d] * st.sigma[d];
    double inner = std::max(s2 - floor2, 1e-300);
    v[sigma_offset() + d] = 0.5 * std::log(inner);
  }
  return v;
}

InferenceState Posterior::unpack(const Eigen::VectorXd& v) const {
  if (v.size() != dim_) throw DomainError("posterior unpack: free vector has wrong length");
  InferenceState st;
  st.x = Eigen::Map<const Eigen::MatrixXd>(v.data(), n_, d_).transpose();
  st.theta =
      Eigen::Map<const Eigen::MatrixXd>(v.data() + theta_offset(), theta_cols_, p_).transpose();
  st.psi.resize(q_);
  for (int i = 0; i < q_; i++)
    st.psi[i] = spec_.model.psi_positive[i] ? std::exp(v[psi_offset() + i]) : v[psi_offset() + i];
  st.sigma.resize(d_);
  const double floor2 = spec_.sigma_floor * spec_.sigma_floor;
  for (int d = 0; d < d_; d++)
    st.sigma[d] = std::sqrt(std::exp(2.0 * v[sigma_offset() + d]) + floor2);
  return st;
}

Objective posterior_objective(std::shared_ptr<Posterior> post) {
  return [post](const Eigen::VectorXd& v, Eigen::VectorXd& g) { return post->value_grad(v, g); };
}

}  // namespace tvmagi
