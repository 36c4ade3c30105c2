#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "humas/common.hpp"

namespace humas {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

struct LsddConfig {
  std::size_t max_centers = 200;
  // sigma candidates are these multiples of the median within-sample center distance
  std::vector<double> sigma_scales{0.25, 0.5, 1.0, 2.0, 4.0};
  std::vector<double> lambda_grid{1e-3, 1e-2, 1e-1, 1.0};
  int cv_folds = 5;
  std::uint64_t center_seed = 0;
  bool standardize = true;
  std::size_t min_points = 20;

  void validate() const {
    if (sigma_scales.empty() || lambda_grid.empty()) throw Error("lsdd: empty sigma or lambda grid");
    if (max_centers < 10) throw Error("lsdd: max_centers must be >= 10");
    if (cv_folds < 2) throw Error("lsdd: cv_folds must be >= 2");
    for (double s : sigma_scales)
      if (!(s > 0)) throw Error("lsdd: sigma scales must be positive");
    for (double l : lambda_grid)
      if (!(l > 0)) throw Error("lsdd: lambda grid must be positive");
  }
};

/// Least-squares density-difference two-sample statistic between u and v.
/// Construction standardizes, picks centers and selects (sigma, lambda) by
/// cross-validation; split scores reuse that selection.
class LsddTest {
 public:
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  LsddTest(std::span<const Point2> u, std::span<const Point2> v, const LsddConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    if (u.size() < cfg_.min_points || v.size() < cfg_.min_points)
      throw Error("lsdd: each sample needs at least " + std::to_string(cfg_.min_points) + " points");
    n_u_ = u.size();
    n_v_ = v.size();
    pool(u, v);
    pick_centers();
    distances();
    select();
    observed_ = score_labels(is_u_);
  }

  double statistic() const { return observed_; }
  double sigma() const { return sigma_; }
  double lambda() const { return lambda_; }
  std::size_t centers() const { return centers_.size(); }

  /// Score of an arbitrary split of the pooled points; `is_u` indexes pooled canonical order.
  double score_labels(const std::vector<std::uint8_t>& is_u) const {
    const auto b = static_cast<Eigen::Index>(centers_.size());
    Eigen::VectorXd su = Eigen::VectorXd::Zero(b), sv = Eigen::VectorXd::Zero(b);
    std::size_t nu = 0, nv = 0;
    for (std::size_t i = 0; i < pts_.size(); ++i) {
      if (is_u[i]) {
        su += k_.row(static_cast<Eigen::Index>(i)).transpose();
        ++nu;
      } else {
        sv += k_.row(static_cast<Eigen::Index>(i)).transpose();
        ++nv;
      }
    }
    Eigen::VectorXd h = su / static_cast<double>(nu) - sv / static_cast<double>(nv);
    Eigen::VectorXd theta = llt_.solve(h);
    const double s = 2.0 * h.dot(theta) - theta.dot(h_ * theta);
    return std::max(s, 0.0);
  }

  /// (1 - mu) nearest-rank percentile of m random re-splits preserving sample sizes.
  double threshold(double mu, int m, std::uint64_t seed) const {
    auto scores = permutation_scores(m, seed);
    return nearest_rank(scores, 1.0 - mu);
  }

  std::vector<double> permutation_scores(int m, std::uint64_t seed) const {
    if (m < 1) throw Error("lsdd: permutation count must be >= 1");
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> idx(pts_.size());
    std::vector<std::uint8_t> lab(pts_.size());
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(m));
    for (int r = 0; r < m; ++r) {
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      std::shuffle(idx.begin(), idx.end(), rng);
      std::fill(lab.begin(), lab.end(), std::uint8_t{0});
      for (std::size_t k = 0; k < n_u_; ++k) lab[idx[k]] = 1;
      out.push_back(score_labels(lab));
    }
    return out;
  }

  /// Nearest-rank percentile: the ceil(q * n)-th smallest value.
  static double nearest_rank(std::vector<double> values, double q) {
    if (values.empty()) throw Error("nearest_rank: empty sample");
    std::sort(values.begin(), values.end());
    auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size()) - 1e-9));
    rank = std::clamp<std::size_t>(rank, 1, values.size());
    return values[rank - 1];
  }

 private:
  void pool(std::span<const Point2> u, std::span<const Point2> v) {
    std::vector<Point2> all;
    std::vector<std::uint8_t> lab;
    all.reserve(n_u_ + n_v_);
    for (const auto& p : u) all.push_back(p), lab.push_back(1);
    for (const auto& p : v) all.push_back(p), lab.push_back(0);

    if (cfg_.standardize) {
      // per-set sums, then combined, so the result does not depend on argument order
      auto sums = [](std::span<const Point2> s) {
        double sx = 0, sy = 0;
        for (const auto& p : s) sx += p.x, sy += p.y;
        return std::pair{sx, sy};
      };
      auto [ux, uy] = sums(u);
      auto [vx, vy] = sums(v);
      const double n = static_cast<double>(n_u_ + n_v_);
      const double mx = (ux + vx) / n, my = (uy + vy) / n;
      auto sq = [&](std::span<const Point2> s) {
        double qx = 0, qy = 0;
        for (const auto& p : s) qx += (p.x - mx) * (p.x - mx), qy += (p.y - my) * (p.y - my);
        return std::pair{qx, qy};
      };
      auto [uqx, uqy] = sq(u);
      auto [vqx, vqy] = sq(v);
      double sx = std::sqrt((uqx + vqx) / n), sy = std::sqrt((uqy + vqy) / n);
      if (!(sx > 0)) sx = 1.0;
      if (!(sy > 0)) sy = 1.0;
      for (auto& p : all) p = Point2{(p.x - mx) / sx, (p.y - my) / sy};
    }

    std::vector<std::size_t> order(all.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (all[a].x != all[b].x) return all[a].x < all[b].x;
      if (all[a].y != all[b].y) return all[a].y < all[b].y;
      return lab[a] > lab[b];
    });
    pts_.reserve(all.size());
    is_u_.reserve(all.size());
    for (auto i : order) {
      pts_.push_back(all[i]);
      is_u_.push_back(lab[i]);
    }
  }

  void pick_centers() {
    const std::size_t n = pts_.size();
    std::vector<std::size_t> chosen;
    if (n <= cfg_.max_centers) {
      chosen.resize(n);
      std::iota(chosen.begin(), chosen.end(), std::size_t{0});
    } else {
      std::mt19937_64 rng(cfg_.center_seed);
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      for (std::size_t k = 0; k < cfg_.max_centers; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, n - 1);
        std::swap(idx[k], idx[pick(rng)]);
      }
      chosen.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cfg_.max_centers));
      std::sort(chosen.begin(), chosen.end());
    }
    for (auto i : chosen) {
      centers_.push_back(pts_[i]);
      center_is_u_.push_back(is_u_[i]);
    }
  }

  static double d2(const Point2& a, const Point2& b) {
    const double dx = a.x - b.x, dy = a.y - b.y;
    return dx * dx + dy * dy;
  }

  void distances() {
    const auto b = static_cast<Eigen::Index>(centers_.size());
    const auto n = static_cast<Eigen::Index>(pts_.size());
    cc_.resize(b, b);
    for (Eigen::Index l = 0; l < b; ++l)
      for (Eigen::Index k = 0; k < b; ++k) cc_(l, k) = d2(centers_[l], centers_[k]);
    pc_.resize(n, b);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index l = 0; l < b; ++l) pc_(i, l) = d2(pts_[i], centers_[l]);

    std::vector<double> same, all;
    for (Eigen::Index l = 0; l < b; ++l)
      for (Eigen::Index k = l + 1; k < b; ++k) {
        const double d = std::sqrt(cc_(l, k));
        all.push_back(d);
        if (center_is_u_[l] == center_is_u_[k]) same.push_back(d);
      }
    auto median = [](std::vector<double>& v) {
      if (v.empty()) return 0.0;
      auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
      std::nth_element(v.begin(), mid, v.end());
      double hi = *mid;
      if (v.size() % 2 == 1) return hi;
      double lo = *std::max_element(v.begin(), mid);
      return 0.5 * (lo + hi);
    };
    median_ = median(same);
    if (!(median_ > 0)) median_ = median(all);
    if (!(median_ > 0)) median_ = 1.0;
  }

  RowMatrix kernel(double sigma) const {
    const double inv = 1.0 / (2.0 * sigma * sigma);
    return (-pc_.array() * inv).exp().matrix();
  }

  Eigen::MatrixXd gram(double sigma) const {
    const double inv = 1.0 / (4.0 * sigma * sigma);
    return (std::numbers::pi * sigma * sigma) * (-cc_.array() * inv).exp().matrix();
  }

  /// Factorizes H + lambda I, escalating lambda x10 up to 3 times on failure.
  static bool factor(const Eigen::MatrixXd& h, double& lambda, Eigen::LLT<Eigen::MatrixXd>& llt) {
    const auto b = h.rows();
    for (int attempt = 0; attempt <= 3; ++attempt) {
      llt.compute(h + lambda * Eigen::MatrixXd::Identity(b, b));
      if (llt.info() == Eigen::Success) return true;
      lambda *= 10.0;
    }
    return false;
  }

  void select() {
    const auto b = static_cast<Eigen::Index>(centers_.size());
    const int folds = cfg_.cv_folds;
    // fold = rank within own sample (canonical order) mod folds
    std::vector<int> fold(pts_.size());
    std::size_t ru = 0, rv = 0;
    for (std::size_t i = 0; i < pts_.size(); ++i)
      fold[i] = static_cast<int>((is_u_[i] ? ru++ : rv++) % static_cast<std::size_t>(folds));

    double best_j = std::numeric_limits<double>::infinity();
    bool found = false;
    for (double scale : cfg_.sigma_scales) {
      const double sigma = scale * median_;
      RowMatrix k = kernel(sigma);
      Eigen::MatrixXd h = gram(sigma);
      // group sums per (fold, sample)
      std::vector<Eigen::VectorXd> gu(folds, Eigen::VectorXd::Zero(b)), gv(folds, Eigen::VectorXd::Zero(b));
      std::vector<double> cu(folds, 0.0), cv(folds, 0.0);
      for (std::size_t i = 0; i < pts_.size(); ++i) {
        const auto r = k.row(static_cast<Eigen::Index>(i)).transpose();
        if (is_u_[i]) gu[fold[i]] += r, cu[fold[i]] += 1;
        else gv[fold[i]] += r, cv[fold[i]] += 1;
      }
      Eigen::VectorXd tu = Eigen::VectorXd::Zero(b), tv = Eigen::VectorXd::Zero(b);
      double ntu = 0, ntv = 0;
      for (int f = 0; f < folds; ++f) tu += gu[f], tv += gv[f], ntu += cu[f], ntv += cv[f];

      for (double lambda0 : cfg_.lambda_grid) {
        double lambda = lambda0;
        Eigen::LLT<Eigen::MatrixXd> llt;
        if (!factor(h, lambda, llt)) continue;
        double j = 0.0;
        for (int f = 0; f < folds; ++f) {
          if (cu[f] == 0 || cv[f] == 0 || ntu - cu[f] == 0 || ntv - cv[f] == 0) continue;
          Eigen::VectorXd htr = (tu - gu[f]) / (ntu - cu[f]) - (tv - gv[f]) / (ntv - cv[f]);
          Eigen::VectorXd hte = gu[f] / cu[f] - gv[f] / cv[f];
          Eigen::VectorXd th = llt.solve(htr);
          j += th.dot(h * th) - 2.0 * th.dot(hte);
        }
        if (j < best_j) {
          best_j = j;
          sigma_ = sigma;
          lambda_ = lambda;
          found = true;
        }
      }
    }
    if (!found) throw Error("lsdd: H + lambda I could not be factorized for any candidate");
    k_ = kernel(sigma_);
    h_ = gram(sigma_);
    double lambda = lambda_;
    if (!factor(h_, lambda, llt_)) throw Error("lsdd: final factorization failed");
    lambda_ = lambda;
  }

  LsddConfig cfg_;
  std::size_t n_u_ = 0, n_v_ = 0;
  std::vector<Point2> pts_;
  std::vector<std::uint8_t> is_u_;
  std::vector<Point2> centers_;
  std::vector<std::uint8_t> center_is_u_;
  Eigen::MatrixXd cc_;
  RowMatrix pc_;
  double median_ = 1.0;
  double sigma_ = 1.0;
  double lambda_ = 1e-3;
  RowMatrix k_;
  Eigen::MatrixXd h_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double observed_ = 0.0;
};

inline double lsdd_estimate(std::span<const Point2> u, std::span<const Point2> v, const LsddConfig& cfg = {}) {
  return LsddTest(u, v, cfg).statistic();
}

inline double permutation_threshold(std::span<const Point2> ref, std::span<const Point2> test, const LsddConfig& cfg,
                                    double mu, int m, std::uint64_t rng_seed) {
  return LsddTest(ref, test, cfg).threshold(mu, m, rng_seed);
}

}  // namespace humas
