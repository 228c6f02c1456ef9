#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "scorediff/audio/mel.hpp"
#include "scorediff/core/rng.hpp"
#include "scorediff/metrics/stats.hpp"

namespace scorediff::metrics {

struct Gaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Mean and sample covariance of row vectors.
inline Gaussian fit_gaussian(const std::vector<std::vector<double>>& rows) {
  detail::require(rows.size() >= 2, "a Gaussian fit needs at least two embeddings");
  const std::size_t d = rows[0].size();
  Eigen::MatrixXd X(rows.size(), d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    detail::require_shape(rows[i].size() == d, "embedding dimensions differ");
    for (std::size_t j = 0; j < d; ++j) X(Eigen::Index(i), Eigen::Index(j)) = rows[i][j];
  }
  Gaussian g;
  g.mean = X.colwise().mean().transpose();
  const Eigen::MatrixXd C = X.rowwise() - g.mean.transpose();
  g.cov = C.transpose() * C / double(rows.size() - 1);
  return g;
}

/// Square root of a symmetric PSD matrix; negative eigenvalues clamp to 0.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (a + a.transpose()));
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

/// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}). The trace of the cross
/// term uses the similar symmetric matrix S1^{1/2} S2 S1^{1/2}.
inline double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& cov1, const Eigen::VectorXd& mu2,
                               const Eigen::MatrixXd& cov2) {
  const auto d = mu1.size();
  detail::require_shape(mu2.size() == d && cov1.rows() == d && cov1.cols() == d && cov2.rows() == d && cov2.cols() == d,
                        "Frechet distance dimension mismatch");
  const Eigen::MatrixXd s1 = 0.5 * (cov1 + cov1.transpose());
  const Eigen::MatrixXd s2 = 0.5 * (cov2 + cov2.transpose());
  const Eigen::MatrixXd r1 = psd_sqrt(s1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r1 * s2 * r1, Eigen::EigenvaluesOnly);
  const double cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double fd = (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() - 2 * cross;
  return std::max(fd, 0.0);
}

inline double frechet_distance(const Gaussian& a, const Gaussian& b) { return frechet_distance(a.mean, a.cov, b.mean, b.cov); }

struct KlIs {
  double kl = 0;
  double is = 1;
};

/// kl = KL(mean ref || mean gen); is = exp(mean_i KL(p_i || mean gen)).
inline KlIs kl_and_is(const std::vector<std::vector<double>>& gen, const std::vector<std::vector<double>>& ref) {
  constexpr double eps = 1e-10;
  detail::require(!gen.empty() && !ref.empty(), "class probabilities must be non-empty");
  const std::size_t K = gen[0].size();
  detail::require(K >= 2, "at least two classes required");
  auto marginal = [&](const std::vector<std::vector<double>>& rows) {
    std::vector<double> m(K, 0.0);
    for (const auto& r : rows) {
      detail::require_shape(r.size() == K, "class count differs between rows");
      double s = 0;
      for (double v : r) {
        detail::require(v >= 0 && std::isfinite(v), "class probabilities must be finite and non-negative");
        s += v;
      }
      detail::require(std::abs(s - 1.0) <= 1e-6, "class probability rows must sum to 1");
      for (std::size_t k = 0; k < K; ++k) m[k] += r[k] / double(rows.size());
    }
    return m;
  };
  auto kl = [&](const std::vector<double>& p, const std::vector<double>& q) {
    double s = 0;
    for (std::size_t k = 0; k < K; ++k) s += (p[k] + eps) * std::log((p[k] + eps) / (q[k] + eps));
    return s;
  };
  const auto mg = marginal(gen), mr = marginal(ref);
  KlIs out;
  out.kl = std::max(0.0, kl(mr, mg));
  double acc = 0;
  for (const auto& r : gen) acc += kl(r, mg);
  out.is = std::exp(acc / double(gen.size()));
  return out;
}

/// Stand-in for a pretrained audio embedding/classifier: per-band means
/// and standard deviations of the log-mel over time, and a fixed seeded
/// linear softmax classifier over those statistics.
class ToyAudioEmbedder {
 public:
  explicit ToyAudioEmbedder(std::size_t bands = 16, std::size_t classes = 10, std::uint64_t seed = 23)
      : bands_(bands), classes_(classes), w_(classes * 2 * bands) {
    Rng rng(seed);
    for (auto& v : w_) v = rng.normal() / std::sqrt(double(2 * bands));
  }

  std::size_t dim() const { return 2 * bands_; }

  std::vector<double> embed(const MelSpectrogram& mel) const {
    detail::require(mel.frames >= 1 && mel.mel_bins >= bands_, "mel too small to embed");
    std::vector<double> out(2 * bands_, 0.0);
    for (std::size_t b = 0; b < bands_; ++b) {
      const std::size_t lo = b * mel.mel_bins / bands_, hi = (b + 1) * mel.mel_bins / bands_;
      std::vector<double> per_frame(mel.frames, 0.0);
      for (std::size_t t = 0; t < mel.frames; ++t) {
        for (std::size_t m = lo; m < hi; ++m) per_frame[t] += mel.at(t, m);
        per_frame[t] /= double(hi - lo);
      }
      out[b] = mean(per_frame);
      out[bands_ + b] = sample_std(per_frame).value_or(0.0);
    }
    return out;
  }

  std::vector<double> class_probabilities(const MelSpectrogram& mel) const {
    const auto e = embed(mel);
    std::vector<double> logits(classes_, 0.0);
    for (std::size_t k = 0; k < classes_; ++k)
      for (std::size_t j = 0; j < e.size(); ++j) logits[k] += w_[k * e.size() + j] * e[j] * 0.1;
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (auto& l : logits) z += (l = std::exp(l - m));
    for (auto& l : logits) l /= z;
    return logits;
  }

 private:
  std::size_t bands_, classes_;
  std::vector<double> w_;
};

struct QualityReport {
  double fad = 0, kl = 0, is = 1;
};

inline QualityReport quality_report(const std::vector<MelSpectrogram>& gen, const std::vector<MelSpectrogram>& ref,
                                    const ToyAudioEmbedder& emb = ToyAudioEmbedder()) {
  std::vector<std::vector<double>> eg, er, pg, pr;
  for (const auto& m : gen) {
    eg.push_back(emb.embed(m));
    pg.push_back(emb.class_probabilities(m));
  }
  for (const auto& m : ref) {
    er.push_back(emb.embed(m));
    pr.push_back(emb.class_probabilities(m));
  }
  QualityReport q;
  q.fad = frechet_distance(fit_gaussian(eg), fit_gaussian(er));
  const auto ki = kl_and_is(pg, pr);
  q.kl = ki.kl;
  q.is = ki.is;
  return q;
}

}  // namespace scorediff::metrics
