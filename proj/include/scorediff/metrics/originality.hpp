#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "scorediff/core/error.hpp"

namespace scorediff::metrics {

using Embedding = std::vector<double>;

struct OriginalityReport {
  double sigma_rho = 0;
  std::vector<double> per_class;
};

/// Per class: sqrt(sum_i ||f_i - mean||^2 / (N - 1)); sigma_rho sums them.
inline OriginalityReport originality(const std::vector<std::vector<Embedding>>& classes) {
  detail::require(!classes.empty(), "originality needs at least one class");
  OriginalityReport r;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const auto& members = classes[c];
    detail::require(members.size() >= 2, "class " + std::to_string(c) + " has fewer than two samples");
    const std::size_t d = members[0].size();
    std::vector<double> mu(d, 0.0);
    for (const auto& m : members) {
      detail::require_shape(m.size() == d, "embedding dimensions differ");
      for (std::size_t j = 0; j < d; ++j) mu[j] += m[j] / double(members.size());
    }
    double ss = 0;
    for (const auto& m : members)
      for (std::size_t j = 0; j < d; ++j) ss += (m[j] - mu[j]) * (m[j] - mu[j]);
    r.per_class.push_back(std::sqrt(ss / double(members.size() - 1)));
    r.sigma_rho += r.per_class.back();
  }
  return r;
}

inline double cosine(const Embedding& a, const Embedding& b) {
  detail::require_shape(a.size() == b.size(), "embedding dimensions differ");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return aa > 0 && bb > 0 ? ab / std::sqrt(aa * bb) : 0.0;
}

struct LabeledEmbedding {
  Embedding value;
  std::size_t label = 0;
};

/// One-shot classification by cosine similarity to one support embedding
/// per class; ties go to the lowest class index.
inline double recognizability(const std::vector<LabeledEmbedding>& queries, const std::vector<Embedding>& support) {
  detail::require(!support.empty(), "support set is empty");
  detail::require(!queries.empty(), "no queries to classify");
  std::size_t correct = 0;
  for (const auto& q : queries) {
    detail::require(q.label < support.size(), "query label " + std::to_string(q.label) + " has no support embedding");
    std::size_t best = 0;
    double best_sim = cosine(q.value, support[0]);
    for (std::size_t c = 1; c < support.size(); ++c) {
      const double s = cosine(q.value, support[c]);
      if (s > best_sim) {
        best_sim = s;
        best = c;
      }
    }
    correct += best == q.label;
  }
  return double(correct) / double(queries.size());
}

/// One point of the originality-vs-recognizability plot.
struct ModelPoint {
  std::string model;
  double originality = 0;      // mean per-class dispersion
  double recognizability = 0;
  std::vector<double> class_originality;
  std::vector<double> class_recognizability;
};

/// Plot-ready TSV: one "model" row per model, then its per-class rows.
inline std::string originality_table(const std::vector<ModelPoint>& points) {
  std::string out = "kind\tmodel\tclass\toriginality\trecognizability\n";
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  for (const auto& p : points) {
    out += "model\t" + p.model + "\t-\t" + num(p.originality) + "\t" + num(p.recognizability) + "\n";
    for (std::size_t c = 0; c < p.class_originality.size(); ++c)
      out += "class\t" + p.model + "\t" + std::to_string(c) + "\t" + num(p.class_originality[c]) + "\t" +
             num(c < p.class_recognizability.size() ? p.class_recognizability[c] : 0.0) + "\n";
  }
  return out;
}

}  // namespace scorediff::metrics
