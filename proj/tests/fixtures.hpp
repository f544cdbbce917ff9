// Fixtures shared by the unit suite and the acceptance runner: published
// table rows as synthetic evaluations and a rejection-sampling oracle for the
// attack search.
#ifndef VERISIEVE_TESTS_FIXTURES_HPP
#define VERISIEVE_TESTS_FIXTURES_HPP

#include <string>
#include <vector>

#include "support.hpp"
#include "verisieve/candidate.hpp"

namespace verisieve::testing {

struct TableRow {
  const char* label;
  double fn1;
  double fn2;
  double md;
};

// baseline generator rows
inline const std::vector<TableRow> kBaselineRows{
    {"a", 0.46275, 0.43165, 13.63909}, {"b", 0.60249, 0.45908, 13.84692},
    {"c", 0.70137, 0.69862, 18.30180}, {"d", 0.59348, 0.41899, 12.89496},
    {"e", 0.46434, 0.39975, 10.20973}};

// image-translation rows
inline const std::vector<TableRow> kTranslationRows{
    {"a", 0.562418, 0.473044, 11.098614}, {"b", 0.632138, 0.563717, 14.678981},
    {"c", 0.593215, 0.431901, 13.678930}, {"d", 0.588692, 0.355675, 13.722913},
    {"e", 0.473013, 0.451527, 12.545832}, {"f", 0.671785, 0.516654, 15.191716},
    {"g", 0.452741, 0.472176, 13.059429}, {"h", 0.716072, 0.667596, 21.947438}};

// gender-swapped rows
inline const std::vector<TableRow> kSwappedRows{{"a", 0.736005, 0.617757, 19.9956032},
                                                {"b", 0.682950, 0.596603, 18.196015},
                                                {"c", 0.747545, 0.632504, 19.905043}};

inline std::vector<CandidateEvaluation> as_evaluations(const std::vector<TableRow>& rows,
                                                       double tau = kDefaultThreshold) {
  std::vector<CandidateEvaluation> out;
  for (const auto& r : rows) {
    CandidateEvaluation e;
    e.candidate_label = r.label;
    e.fn_distances = {{"image1", r.fn1}, {"image2", r.fn2}};
    e.md = r.md;
    e.passes_all_anchors = r.fn1 < tau && r.fn2 < tau;
    e.passes_any_anchor = r.fn1 < tau || r.fn2 < tau;
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<std::string> labels_of(const std::vector<CandidateEvaluation>& evals) {
  std::vector<std::string> out;
  for (const auto& e : evals) out.push_back(e.candidate_label);
  return out;
}

/// Single anchor at the reference mean with identity covariance.
inline AttackSearchProblem centered_identity_problem(Eigen::Index d, std::uint64_t seed) {
  Rng rng(seed);
  const Vector mu = rng.gaussian(d);
  AttackSearchProblem p{.anchors = {mu},
                        .reference_model = CovarianceModelD(mu, Matrix::Identity(d, d), 0.0, 2)};
  p.seed = seed;
  return p;
}

/// Three nearby anchors in d = 16 with an anisotropic reference distribution
/// whose mean sits well away from the anchors.
inline AttackSearchProblem low_dimension_problem(std::uint64_t seed) {
  constexpr Eigen::Index d = 16;
  Rng rng(seed);
  const Vector center = rng.unit(d);
  std::vector<Vector> anchors;
  for (int i = 0; i < 3; ++i) anchors.push_back(center + 0.08 * rng.unit(d));
  const Vector mu = center + 20.0 * rng.unit(d);
  AttackSearchProblem p{.anchors = anchors,
                        .reference_model = CovarianceModelD(mu, random_spd(rng, d, 0.5, 2.0), 0.0, 100)};
  p.seed = seed;
  return p;
}

struct RejectionOracle {
  double best_objective = 0.0;
  std::size_t feasible = 0;
  std::size_t drawn = 0;
};

/// Uniform draws from the first anchor's ball, kept when inside every ball;
/// tracks the largest squared Mahalanobis distance among kept draws.
inline RejectionOracle rejection_oracle(const AttackSearchProblem& p, std::size_t feasible_target,
                                        std::uint64_t seed) {
  Rng rng(seed);
  const double r = p.radius();
  const auto d = p.reference_model.dimension();
  const auto& mu = p.reference_model.mean();
  RejectionOracle out;
  Vector x(d);
  while (out.feasible < feasible_target) {
    ++out.drawn;
    x = p.anchors.front() + (r * std::pow(rng.uniform(0.0, 1.0), 1.0 / double(d))) * rng.unit(d);
    bool inside = true;
    for (std::size_t k = 1; k < p.anchors.size() && inside; ++k) inside = (x - p.anchors[k]).norm() <= r;
    if (!inside) continue;
    ++out.feasible;
    out.best_objective = std::max(out.best_objective, p.reference_model.squared_norm(x - mu));
  }
  return out;
}

}  // namespace verisieve::testing

#endif  // VERISIEVE_TESTS_FIXTURES_HPP
