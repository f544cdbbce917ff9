#ifndef VERISIEVE_CANDIDATE_HPP
#define VERISIEVE_CANDIDATE_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "verisieve/embedding.hpp"
#include "verisieve/gallery.hpp"

namespace verisieve {

using CovarianceModelD = CovarianceModel<double>;

/// One row of a candidate report: distance to each user anchor image and the
/// candidate's Mahalanobis distance to the user's embedding set.
struct CandidateEvaluation {
  std::string candidate_label;
  std::vector<std::pair<std::string, double>> fn_distances;
  double md = 0.0;
  std::optional<double> md_mean_pairwise;
  bool passes_all_anchors = false;
  bool passes_any_anchor = false;

  double max_fn() const;
  friend bool operator==(const CandidateEvaluation&, const CandidateEvaluation&) = default;
};

struct EvaluationOptions {
  /// Report Delta^2 instead of Delta in the md fields.
  bool report_squared_md = false;
};

CandidateEvaluation evaluate_candidate(std::string label, const Vector& candidate,
                                       const std::vector<LabeledEmbedding>& anchors,
                                       const CovarianceModelD& model, double tau,
                                       std::span<const Vector> reference_samples = {},
                                       EvaluationOptions options = {});

/// Drops candidates with any anchor distance >= tau, then orders survivors by
/// descending md, ascending max anchor distance, and label.
std::vector<CandidateEvaluation> rank_candidates(std::vector<CandidateEvaluation> evaluations,
                                                 double tau);

struct AttackSearchProblem {
  std::vector<Vector> anchors;
  CovarianceModelD reference_model;
  double tau = kDefaultThreshold;
  double slack = 0.05;
  int max_iters = 500;
  int restarts = 8;
  double step_size = 0.1;
  std::uint64_t seed = 0;
  bool parallel = true;

  double radius() const { return tau - slack; }
};

struct AttackResult {
  Vector embedding;
  CandidateEvaluation evaluation;
  int iterations_used = 0;
  /// Squared Mahalanobis distance to the reference mean.
  double objective = 0.0;
  int best_restart = 0;
  /// Objective after every accepted step of the winning restart, start included.
  std::vector<double> trace;
};

/// Alternating projections onto the balls |x - a_i| <= radius. Throws
/// InfeasibleRegion if no point within 1e-9 of every ball is reached.
Vector project_onto_anchor_balls(Vector x, std::span<const Vector> anchors, double radius);

/// Projected gradient ascent of Delta^2(x, mean) inside the anchor balls,
/// best over seeded restarts.
AttackResult attack_search(const AttackSearchProblem& problem);

std::string render_evaluation_table(const std::vector<CandidateEvaluation>& evaluations, double tau);

struct ParsedTableRow {
  std::string label;
  std::vector<std::pair<std::string, double>> fn_distances;
  std::vector<bool> fn_passes;
  double md = 0.0;
};

std::vector<ParsedTableRow> parse_evaluation_table(const std::string& text);

}  // namespace verisieve

#endif  // VERISIEVE_CANDIDATE_HPP
