#include "verisieve/candidate.hpp"

#include <algorithm>
#include <cstdio>
#include <future>
#include <random>
#include <sstream>

namespace verisieve {

double CandidateEvaluation::max_fn() const {
  double m = 0.0;
  for (const auto& [label, d] : fn_distances) m = std::max(m, d);
  return m;
}

CandidateEvaluation evaluate_candidate(std::string label, const Vector& candidate,
                                       const std::vector<LabeledEmbedding>& anchors,
                                       const CovarianceModelD& model, double tau,
                                       std::span<const Vector> reference_samples,
                                       EvaluationOptions options) {
  if (anchors.empty()) throw Error(ErrorCode::InvalidArgument, "evaluate_candidate: no anchors");
  detail::require_same_dimension(candidate.size(), model.dimension(), "evaluate_candidate");

  CandidateEvaluation row;
  row.candidate_label = std::move(label);
  row.passes_all_anchors = true;
  for (const auto& anchor : anchors) {
    const double d = frobenius_distance(candidate, anchor.embedding);
    row.fn_distances.emplace_back(anchor.id, d);
    const bool pass = d < tau;
    row.passes_all_anchors = row.passes_all_anchors && pass;
    row.passes_any_anchor = row.passes_any_anchor || pass;
  }
  auto report = [&](double delta) { return options.report_squared_md ? delta * delta : delta; };
  row.md = report(mahalanobis_to_set(candidate, model));
  if (!reference_samples.empty()) {
    double total = 0.0;
    for (const auto& s : reference_samples) total += report(mahalanobis_distance(candidate, s, model));
    row.md_mean_pairwise = total / double(reference_samples.size());
  }
  return row;
}

std::vector<CandidateEvaluation> rank_candidates(std::vector<CandidateEvaluation> evaluations,
                                                 double tau) {
  std::erase_if(evaluations, [tau](const CandidateEvaluation& e) {
    return std::any_of(e.fn_distances.begin(), e.fn_distances.end(),
                       [tau](const auto& fn) { return !(fn.second < tau); });
  });
  std::sort(evaluations.begin(), evaluations.end(),
            [](const CandidateEvaluation& a, const CandidateEvaluation& b) {
              if (a.md != b.md) return a.md > b.md;
              const double fa = a.max_fn();
              const double fb = b.max_fn();
              if (fa != fb) return fa < fb;
              return a.candidate_label < b.candidate_label;
            });
  return evaluations;
}

namespace {

constexpr int kProjectionRounds = 100;
constexpr double kProjectionTolerance = 1e-10;
constexpr double kFeasibilityTolerance = 1e-9;
constexpr int kMaxHalvings = 30;

double max_violation(const Vector& x, std::span<const Vector> anchors, double radius) {
  double worst = -radius;
  for (const auto& a : anchors) worst = std::max(worst, (x - a).norm() - radius);
  return worst;
}

struct RestartOutcome {
  Vector x;
  double objective = 0.0;
  int iterations = 0;
  std::vector<double> trace;
};

RestartOutcome run_restart(const AttackSearchProblem& problem, int restart) {
  const auto& model = problem.reference_model;
  const double radius = problem.radius();
  const std::span<const Vector> anchors(problem.anchors);
  auto objective = [&](const Vector& x) { return model.squared_norm(x - model.mean()); };

  std::seed_seq seq{static_cast<std::uint32_t>(problem.seed),
                    static_cast<std::uint32_t>(problem.seed >> 32),
                    static_cast<std::uint32_t>(restart)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector direction(model.dimension());
  do {
    for (Eigen::Index k = 0; k < direction.size(); ++k) direction(k) = gauss(rng);
  } while (direction.norm() == 0.0);
  const Vector& base = problem.anchors[static_cast<std::size_t>(restart) % problem.anchors.size()];

  RestartOutcome out;
  out.x = project_onto_anchor_balls(base + radius * direction.normalized(), anchors, radius);
  out.objective = objective(out.x);
  out.trace.push_back(out.objective);

  for (int it = 0; it < problem.max_iters; ++it) {
    const Vector gradient = 2.0 * model.solve(out.x - model.mean());
    const double gnorm = gradient.norm();
    if (!(gnorm > 0.0)) break;
    const Vector ascent = gradient / gnorm;

    double step = problem.step_size;
    bool accepted = false;
    Vector next;
    double next_objective = 0.0;
    for (int h = 0; h <= kMaxHalvings; ++h, step *= 0.5) {
      next = project_onto_anchor_balls(out.x + step * ascent, anchors, radius);
      next_objective = objective(next);
      if (next_objective >= out.objective) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    const double gain = next_objective - out.objective;
    out.x = std::move(next);
    out.objective = next_objective;
    out.trace.push_back(out.objective);
    ++out.iterations;
    if (gain <= 1e-13 * (1.0 + out.objective)) break;
  }
  return out;
}

void validate(const AttackSearchProblem& problem) {
  if (problem.anchors.empty()) throw Error(ErrorCode::InvalidArgument, "attack_search: no anchors");
  if (!(problem.tau > 0.0) || !(problem.slack > 0.0) || !(problem.slack < problem.tau)) {
    throw Error(ErrorCode::InvalidArgument, "attack_search: need 0 < slack < tau");
  }
  if (problem.restarts < 1 || problem.max_iters < 0 || !(problem.step_size > 0.0)) {
    throw Error(ErrorCode::InvalidArgument,
                "attack_search: restarts >= 1, max_iters >= 0 and step_size > 0 required");
  }
  for (const auto& a : problem.anchors) {
    detail::require_same_dimension(a.size(), problem.reference_model.dimension(), "attack_search");
  }
  const double diameter = 2.0 * problem.radius();
  for (std::size_t i = 0; i < problem.anchors.size(); ++i) {
    for (std::size_t j = i + 1; j < problem.anchors.size(); ++j) {
      if ((problem.anchors[i] - problem.anchors[j]).norm() > diameter) {
        throw Error(ErrorCode::InfeasibleRegion,
                    "empty feasible region: anchors farther apart than 2(tau - slack)");
      }
    }
  }
}

}  // namespace

Vector project_onto_anchor_balls(Vector x, std::span<const Vector> anchors, double radius) {
  for (int round = 0; round < kProjectionRounds; ++round) {
    double moved = 0.0;
    for (const auto& a : anchors) {
      const Vector offset = x - a;
      const double dist = offset.norm();
      if (dist > radius) {
        const Vector projected = a + offset * (radius / dist);
        moved = std::max(moved, (projected - x).norm());
        x = projected;
      }
    }
    if (max_violation(x, anchors, radius) <= 1e-12 || moved < kProjectionTolerance) break;
  }
  if (max_violation(x, anchors, radius) > kFeasibilityTolerance) {
    throw Error(ErrorCode::InfeasibleRegion, "empty feasible region");
  }
  return x;
}

AttackResult attack_search(const AttackSearchProblem& problem) {
  validate(problem);

  std::vector<RestartOutcome> outcomes(static_cast<std::size_t>(problem.restarts));
  if (problem.parallel && problem.restarts > 1) {
    std::vector<std::future<RestartOutcome>> pending;
    for (int r = 0; r < problem.restarts; ++r) {
      pending.push_back(std::async(std::launch::async, run_restart, std::cref(problem), r));
    }
    for (std::size_t r = 0; r < pending.size(); ++r) outcomes[r] = pending[r].get();
  } else {
    for (int r = 0; r < problem.restarts; ++r) outcomes[static_cast<std::size_t>(r)] = run_restart(problem, r);
  }

  // strict comparison keeps the lowest restart index on ties
  std::size_t best = 0;
  for (std::size_t r = 1; r < outcomes.size(); ++r) {
    if (outcomes[r].objective > outcomes[best].objective) best = r;
  }

  AttackResult result;
  result.best_restart = static_cast<int>(best);
  result.iterations_used = outcomes[best].iterations;
  result.objective = outcomes[best].objective;
  result.trace = std::move(outcomes[best].trace);
  result.embedding = std::move(outcomes[best].x);

  // never return something worse than an anchor's own feasible projection
  for (const auto& a : problem.anchors) {
    Vector start = project_onto_anchor_balls(a, problem.anchors, problem.radius());
    const double value = problem.reference_model.squared_norm(start - problem.reference_model.mean());
    if (value > result.objective) {
      result.objective = value;
      result.embedding = std::move(start);
      result.trace.push_back(value);
    }
  }

  std::vector<LabeledEmbedding> labeled;
  for (std::size_t i = 0; i < problem.anchors.size(); ++i) {
    labeled.push_back({"anchor" + std::to_string(i + 1), problem.anchors[i]});
  }
  result.evaluation = evaluate_candidate("attack", result.embedding, labeled,
                                         problem.reference_model, problem.tau);
  return result;
}

namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, '|')) cells.push_back(trim(cell));
  return cells;
}

double parse_number(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0) throw Error(ErrorCode::MalformedDocument, "table: bad number '" + s + "'");
  return v;
}

}  // namespace

std::string render_evaluation_table(const std::vector<CandidateEvaluation>& evaluations, double tau) {
  std::vector<std::string> header{"Image"};
  if (!evaluations.empty()) {
    for (const auto& [anchor, d] : evaluations.front().fn_distances) header.push_back("FN " + anchor);
  }
  header.push_back("MD");

  std::vector<std::vector<std::string>> rows;
  for (const auto& e : evaluations) {
    if (e.fn_distances.size() + 2 != header.size()) {
      throw Error(ErrorCode::InvalidArgument, "table rows must share the same anchors");
    }
    std::vector<std::string> row{e.candidate_label};
    for (const auto& [anchor, d] : e.fn_distances) {
      row.push_back(fixed6(d) + (d < tau ? " pass" : " FAIL"));
    }
    row.push_back(fixed6(e.md));
    rows.push_back(std::move(row));
  }

  std::vector<std::size_t> widths(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    widths[c] = header[c].size();
    for (const auto& r : rows) widths[c] = std::max(widths[c], r[c].size());
  }
  std::ostringstream out;
  auto emit = [&](const std::vector<std::string>& cells) {
    std::string line;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c > 0) line += " | ";
      line += c + 1 < cells.size() ? pad(cells[c], widths[c]) : cells[c];
    }
    out << line << '\n';
  };
  emit(header);
  for (const auto& r : rows) emit(r);
  return out.str();
}

std::vector<ParsedTableRow> parse_evaluation_table(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) return {};
  const auto header = split_cells(line);
  if (header.size() < 2 || header.front() != "Image" || header.back() != "MD") {
    throw Error(ErrorCode::MalformedDocument, "table: unexpected header");
  }
  std::vector<std::string> anchors;
  for (std::size_t c = 1; c + 1 < header.size(); ++c) {
    if (header[c].rfind("FN ", 0) != 0) throw Error(ErrorCode::MalformedDocument, "table: bad column");
    anchors.push_back(header[c].substr(3));
  }

  std::vector<ParsedTableRow> rows;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto cells = split_cells(line);
    if (cells.size() != header.size()) throw Error(ErrorCode::MalformedDocument, "table: ragged row");
    ParsedTableRow row;
    row.label = cells.front();
    for (std::size_t c = 1; c + 1 < cells.size(); ++c) {
      std::istringstream cell(cells[c]);
      std::string value, marker;
      cell >> value >> marker;
      if (marker != "pass" && marker != "FAIL") {
        throw Error(ErrorCode::MalformedDocument, "table: bad pass/fail marker");
      }
      row.fn_distances.emplace_back(anchors[c - 1], parse_number(value));
      row.fn_passes.push_back(marker == "pass");
    }
    row.md = parse_number(cells.back());
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace verisieve
