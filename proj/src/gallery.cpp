#include "verisieve/gallery.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <mutex>
#include <tuple>

namespace verisieve {

std::string_view to_string(VerificationMode mode) {
  return mode == VerificationMode::Exclusive ? "exclusive" : "threshold";
}

VerificationMode parse_mode(std::string_view text) {
  if (text == "threshold" || text == "threshold_only" || text == "ThresholdOnly") {
    return VerificationMode::ThresholdOnly;
  }
  if (text == "exclusive" || text == "Exclusive") return VerificationMode::Exclusive;
  throw Error(ErrorCode::InvalidArgument, "unknown verification mode '" + std::string(text) + "'");
}

namespace {

void check_threshold(double threshold) {
  if (!(threshold > 0.0) || !std::isfinite(threshold)) {
    throw Error(ErrorCode::InvalidArgument, "threshold must be positive and finite");
  }
}

bool closer(double da, std::string_view ida, double db, std::string_view idb) {
  return std::tie(da, ida) < std::tie(db, idb);
}

}  // namespace

Gallery::Gallery(Eigen::Index dimension, double threshold, VerificationMode mode)
    : dimension_(dimension), threshold_(threshold), mode_(mode) {
  if (dimension < 1) throw Error(ErrorCode::InvalidArgument, "gallery dimension must be >= 1");
  check_threshold(threshold);
}

Gallery::Gallery(const Gallery& other) {
  std::shared_lock lock(other.mutex_);
  dimension_ = other.dimension_;
  threshold_ = other.threshold_;
  mode_ = other.mode_;
  records_ = other.records_;
  index_ = other.index_;
}

Gallery::Gallery(Gallery&& other) noexcept
    : dimension_(other.dimension_),
      threshold_(other.threshold_),
      mode_(other.mode_),
      records_(std::move(other.records_)),
      index_(std::move(other.index_)) {}

Gallery& Gallery::operator=(Gallery other) noexcept {
  std::unique_lock lock(mutex_);
  dimension_ = other.dimension_;
  threshold_ = other.threshold_;
  mode_ = other.mode_;
  records_ = std::move(other.records_);
  index_ = std::move(other.index_);
  return *this;
}

double Gallery::threshold() const {
  std::shared_lock lock(mutex_);
  return threshold_;
}

VerificationMode Gallery::mode() const {
  std::shared_lock lock(mutex_);
  return mode_;
}

void Gallery::set_threshold(double threshold) {
  check_threshold(threshold);
  std::unique_lock lock(mutex_);
  threshold_ = threshold;
}

void Gallery::set_mode(VerificationMode mode) {
  std::unique_lock lock(mutex_);
  mode_ = mode;
}

std::size_t Gallery::size() const {
  std::shared_lock lock(mutex_);
  return records_.size();
}

bool Gallery::contains(std::string_view id) const {
  std::shared_lock lock(mutex_);
  return index_.count(std::string(id)) != 0;
}

std::optional<IdentityRecord> Gallery::find(std::string_view id) const {
  std::shared_lock lock(mutex_);
  const auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return records_[it->second];
}

std::vector<IdentityRecord> Gallery::records() const {
  std::shared_lock lock(mutex_);
  return records_;
}

void Gallery::enroll(std::string id, std::vector<Vector> embeddings,
                     std::optional<std::int64_t> enrolled_at) {
  if (id.empty()) throw Error(ErrorCode::InvalidArgument, "identity id must be nonempty");
  if (embeddings.empty()) {
    throw Error(ErrorCode::EmptyEnrollment, "enroll '" + id + "': no embeddings given");
  }
  for (const auto& e : embeddings) {
    detail::require_same_dimension(e.size(), dimension_, "enroll");
    if (!e.allFinite()) throw Error(ErrorCode::NonFiniteValue, "enroll '" + id + "': non-finite value");
  }
  const std::int64_t stamp =
      enrolled_at.value_or(std::chrono::duration_cast<std::chrono::seconds>(
                               std::chrono::system_clock::now().time_since_epoch())
                               .count());

  std::unique_lock lock(mutex_);
  if (index_.count(id) != 0) {
    throw Error(ErrorCode::DuplicateIdentity, "identity '" + id + "' already enrolled");
  }
  index_.emplace(id, records_.size());
  records_.push_back(IdentityRecord{std::move(id), std::move(embeddings), stamp});
}

void Gallery::check_probe(const Vector& probe) const {
  detail::require_same_dimension(probe.size(), dimension_, "probe");
  if (!probe.allFinite()) throw Error(ErrorCode::NonFiniteValue, "probe has non-finite values");
}

std::size_t Gallery::index_of_locked(std::string_view id) const {
  const auto it = index_.find(std::string(id));
  if (it == index_.end()) {
    throw Error(ErrorCode::UnknownIdentity, "identity not enrolled: '" + std::string(id) + "'");
  }
  return it->second;
}

double min_enrollment_distance(const IdentityRecord& record, const Vector& probe) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& e : record.embeddings) best = std::min(best, frobenius_distance(e, probe));
  return best;
}

Gallery::Match Gallery::match_locked(std::string_view claimed_id, const Vector& probe,
                                     bool need_nearest) const {
  check_probe(probe);
  const std::size_t claimed = index_of_locked(claimed_id);
  Match m;
  m.claimed_distance = min_enrollment_distance(records_[claimed], probe);
  if (need_nearest) {
    double best = m.claimed_distance;
    std::string_view best_id = records_[claimed].id;
    for (std::size_t i = 0; i < records_.size(); ++i) {
      if (i == claimed) continue;
      const double d = min_enrollment_distance(records_[i], probe);
      if (closer(d, records_[i].id, best, best_id)) {
        best = d;
        best_id = records_[i].id;
      }
    }
    m.nearest_id = std::string(best_id);
  }
  return m;
}

Gallery::Match Gallery::match(std::string_view claimed_id, const Vector& probe,
                              bool need_nearest) const {
  std::shared_lock lock(mutex_);
  return match_locked(claimed_id, probe, need_nearest);
}

VerificationDecision decide(const Gallery::Match& match, std::string_view claimed_id,
                            double threshold, VerificationMode mode) {
  VerificationDecision decision;
  decision.distance = match.claimed_distance;
  decision.threshold_used = threshold;
  decision.mode = mode;
  decision.accepted = match.claimed_distance < threshold;
  if (mode == VerificationMode::Exclusive) {
    decision.nearest_id = match.nearest_id;
    decision.accepted = decision.accepted && match.nearest_id == claimed_id;
  }
  return decision;
}

VerificationDecision Gallery::verify(std::string_view claimed_id, const Vector& probe) const {
  std::shared_lock lock(mutex_);
  const Match m = match_locked(claimed_id, probe, mode_ == VerificationMode::Exclusive);
  return decide(m, claimed_id, threshold_, mode_);
}

std::vector<ScanHit> Gallery::distances(const Vector& probe) const {
  std::shared_lock lock(mutex_);
  check_probe(probe);
  std::vector<ScanHit> out;
  out.reserve(records_.size());
  for (const auto& r : records_) out.push_back({r.id, min_enrollment_distance(r, probe)});
  return out;
}

std::vector<ScanHit> Gallery::scan(const Vector& probe) const {
  std::shared_lock lock(mutex_);
  check_probe(probe);
  std::vector<ScanHit> hits;
  for (const auto& r : records_) {
    const double d = min_enrollment_distance(r, probe);
    if (d < threshold_) hits.push_back({r.id, d});
  }
  std::sort(hits.begin(), hits.end(), [](const ScanHit& a, const ScanHit& b) {
    return closer(a.distance, a.id, b.distance, b.id);
  });
  return hits;
}

bool operator==(const Gallery& a, const Gallery& b) {
  if (&a == &b) return true;
  std::shared_lock la(a.mutex_, std::defer_lock);
  std::shared_lock lb(b.mutex_, std::defer_lock);
  std::lock(la, lb);
  return a.dimension_ == b.dimension_ && a.threshold_ == b.threshold_ && a.mode_ == b.mode_ &&
         a.records_ == b.records_;
}

std::vector<ScanHit> scan_gallery(const Gallery& gallery, const Vector& probe) {
  if (gallery.size() == 0) throw Error(ErrorCode::InvalidArgument, "scan on empty gallery");
  return gallery.scan(probe);
}

std::vector<ReciprocalHit> reciprocal_scan(const Gallery& gallery, std::string_view user_id,
                                           const Vector& user_probe) {
  if (!gallery.contains(user_id)) {
    throw Error(ErrorCode::UnknownIdentity, "identity not enrolled: '" + std::string(user_id) + "'");
  }
  std::vector<ReciprocalHit> out;
  for (const auto& hit : gallery.scan(user_probe)) {
    if (hit.id == user_id) continue;
    const auto record = gallery.find(hit.id);
    if (!record) continue;  // cannot happen: records are never removed
    const auto decision = gallery.verify(user_id, record->embeddings.front());
    out.push_back({hit.id, hit.distance, decision.accepted});
  }
  return out;
}

std::vector<SweepPoint> sweep_threshold(
    const Gallery& gallery, const std::vector<std::pair<Vector, std::string>>& genuine_pairs,
    const std::vector<std::pair<Vector, std::string>>& impostor_pairs,
    const std::vector<double>& thresholds) {
  if (!std::is_sorted(thresholds.begin(), thresholds.end())) {
    throw Error(ErrorCode::InvalidArgument, "sweep thresholds must be ascending");
  }
  const VerificationMode mode = gallery.mode();
  const bool need_nearest = mode == VerificationMode::Exclusive;
  auto matches = [&](const std::vector<std::pair<Vector, std::string>>& pairs) {
    std::vector<Gallery::Match> out;
    out.reserve(pairs.size());
    for (const auto& [probe, id] : pairs) out.push_back(gallery.match(id, probe, need_nearest));
    return out;
  };
  const auto genuine = matches(genuine_pairs);
  const auto impostor = matches(impostor_pairs);

  std::vector<SweepPoint> curve;
  curve.reserve(thresholds.size());
  for (const double tau : thresholds) {
    check_threshold(tau);
    std::size_t false_accepts = 0;
    for (std::size_t i = 0; i < impostor.size(); ++i) {
      if (decide(impostor[i], impostor_pairs[i].second, tau, mode).accepted) ++false_accepts;
    }
    std::size_t false_rejects = 0;
    for (std::size_t i = 0; i < genuine.size(); ++i) {
      if (!decide(genuine[i], genuine_pairs[i].second, tau, mode).accepted) ++false_rejects;
    }
    SweepPoint p;
    p.threshold = tau;
    p.far = impostor.empty() ? 0.0 : double(false_accepts) / double(impostor.size());
    p.frr = genuine.empty() ? 0.0 : double(false_rejects) / double(genuine.size());
    curve.push_back(p);
  }
  return curve;
}

}  // namespace verisieve
