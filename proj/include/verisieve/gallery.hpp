#ifndef VERISIEVE_GALLERY_HPP
#define VERISIEVE_GALLERY_HPP

#include <cstdint>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "verisieve/embedding.hpp"

namespace verisieve {

inline constexpr double kDefaultThreshold = 0.7;

enum class VerificationMode {
  /// accept iff distance < threshold
  ThresholdOnly,
  /// additionally require the claimed identity to be the gallery-wide nearest
  Exclusive,
};

std::string_view to_string(VerificationMode mode);
VerificationMode parse_mode(std::string_view text);

struct IdentityRecord {
  std::string id;
  std::vector<Vector> embeddings;
  std::int64_t enrolled_at = 0;

  friend bool operator==(const IdentityRecord&, const IdentityRecord&) = default;
};

struct VerificationDecision {
  bool accepted = false;
  double distance = 0.0;
  std::optional<std::string> nearest_id;
  double threshold_used = kDefaultThreshold;
  VerificationMode mode = VerificationMode::ThresholdOnly;
};

struct ScanHit {
  std::string id;
  double distance = 0.0;

  friend bool operator==(const ScanHit&, const ScanHit&) = default;
};

/// Enrolled identities plus the decision rule.
///
/// Readers (verify, scan, snapshots) take a shared lock for the full
/// operation and writers (enroll, settings) an exclusive one, so concurrent
/// callers always see whole records.
class Gallery {
 public:
  explicit Gallery(Eigen::Index dimension = kDefaultDimension, double threshold = kDefaultThreshold,
                   VerificationMode mode = VerificationMode::ThresholdOnly);

  Gallery(const Gallery& other);
  Gallery(Gallery&& other) noexcept;
  Gallery& operator=(Gallery other) noexcept;

  Eigen::Index dimension() const { return dimension_; }
  double threshold() const;
  VerificationMode mode() const;
  void set_threshold(double threshold);
  void set_mode(VerificationMode mode);

  std::size_t size() const;
  bool contains(std::string_view id) const;
  std::optional<IdentityRecord> find(std::string_view id) const;
  /// Copy of all records in enrollment order.
  std::vector<IdentityRecord> records() const;

  /// enrolled_at defaults to the current wall-clock time.
  void enroll(std::string id, std::vector<Vector> embeddings,
              std::optional<std::int64_t> enrolled_at = std::nullopt);

  VerificationDecision verify(std::string_view claimed_id, const Vector& probe) const;

  struct Match {
    double claimed_distance = 0.0;
    /// Gallery-wide nearest identity by (distance, id); empty unless requested.
    std::string nearest_id;
  };
  /// The threshold-independent part of verify.
  Match match(std::string_view claimed_id, const Vector& probe, bool need_nearest) const;

  /// Identities whose minimum enrollment distance is below the threshold,
  /// ordered by (distance, id).
  std::vector<ScanHit> scan(const Vector& probe) const;

  /// Minimum enrollment distance per identity, in enrollment order.
  std::vector<ScanHit> distances(const Vector& probe) const;

  friend bool operator==(const Gallery& a, const Gallery& b);

 private:
  Match match_locked(std::string_view claimed_id, const Vector& probe, bool need_nearest) const;
  std::size_t index_of_locked(std::string_view id) const;
  void check_probe(const Vector& probe) const;

  Eigen::Index dimension_;
  double threshold_;
  VerificationMode mode_;
  std::vector<IdentityRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
  mutable std::shared_mutex mutex_;
};

/// Applies the threshold and mode to a precomputed match.
VerificationDecision decide(const Gallery::Match& match, std::string_view claimed_id,
                            double threshold, VerificationMode mode);

/// Minimum distance from probe to any of the record's embeddings.
double min_enrollment_distance(const IdentityRecord& record, const Vector& probe);

std::vector<ScanHit> scan_gallery(const Gallery& gallery, const Vector& probe);

struct ReciprocalHit {
  std::string id;
  double forward_distance = 0.0;
  bool reverse_accepted = false;

  friend bool operator==(const ReciprocalHit&, const ReciprocalHit&) = default;
};

/// Forward scan of the user probe, then each hit's first enrollment is
/// verified back against the user identity.
std::vector<ReciprocalHit> reciprocal_scan(const Gallery& gallery, std::string_view user_id,
                                           const Vector& user_probe);

struct SweepPoint {
  double threshold = 0.0;
  double far = 0.0;
  double frr = 0.0;
};

/// FAR/FRR at each threshold, using the gallery's current mode.
std::vector<SweepPoint> sweep_threshold(
    const Gallery& gallery, const std::vector<std::pair<Vector, std::string>>& genuine_pairs,
    const std::vector<std::pair<Vector, std::string>>& impostor_pairs,
    const std::vector<double>& thresholds);

}  // namespace verisieve

#endif  // VERISIEVE_GALLERY_HPP
