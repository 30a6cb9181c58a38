#pragma once

#include <array>
#include <string>
#include <vector>

#include "cravl/head.hpp"
#include "cravl/types.hpp"

namespace cravl {

// ---------------------------------------------------------------------------
// Confusion matrix and metrics
// ---------------------------------------------------------------------------

// Rows are declared ("true") ratings, columns are predicted ratings.
struct ConfusionMatrix {
  std::array<std::array<int64_t, kNumRatings>, kNumRatings> counts{};

  int64_t total() const;
  int64_t trace() const;
  int64_t row_sum(int r) const;  // support of declared class r
  int64_t col_sum(int c) const;  // predicted count of class c
};

ConfusionMatrix confusion(const std::vector<PredictionRecord>& predictions);

struct ClassMetrics {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  int64_t support = 0;
};

struct Metrics {
  std::array<ClassMetrics, kNumRatings> per_class{};
  double macro_precision = 0, macro_recall = 0, macro_f1 = 0;
  double weighted_precision = 0, weighted_recall = 0, weighted_f1 = 0;
  double accuracy = 0;
};

// Standard definitions. Never-predicted classes take precision 0;
// zero-support classes are excluded from the macro means and carry zero
// weight in the weighted means. Throws DataError on an all-zero matrix.
Metrics metrics(const ConfusionMatrix& cm);

// ---------------------------------------------------------------------------
// Flags
// ---------------------------------------------------------------------------

enum class FlagKind { Correct = 0, PotentialMalpractice = 1, PotentialDisguise = 2 };

const char* to_string(FlagKind k);

struct AuditFlag {
  FlagKind kind = FlagKind::Correct;
  int severity = 0;  // |rating_distance|
};

// Predicted above declared -> malpractice; below -> disguise.
AuditFlag flag(ContentRating pred, ContentRating declared);

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct AuditRow {
  std::string app_id;
  ContentRating declared = ContentRating::G;
  ContentRating majority = ContentRating::G;
  AuditFlag verdict;
};

struct AuditReport {
  std::vector<AuditRow> rows;                // manifest order
  std::vector<AuditRow> malpractice_queue;   // severity desc, app_id asc
  std::vector<AuditRow> disguise_queue;
  int min_severity = 2;
  int64_t n_total = 0, n_correct = 0, n_malpractice = 0, n_disguise = 0;
  double correct_pct = 0, malpractice_pct = 0, disguise_pct = 0;
};

// Queues keep only flags with severity >= min_severity.
AuditReport audit_report(const std::vector<PredictionRecord>& predictions, int min_severity);

std::string report_to_json(const AuditReport& report);

// ---------------------------------------------------------------------------
// Deletion rates
// ---------------------------------------------------------------------------

inline const std::vector<int64_t>& default_bucket_edges() {
  static const std::vector<int64_t> edges = {0, 100, 10000, 100000, 1000000};
  return edges;
}

struct DeletionCell {
  int64_t total = 0;
  int64_t removed = 0;
  double pct() const { return total == 0 ? 0.0 : 100.0 * static_cast<double>(removed) / total; }
};

struct DeletionTable {
  std::vector<int64_t> edges;                    // left-closed bucket edges
  std::vector<std::array<DeletionCell, 3>> cells;  // [bucket][flag kind]
  int64_t skipped = 0;  // apps with fewer than two snapshots

  std::string bucket_label(size_t b) const;
};

// An app counts as removed iff its final snapshot is not alive. Apps with
// fewer than two snapshots are skipped and counted.
DeletionTable deletion_rates(const std::vector<PredictionRecord>& predictions,
                             const std::vector<AppRecord>& records,
                             const std::vector<int64_t>& bucket_edges = default_bucket_edges());

std::string deletion_table_to_csv(const DeletionTable& table);

// ---------------------------------------------------------------------------
// Prediction and matrix I/O
// ---------------------------------------------------------------------------

void write_predictions(const std::string& path, const std::vector<PredictionRecord>& predictions);
std::vector<PredictionRecord> read_predictions(const std::string& path);

// Accepts either a bare 5x5 JSON array or {"counts": [[...]]}.
ConfusionMatrix read_confusion(const std::string& path);
std::string confusion_to_json(const ConfusionMatrix& cm);
std::string metrics_to_json(const Metrics& m);

}  // namespace cravl
