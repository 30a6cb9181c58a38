#include "cravl/audit.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

namespace cravl {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Confusion matrix
// ---------------------------------------------------------------------------

int64_t ConfusionMatrix::total() const {
  int64_t n = 0;
  for (const auto& row : counts) {
    for (int64_t c : row) n += c;
  }
  return n;
}

int64_t ConfusionMatrix::trace() const {
  int64_t n = 0;
  for (int i = 0; i < kNumRatings; ++i) n += counts[static_cast<size_t>(i)][static_cast<size_t>(i)];
  return n;
}

int64_t ConfusionMatrix::row_sum(int r) const {
  int64_t n = 0;
  for (int64_t c : counts[static_cast<size_t>(r)]) n += c;
  return n;
}

int64_t ConfusionMatrix::col_sum(int c) const {
  int64_t n = 0;
  for (int r = 0; r < kNumRatings; ++r) n += counts[static_cast<size_t>(r)][static_cast<size_t>(c)];
  return n;
}

ConfusionMatrix confusion(const std::vector<PredictionRecord>& predictions) {
  ConfusionMatrix cm;
  for (const auto& p : predictions) {
    cm.counts[static_cast<size_t>(ordinal(p.declared))][static_cast<size_t>(ordinal(p.majority))]++;
  }
  return cm;
}

Metrics metrics(const ConfusionMatrix& cm) {
  const int64_t total = cm.total();
  if (total == 0) throw DataError("metrics: no samples");

  Metrics m;
  double macro_p = 0, macro_r = 0, macro_f = 0;
  int supported_classes = 0;
  for (int k = 0; k < kNumRatings; ++k) {
    ClassMetrics& c = m.per_class[static_cast<size_t>(k)];
    const int64_t tp = cm.counts[static_cast<size_t>(k)][static_cast<size_t>(k)];
    const int64_t predicted = cm.col_sum(k);
    c.support = cm.row_sum(k);
    c.precision = predicted == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(predicted);
    c.recall = c.support == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(c.support);
    c.f1 = (c.precision + c.recall) == 0.0
               ? 0.0
               : 2.0 * c.precision * c.recall / (c.precision + c.recall);
    if (c.support > 0) {
      ++supported_classes;
      macro_p += c.precision;
      macro_r += c.recall;
      macro_f += c.f1;
      const double w = static_cast<double>(c.support) / static_cast<double>(total);
      m.weighted_precision += w * c.precision;
      m.weighted_recall += w * c.recall;
      m.weighted_f1 += w * c.f1;
    }
  }
  m.macro_precision = macro_p / supported_classes;
  m.macro_recall = macro_r / supported_classes;
  m.macro_f1 = macro_f / supported_classes;
  m.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  return m;
}

// ---------------------------------------------------------------------------
// Flags
// ---------------------------------------------------------------------------

const char* to_string(FlagKind k) {
  switch (k) {
    case FlagKind::Correct:
      return "correct";
    case FlagKind::PotentialMalpractice:
      return "potential_malpractice";
    case FlagKind::PotentialDisguise:
      return "potential_disguise";
  }
  return "correct";
}

AuditFlag flag(ContentRating pred, ContentRating declared) {
  const int d = rating_distance(pred, declared);
  if (d > 0) return {FlagKind::PotentialMalpractice, d};
  if (d < 0) return {FlagKind::PotentialDisguise, -d};
  return {FlagKind::Correct, 0};
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

AuditReport audit_report(const std::vector<PredictionRecord>& predictions, int min_severity) {
  AuditReport report;
  report.min_severity = min_severity;
  report.n_total = static_cast<int64_t>(predictions.size());
  for (const auto& p : predictions) {
    AuditRow row{p.app_id, p.declared, p.majority, flag(p.majority, p.declared)};
    switch (row.verdict.kind) {
      case FlagKind::Correct:
        report.n_correct++;
        break;
      case FlagKind::PotentialMalpractice:
        report.n_malpractice++;
        if (row.verdict.severity >= min_severity) report.malpractice_queue.push_back(row);
        break;
      case FlagKind::PotentialDisguise:
        report.n_disguise++;
        if (row.verdict.severity >= min_severity) report.disguise_queue.push_back(row);
        break;
    }
    report.rows.push_back(std::move(row));
  }
  auto by_severity = [](const AuditRow& a, const AuditRow& b) {
    if (a.verdict.severity != b.verdict.severity) return a.verdict.severity > b.verdict.severity;
    return a.app_id < b.app_id;
  };
  std::sort(report.malpractice_queue.begin(), report.malpractice_queue.end(), by_severity);
  std::sort(report.disguise_queue.begin(), report.disguise_queue.end(), by_severity);
  if (report.n_total > 0) {
    const double t = static_cast<double>(report.n_total);
    report.correct_pct = 100.0 * static_cast<double>(report.n_correct) / t;
    report.malpractice_pct = 100.0 * static_cast<double>(report.n_malpractice) / t;
    report.disguise_pct = 100.0 * static_cast<double>(report.n_disguise) / t;
  } else {
    report.correct_pct = 100.0;
  }
  return report;
}

namespace {

json row_to_json(const AuditRow& row) {
  return {{"app_id", row.app_id},
          {"declared", to_string(row.declared)},
          {"majority", to_string(row.majority)},
          {"flag", to_string(row.verdict.kind)},
          {"severity", row.verdict.severity}};
}

}  // namespace

std::string report_to_json(const AuditReport& report) {
  json j;
  j["summary"] = {{"total", report.n_total},
                  {"correct", report.n_correct},
                  {"malpractice", report.n_malpractice},
                  {"disguise", report.n_disguise},
                  {"correct_pct", report.correct_pct},
                  {"malpractice_pct", report.malpractice_pct},
                  {"disguise_pct", report.disguise_pct},
                  {"min_severity", report.min_severity}};
  json apps = json::array();
  for (const auto& row : report.rows) apps.push_back(row_to_json(row));
  j["apps"] = apps;
  json mal = json::array();
  for (const auto& row : report.malpractice_queue) mal.push_back(row_to_json(row));
  j["malpractice_queue"] = mal;
  json dis = json::array();
  for (const auto& row : report.disguise_queue) dis.push_back(row_to_json(row));
  j["disguise_queue"] = dis;
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Deletion rates
// ---------------------------------------------------------------------------

std::string DeletionTable::bucket_label(size_t b) const {
  std::ostringstream out;
  out << "[" << edges[b] << ",";
  if (b + 1 < edges.size()) {
    out << edges[b + 1];
  } else {
    out << "inf";
  }
  out << ")";
  return out.str();
}

DeletionTable deletion_rates(const std::vector<PredictionRecord>& predictions,
                             const std::vector<AppRecord>& records,
                             const std::vector<int64_t>& bucket_edges) {
  if (bucket_edges.empty()) throw UsageError("deletion_rates: no bucket edges");
  DeletionTable table;
  table.edges = bucket_edges;
  table.cells.resize(bucket_edges.size());

  std::map<std::string, const AppRecord*> by_id;
  for (const auto& r : records) by_id[r.app_id] = &r;

  for (const auto& p : predictions) {
    const auto it = by_id.find(p.app_id);
    if (it == by_id.end()) {
      throw DataError("predictions reference unknown app '" + p.app_id + "'");
    }
    const AppRecord& rec = *it->second;
    if (rec.snapshots.size() < 2) {
      table.skipped++;
      continue;
    }
    size_t bucket = 0;
    for (size_t b = 0; b < bucket_edges.size(); ++b) {
      if (rec.downloads >= bucket_edges[b]) bucket = b;
    }
    const AuditFlag f = flag(p.majority, p.declared);
    DeletionCell& cell = table.cells[bucket][static_cast<size_t>(f.kind)];
    cell.total++;
    if (!rec.snapshots.back().alive) cell.removed++;
  }
  return table;
}

std::string deletion_table_to_csv(const DeletionTable& table) {
  std::ostringstream out;
  out << "bucket,flag,total,removed,removal_pct\n";
  for (size_t b = 0; b < table.cells.size(); ++b) {
    for (int k = 0; k < 3; ++k) {
      const DeletionCell& cell = table.cells[b][static_cast<size_t>(k)];
      out << table.bucket_label(b) << "," << to_string(static_cast<FlagKind>(k)) << ","
          << cell.total << "," << cell.removed << ",";
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.1f", cell.pct());
      out << buf << "\n";
    }
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// I/O
// ---------------------------------------------------------------------------

void write_predictions(const std::string& path, const std::vector<PredictionRecord>& predictions) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write predictions: " + path);
  for (const auto& p : predictions) {
    json votes = json::array();
    for (ContentRating v : p.votes) votes.push_back(to_string(v));
    json j = {{"app_id", p.app_id},
              {"declared", to_string(p.declared)},
              {"votes", votes},
              {"majority", to_string(p.majority)}};
    out << j.dump() << '\n';
  }
  if (!out) throw DataError("short write on predictions: " + path);
}

std::vector<PredictionRecord> read_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open predictions: " + path);
  std::vector<PredictionRecord> out;
  std::string line;
  int line_no = 0;
  auto parse_rating = [&](const std::string& s) {
    const auto r = rating_from_string(s);
    if (!r) {
      throw DataError("predictions line " + std::to_string(line_no) + ": unknown rating '" + s +
                      "'");
    }
    return *r;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw DataError("predictions line " + std::to_string(line_no) + ": malformed JSON");
    }
    try {
      PredictionRecord p;
      p.app_id = j.at("app_id").get<std::string>();
      p.declared = parse_rating(j.at("declared").get<std::string>());
      p.majority = parse_rating(j.at("majority").get<std::string>());
      for (const auto& v : j.at("votes")) p.votes.push_back(parse_rating(v.get<std::string>()));
      out.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw DataError("predictions line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

ConfusionMatrix read_confusion(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open confusion matrix: " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw DataError("malformed confusion matrix JSON: " + path);
  if (j.is_object() && j.contains("counts")) j = j.at("counts");
  if (!j.is_array() || j.size() != kNumRatings) {
    throw DataError("confusion matrix must be a 5x5 array: " + path);
  }
  ConfusionMatrix cm;
  for (int r = 0; r < kNumRatings; ++r) {
    const auto& row = j.at(static_cast<size_t>(r));
    if (!row.is_array() || row.size() != kNumRatings) {
      throw DataError("confusion matrix must be a 5x5 array: " + path);
    }
    for (int c = 0; c < kNumRatings; ++c) {
      const int64_t v = row.at(static_cast<size_t>(c)).get<int64_t>();
      if (v < 0) throw DataError("confusion matrix counts must be non-negative: " + path);
      cm.counts[static_cast<size_t>(r)][static_cast<size_t>(c)] = v;
    }
  }
  return cm;
}

std::string confusion_to_json(const ConfusionMatrix& cm) {
  json rows = json::array();
  for (int r = 0; r < kNumRatings; ++r) {
    json row = json::array();
    for (int c = 0; c < kNumRatings; ++c) {
      row.push_back(cm.counts[static_cast<size_t>(r)][static_cast<size_t>(c)]);
    }
    rows.push_back(row);
  }
  return json{{"counts", rows}}.dump(2);
}

std::string metrics_to_json(const Metrics& m) {
  json per = json::object();
  for (int k = 0; k < kNumRatings; ++k) {
    const ClassMetrics& c = m.per_class[static_cast<size_t>(k)];
    per[to_string(rating_from_ordinal(k))] = {{"precision", c.precision},
                                              {"recall", c.recall},
                                              {"f1", c.f1},
                                              {"support", c.support}};
  }
  json j = {{"per_class", per},
            {"macro", {{"precision", m.macro_precision}, {"recall", m.macro_recall}, {"f1", m.macro_f1}}},
            {"weighted",
             {{"precision", m.weighted_precision},
              {"recall", m.weighted_recall},
              {"f1", m.weighted_f1}}},
            {"accuracy", m.accuracy}};
  return j.dump(2);
}

}  // namespace cravl
