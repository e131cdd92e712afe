#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace tulm {

enum class ResponseMode { kGaussian, kBinary };

const char* to_string(ResponseMode mode);
ResponseMode parse_response_mode(const std::string& s);

// Response status of the same unit in the previous week.
enum class PrevStatus : std::uint8_t { kNotSampled = 0, kPrevNo = 1, kPrevYes = 2 };

const char* to_string(PrevStatus s);
PrevStatus parse_prev_status(const std::string& s);

inline constexpr const char* kInterceptName = "(intercept)";
inline constexpr const char* kPrevNoName = "prev_no";
inline constexpr const char* kPrevYesName = "prev_yes";

// One design column (numeric) or a one-hot block (categorical) built from a
// source column of the microdata.
struct CovariateSpec {
  enum class Kind { kNumeric, kCategorical };

  std::string name;    // design column name; prefix "<name>=<level>" for categoricals
  std::string column;  // source column
  Kind kind = Kind::kNumeric;
  // numeric: ((x - center) / scale)^power
  double center = 0.0;
  double scale = 1.0;
  int power = 1;
  // categorical: one indicator per non-reference level
  std::vector<std::string> levels;
  std::string reference;
};

// Column mapping for delimiter-separated microdata and cell-count files.
struct MicrodataSchema {
  char delimiter = ',';
  std::string unit_id = "unit_id";
  std::string area = "area";  // integer 1..m
  std::string week = "week";  // integer 1..T
  std::string weight = "weight";
  std::string response = "response";
  std::string trials;  // optional binomial size column; 1 when empty
  bool intercept = true;
  std::vector<CovariateSpec> covariates;
  std::optional<double> box_cox_lambda;  // Gaussian mode only
  int max_consecutive_weeks = 3;
  int n_areas = 0;  // 0: infer from data
  int n_weeks = 0;  // 0: infer from data
  // cell-count files
  std::string count = "count";
  std::string prev_status;  // optional column in cell files
};

// Design column names produced by `schema` (intercept first).
std::vector<std::string> design_names(const MicrodataSchema& schema);

struct UnitWeekRecord {
  std::string unit_id;
  int area = 0;  // 0-based
  int week = 0;  // 0-based
  double response = 0.0;
  double trials = 1.0;  // binomial size n_it
  double design_weight = 1.0;
  double scaled_weight = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> covariates;
  PrevStatus prev_status = PrevStatus::kNotSampled;
  std::optional<double> prev_response;
  int prev_index = -1;  // index of the same unit's week-(t-1) record, or -1

  bool is_followup() const { return prev_index >= 0; }
  bool operator==(const UnitWeekRecord& o) const;
};

// Unit-week responses with first-time / follow-up partitions per week.
struct PanelDataset {
  ResponseMode mode = ResponseMode::kGaussian;
  int n_areas = 0;
  int n_weeks = 0;
  std::vector<std::string> covariate_names;
  std::vector<UnitWeekRecord> records;  // stable-sorted by week
  std::vector<std::vector<int>> first_time;  // per week, record indices
  std::vector<std::vector<int>> followup;    // per week, record indices
  // (unit_id, 0-based week) pairs dropped for item nonresponse
  std::vector<std::pair<std::string, int>> nonresponse;
  bool has_prev_covariate = false;
  bool weights_scaled = false;

  int p() const { return static_cast<int>(covariate_names.size()); }
  std::size_t size() const { return records.size(); }
  std::size_t week_size(int t) const { return first_time[t].size() + followup[t].size(); }
  std::size_t dropped_nonresponse() const { return nonresponse.size(); }

  bool operator==(const PanelDataset& o) const;
};

// Population cell: identical covariates and random effects for all members.
struct PopulationCell {
  int area = 0;
  int week = 0;
  std::vector<double> covariates;  // base covariates (no previous-status dummies)
  double count = 0.0;
  // Fixed previous-week status. When absent in binary prediction, the count
  // is split by carrying forward the previous week's predicted responses.
  std::optional<PrevStatus> prev_status;
};

struct PopulationCells {
  std::vector<std::string> covariate_names;
  int n_areas = 0;
  int n_weeks = 0;
  std::vector<PopulationCell> cells;

  // Sum of counts per (area, week), week-major: [week * n_areas + area].
  std::vector<double> domain_totals() const;
};

// Equality constraints on design columns that restrict a domain to a subgroup.
struct DomainFilter {
  std::vector<std::pair<std::string, double>> equals;

  bool empty() const { return equals.empty(); }
  // Resolves names against `names`; throws ConfigError for unknown columns.
  std::vector<std::pair<int, double>> resolve(const std::vector<std::string>& names) const;
};

bool matches(const std::vector<std::pair<int, double>>& resolved,
             const std::vector<double>& covariates);

// Reads microdata. Rows with a blank response are dropped and recorded in
// `nonresponse`; appearance-pattern checks use all rows, partitions use kept rows.
PanelDataset ingest_microdata(const std::string& path, const MicrodataSchema& schema,
                              ResponseMode mode);
PanelDataset ingest_microdata(std::istream& in, const MicrodataSchema& schema, ResponseMode mode,
                              const std::string& source = "<stream>");

// Sorts records by week, links follow-ups to their predecessors and rebuilds
// the per-week partitions. Throws DataError on duplicate (unit, week) pairs.
void build_partitions(PanelDataset& data);

// w~_it = n_t w_it / sum_{l in S_t} w_lt, independently per week.
PanelDataset scale_weights(const PanelDataset& data);

// Sets prev_status from the linked predecessor and appends (or refreshes) the
// prev_no / prev_yes indicator columns; NotSampled is the reference level.
PanelDataset build_prev_covariate(const PanelDataset& data);

// Canonical serialization: columns unit_id, area, week, response, trials,
// weight and one numeric column per base covariate. Nonresponse rows are
// written with an empty response so ingestion reproduces the dataset.
void write_microdata(const PanelDataset& data, std::ostream& out, char delimiter = ',');
// Schema matching `write_microdata` output.
MicrodataSchema canonical_schema(const PanelDataset& data);

PopulationCells ingest_cells(const std::string& path, const MicrodataSchema& schema);
PopulationCells ingest_cells(std::istream& in, const MicrodataSchema& schema,
                             const std::string& source = "<stream>");
void write_cells(const PopulationCells& cells, std::ostream& out, char delimiter = ',');

// Throws DataError naming the first (area, week) without any cell.
void check_cell_coverage(const PopulationCells& cells, int n_areas, int n_weeks);

}  // namespace tulm
