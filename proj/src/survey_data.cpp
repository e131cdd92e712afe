#include "tulm/survey_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "tulm/error.hpp"
#include "tulm/evaluation.hpp"
#include "tulm/table.hpp"

namespace tulm {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::string where(const std::string& source, std::size_t line) {
  std::ostringstream os;
  os << source << ":" << line;
  return os.str();
}

double parse_real(const std::string& field, const char* what, const std::string& loc) {
  const std::string s = trim(field);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw DataError(loc + ": malformed " + what + " '" + field + "'");
  }
  return v;
}

int parse_index(const std::string& field, const char* what, const std::string& loc) {
  const std::string s = trim(field);
  int v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size() || v < 1) {
    throw DataError(loc + ": malformed " + what + " '" + field + "' (expected integer >= 1)");
  }
  return v;
}

// Evaluates the schema covariate specs on a table row.
class CovariateEncoder {
 public:
  CovariateEncoder(const MicrodataSchema& schema, const Table& table, const std::string& source)
      : schema_(schema), names_(design_names(schema)) {
    for (const auto& spec : schema.covariates) {
      if (spec.kind == CovariateSpec::Kind::kCategorical && spec.levels.empty()) {
        throw ConfigError("categorical covariate '" + spec.name + "' needs an explicit level list");
      }
      columns_.push_back(table.require_column(spec.column, source));
    }
  }

  const std::vector<std::string>& names() const { return names_; }

  std::vector<double> encode(const std::vector<std::string>& row, const std::string& loc) const {
    std::vector<double> x;
    x.reserve(names_.size());
    if (schema_.intercept) x.push_back(1.0);
    for (std::size_t k = 0; k < schema_.covariates.size(); ++k) {
      const auto& spec = schema_.covariates[k];
      const std::string& field = row[columns_[k]];
      if (spec.kind == CovariateSpec::Kind::kNumeric) {
        const double raw = parse_real(field, "covariate", loc);
        x.push_back(std::pow((raw - spec.center) / spec.scale, spec.power));
      } else {
        const std::string v = trim(field);
        const bool known = v == spec.reference ||
                           std::find(spec.levels.begin(), spec.levels.end(), v) != spec.levels.end();
        if (!known) throw DataError(loc + ": unknown level '" + v + "' for '" + spec.name + "'");
        for (const auto& level : spec.levels) {
          if (level == spec.reference) continue;
          x.push_back(v == level ? 1.0 : 0.0);
        }
      }
    }
    return x;
  }

 private:
  const MicrodataSchema& schema_;
  std::vector<std::string> names_;
  std::vector<int> columns_;
};

}  // namespace

const char* to_string(ResponseMode mode) {
  return mode == ResponseMode::kGaussian ? "gaussian" : "binary";
}

ResponseMode parse_response_mode(const std::string& s) {
  if (s == "gaussian") return ResponseMode::kGaussian;
  if (s == "binary") return ResponseMode::kBinary;
  throw ConfigError("unknown mode '" + s + "' (expected gaussian|binary)");
}

const char* to_string(PrevStatus s) {
  switch (s) {
    case PrevStatus::kNotSampled: return "not_sampled";
    case PrevStatus::kPrevNo: return "prev_no";
    case PrevStatus::kPrevYes: return "prev_yes";
  }
  return "?";
}

PrevStatus parse_prev_status(const std::string& s) {
  if (s == "not_sampled") return PrevStatus::kNotSampled;
  if (s == "prev_no") return PrevStatus::kPrevNo;
  if (s == "prev_yes") return PrevStatus::kPrevYes;
  throw DataError("unknown previous-status value '" + s + "'");
}

std::vector<std::string> design_names(const MicrodataSchema& schema) {
  std::vector<std::string> names;
  if (schema.intercept) names.emplace_back(kInterceptName);
  for (const auto& spec : schema.covariates) {
    if (spec.kind == CovariateSpec::Kind::kNumeric) {
      names.push_back(spec.name);
    } else {
      for (const auto& level : spec.levels) {
        if (level != spec.reference) names.push_back(spec.name + "=" + level);
      }
    }
  }
  return names;
}

bool UnitWeekRecord::operator==(const UnitWeekRecord& o) const {
  const bool sw_equal = (std::isnan(scaled_weight) && std::isnan(o.scaled_weight)) ||
                        scaled_weight == o.scaled_weight;
  return unit_id == o.unit_id && area == o.area && week == o.week && response == o.response &&
         trials == o.trials && design_weight == o.design_weight && sw_equal &&
         covariates == o.covariates && prev_status == o.prev_status &&
         prev_response == o.prev_response && prev_index == o.prev_index;
}

bool PanelDataset::operator==(const PanelDataset& o) const {
  return mode == o.mode && n_areas == o.n_areas && n_weeks == o.n_weeks &&
         covariate_names == o.covariate_names && records == o.records &&
         first_time == o.first_time && followup == o.followup && nonresponse == o.nonresponse &&
         has_prev_covariate == o.has_prev_covariate && weights_scaled == o.weights_scaled;
}

std::vector<double> PopulationCells::domain_totals() const {
  std::vector<double> totals(static_cast<std::size_t>(n_areas) * n_weeks, 0.0);
  for (const auto& c : cells) totals[static_cast<std::size_t>(c.week) * n_areas + c.area] += c.count;
  return totals;
}

std::vector<std::pair<int, double>> DomainFilter::resolve(
    const std::vector<std::string>& names) const {
  std::vector<std::pair<int, double>> out;
  for (const auto& [name, value] : equals) {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw ConfigError("domain filter names unknown column '" + name + "'");
    out.emplace_back(static_cast<int>(it - names.begin()), value);
  }
  return out;
}

bool matches(const std::vector<std::pair<int, double>>& resolved,
             const std::vector<double>& covariates) {
  for (const auto& [idx, value] : resolved) {
    if (covariates[idx] != value) return false;
  }
  return true;
}

void build_partitions(PanelDataset& data) {
  std::stable_sort(data.records.begin(), data.records.end(),
                   [](const UnitWeekRecord& a, const UnitWeekRecord& b) { return a.week < b.week; });
  data.first_time.assign(data.n_weeks, {});
  data.followup.assign(data.n_weeks, {});
  std::unordered_map<std::string, int> previous_week;  // unit -> record index at week t-1
  std::unordered_map<std::string, int> current_week;
  int week = -1;
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    auto& r = data.records[i];
    if (r.week < 0 || r.week >= data.n_weeks || r.area < 0 || r.area >= data.n_areas) {
      std::ostringstream os;
      os << "record for unit '" << r.unit_id << "' has area/week outside 1.." << data.n_areas
         << " / 1.." << data.n_weeks;
      throw DataError(os.str());
    }
    if (r.week != week) {
      if (r.week == week + 1) {
        previous_week = std::move(current_week);
      } else {
        previous_week.clear();
      }
      current_week.clear();
      week = r.week;
    }
    if (!current_week.emplace(r.unit_id, static_cast<int>(i)).second) {
      std::ostringstream os;
      os << "duplicate (unit, week) pair: unit '" << r.unit_id << "' week " << r.week + 1;
      throw DataError(os.str());
    }
    const auto it = previous_week.find(r.unit_id);
    if (it != previous_week.end()) {
      r.prev_index = it->second;
      r.prev_response = data.records[it->second].response;
      data.followup[week].push_back(static_cast<int>(i));
    } else {
      r.prev_index = -1;
      r.prev_response.reset();
      data.first_time[week].push_back(static_cast<int>(i));
    }
  }
}

PanelDataset ingest_microdata(std::istream& in, const MicrodataSchema& schema, ResponseMode mode,
                              const std::string& source) {
  const Table table = parse_table(in, schema.delimiter, source);
  const int c_unit = table.require_column(schema.unit_id, source);
  const int c_area = table.require_column(schema.area, source);
  const int c_week = table.require_column(schema.week, source);
  const int c_weight = table.require_column(schema.weight, source);
  const int c_resp = table.require_column(schema.response, source);
  const int c_trials = schema.trials.empty() ? -1 : table.require_column(schema.trials, source);
  const CovariateEncoder encoder(schema, table, source);
  if (schema.box_cox_lambda && mode != ResponseMode::kGaussian) {
    throw ConfigError("Box-Cox transform applies to gaussian mode only");
  }

  PanelDataset data;
  data.mode = mode;
  data.covariate_names = encoder.names();

  // unit -> weeks seen (all rows, including nonresponse)
  std::map<std::string, std::vector<std::pair<int, std::size_t>>> appearances;
  int max_area = 0;
  int max_week = 0;
  for (std::size_t row = 0; row < table.rows.size(); ++row) {
    const auto& f = table.rows[row];
    const std::string loc = where(source, table.line_numbers[row]);
    UnitWeekRecord r;
    r.unit_id = trim(f[c_unit]);
    if (r.unit_id.empty()) throw DataError(loc + ": empty unit id");
    r.area = parse_index(f[c_area], "area", loc) - 1;
    r.week = parse_index(f[c_week], "week", loc) - 1;
    max_area = std::max(max_area, r.area + 1);
    max_week = std::max(max_week, r.week + 1);
    appearances[r.unit_id].emplace_back(r.week, table.line_numbers[row]);

    const std::string resp = trim(f[c_resp]);
    if (resp.empty() || resp == "NA") {
      data.nonresponse.emplace_back(r.unit_id, r.week);
      continue;
    }
    r.design_weight = parse_real(f[c_weight], "weight", loc);
    if (!(r.design_weight > 0.0)) throw DataError(loc + ": design weight must be positive");
    r.response = parse_real(resp, "response", loc);
    if (c_trials >= 0) {
      r.trials = parse_real(f[c_trials], "trials", loc);
      if (!(r.trials >= 1.0) || r.trials != std::floor(r.trials)) {
        throw DataError(loc + ": trials must be a positive integer");
      }
    }
    if (mode == ResponseMode::kBinary) {
      if (r.response < 0.0 || r.response > r.trials || r.response != std::floor(r.response)) {
        throw DataError(loc + ": binary response must be an integer in [0, trials]");
      }
    } else if (schema.box_cox_lambda) {
      if (!(r.response > 0.0)) throw DataError(loc + ": Box-Cox requires a positive response");
      r.response = box_cox(r.response, *schema.box_cox_lambda);
    }
    r.covariates = encoder.encode(f, loc);
    data.records.push_back(std::move(r));
  }

  for (auto& [unit, weeks] : appearances) {
    std::sort(weeks.begin(), weeks.end());
    for (std::size_t k = 1; k < weeks.size(); ++k) {
      if (weeks[k].first == weeks[k - 1].first) {
        std::ostringstream os;
        os << source << ":" << weeks[k].second << ": duplicate (unit, week) pair for unit '"
           << unit << "' week " << weeks[k].first + 1;
        throw DataError(os.str());
      }
      if (weeks[k].first != weeks[k - 1].first + 1) {
        std::ostringstream os;
        os << source << ":" << weeks[k].second << ": non-consecutive repeat appearance of unit '"
           << unit << "' (weeks " << weeks[k - 1].first + 1 << " and " << weeks[k].first + 1
           << ")";
        throw DataError(os.str());
      }
    }
    if (schema.max_consecutive_weeks > 0 &&
        static_cast<int>(weeks.size()) > schema.max_consecutive_weeks) {
      std::ostringstream os;
      os << source << ": unit '" << unit << "' appears in " << weeks.size()
         << " weeks (limit " << schema.max_consecutive_weeks << ")";
      throw DataError(os.str());
    }
  }

  data.n_areas = schema.n_areas > 0 ? schema.n_areas : max_area;
  data.n_weeks = schema.n_weeks > 0 ? schema.n_weeks : max_week;
  if (max_area > data.n_areas || max_week > data.n_weeks) {
    throw DataError(source + ": area or week index exceeds configured n_areas/n_weeks");
  }
  build_partitions(data);
  return data;
}

PanelDataset ingest_microdata(const std::string& path, const MicrodataSchema& schema,
                              ResponseMode mode) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open microdata file '" + path + "'");
  return ingest_microdata(in, schema, mode, path);
}

PanelDataset scale_weights(const PanelDataset& data) {
  PanelDataset out = data;
  std::vector<double> totals(data.n_weeks, 0.0);
  std::vector<std::size_t> counts(data.n_weeks, 0);
  for (const auto& r : out.records) {
    if (!(r.design_weight > 0.0)) {
      throw DataError("design weight must be positive (unit '" + r.unit_id + "')");
    }
    totals[r.week] += r.design_weight;
    ++counts[r.week];
  }
  for (int t = 0; t < data.n_weeks; ++t) {
    if (counts[t] > 0 && !(totals[t] > 0.0)) {
      throw DataError("week " + std::to_string(t + 1) + " has zero total weight");
    }
  }
  for (auto& r : out.records) {
    r.scaled_weight = static_cast<double>(counts[r.week]) * r.design_weight / totals[r.week];
  }
  out.weights_scaled = true;
  return out;
}

PanelDataset build_prev_covariate(const PanelDataset& data) {
  PanelDataset out = data;
  if (!out.has_prev_covariate) {
    out.covariate_names.emplace_back(kPrevNoName);
    out.covariate_names.emplace_back(kPrevYesName);
  }
  for (auto& r : out.records) {
    if (r.prev_index >= 0) {
      r.prev_status = data.records[r.prev_index].response > 0.5 ? PrevStatus::kPrevYes
                                                                : PrevStatus::kPrevNo;
    } else {
      r.prev_status = PrevStatus::kNotSampled;
    }
    if (!out.has_prev_covariate) {
      r.covariates.push_back(0.0);
      r.covariates.push_back(0.0);
    }
    const std::size_t n = r.covariates.size();
    r.covariates[n - 2] = r.prev_status == PrevStatus::kPrevNo ? 1.0 : 0.0;
    r.covariates[n - 1] = r.prev_status == PrevStatus::kPrevYes ? 1.0 : 0.0;
  }
  out.has_prev_covariate = true;
  return out;
}

namespace {

std::size_t base_dim(const PanelDataset& data) {
  return data.covariate_names.size() - (data.has_prev_covariate ? 2 : 0);
}

}  // namespace

void write_microdata(const PanelDataset& data, std::ostream& out, char delimiter) {
  const std::size_t p = base_dim(data);
  std::vector<std::string> header = {"unit_id", "area", "week", "response", "trials", "weight"};
  for (std::size_t k = 0; k < p; ++k) header.push_back(data.covariate_names[k]);
  write_row(out, header, delimiter);
  for (const auto& r : data.records) {
    std::vector<std::string> row = {r.unit_id,
                                    std::to_string(r.area + 1),
                                    std::to_string(r.week + 1),
                                    format_double(r.response),
                                    format_double(r.trials),
                                    format_double(r.design_weight)};
    for (std::size_t k = 0; k < p; ++k) row.push_back(format_double(r.covariates[k]));
    write_row(out, row, delimiter);
  }
  std::vector<std::string> blank(p, "0");
  for (const auto& [unit, week] : data.nonresponse) {
    std::vector<std::string> row = {unit, "1", std::to_string(week + 1), "", "1", "1"};
    row.insert(row.end(), blank.begin(), blank.end());
    write_row(out, row, delimiter);
  }
}

MicrodataSchema canonical_schema(const PanelDataset& data) {
  MicrodataSchema s;
  s.unit_id = "unit_id";
  s.area = "area";
  s.week = "week";
  s.response = "response";
  s.trials = "trials";
  s.weight = "weight";
  s.intercept = false;
  s.n_areas = data.n_areas;
  s.n_weeks = data.n_weeks;
  s.max_consecutive_weeks = 0;
  const std::size_t p = base_dim(data);
  for (std::size_t k = 0; k < p; ++k) {
    CovariateSpec c;
    c.name = data.covariate_names[k];
    c.column = data.covariate_names[k];
    s.covariates.push_back(c);
  }
  return s;
}

PopulationCells ingest_cells(std::istream& in, const MicrodataSchema& schema,
                             const std::string& source) {
  const Table table = parse_table(in, schema.delimiter, source);
  const int c_area = table.require_column(schema.area, source);
  const int c_week = table.require_column(schema.week, source);
  const int c_count = table.require_column(schema.count, source);
  const int c_prev = schema.prev_status.empty() ? -1 : table.require_column(schema.prev_status, source);
  const CovariateEncoder encoder(schema, table, source);

  PopulationCells cells;
  cells.covariate_names = encoder.names();
  int max_area = 0;
  int max_week = 0;
  for (std::size_t row = 0; row < table.rows.size(); ++row) {
    const auto& f = table.rows[row];
    const std::string loc = where(source, table.line_numbers[row]);
    PopulationCell c;
    c.area = parse_index(f[c_area], "area", loc) - 1;
    c.week = parse_index(f[c_week], "week", loc) - 1;
    c.count = parse_real(f[c_count], "count", loc);
    if (c.count < 0.0) throw DataError(loc + ": cell count must be nonnegative");
    if (c_prev >= 0) {
      const std::string v = trim(f[c_prev]);
      if (!v.empty()) c.prev_status = parse_prev_status(v);
    }
    c.covariates = encoder.encode(f, loc);
    max_area = std::max(max_area, c.area + 1);
    max_week = std::max(max_week, c.week + 1);
    cells.cells.push_back(std::move(c));
  }
  cells.n_areas = schema.n_areas > 0 ? schema.n_areas : max_area;
  cells.n_weeks = schema.n_weeks > 0 ? schema.n_weeks : max_week;
  if (max_area > cells.n_areas || max_week > cells.n_weeks) {
    throw DataError(source + ": cell area or week exceeds configured n_areas/n_weeks");
  }
  return cells;
}

PopulationCells ingest_cells(const std::string& path, const MicrodataSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open cell-count file '" + path + "'");
  return ingest_cells(in, schema, path);
}

void write_cells(const PopulationCells& cells, std::ostream& out, char delimiter) {
  bool any_prev = false;
  for (const auto& c : cells.cells) any_prev = any_prev || c.prev_status.has_value();
  std::vector<std::string> header = {"area", "week", "count"};
  if (any_prev) header.emplace_back("prev_status");
  for (const auto& n : cells.covariate_names) header.push_back(n);
  write_row(out, header, delimiter);
  for (const auto& c : cells.cells) {
    std::vector<std::string> row = {std::to_string(c.area + 1), std::to_string(c.week + 1),
                                    format_double(c.count)};
    if (any_prev) row.emplace_back(c.prev_status ? to_string(*c.prev_status) : "");
    for (double v : c.covariates) row.push_back(format_double(v));
    write_row(out, row, delimiter);
  }
}

void check_cell_coverage(const PopulationCells& cells, int n_areas, int n_weeks) {
  std::vector<char> seen(static_cast<std::size_t>(n_areas) * n_weeks, 0);
  for (const auto& c : cells.cells) {
    if (c.area < n_areas && c.week < n_weeks) seen[static_cast<std::size_t>(c.week) * n_areas + c.area] = 1;
  }
  for (int t = 0; t < n_weeks; ++t) {
    for (int j = 0; j < n_areas; ++j) {
      if (!seen[static_cast<std::size_t>(t) * n_areas + j]) {
        std::ostringstream os;
        os << "population cells missing domain (area " << j + 1 << ", week " << t + 1 << ")";
        throw DataError(os.str());
      }
    }
  }
}

}  // namespace tulm
