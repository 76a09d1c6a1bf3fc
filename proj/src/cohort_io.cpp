#include "transport/cohort_io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>
#include <json.hpp>

#include "transport/error.hpp"

namespace transport {

using nlohmann::json;

CovariateSchema parse_schema(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(std::string("schema is not valid JSON: ") + e.what());
  }
  if (!doc.contains("covariates") || !doc["covariates"].is_array()) {
    throw Error("schema must contain a 'covariates' array");
  }
  std::vector<CovariateSpec> entries;
  for (const auto& item : doc["covariates"]) {
    CovariateSpec spec;
    spec.name = item.at("name").get<std::string>();
    spec.kind = parse_kind(item.value("kind", std::string("numeric")));
    if (item.contains("levels")) spec.levels = item["levels"].get<std::vector<std::string>>();
    spec.unit = item.value("unit", std::string());
    entries.push_back(std::move(spec));
  }
  return CovariateSchema(std::move(entries));
}

CovariateSchema read_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open schema file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_schema(buf.str());
}

std::string schema_to_json(const CovariateSchema& schema) {
  json arr = json::array();
  for (const auto& e : schema.entries()) {
    json item = {{"name", e.name}, {"kind", std::string(to_string(e.kind))}};
    if (e.kind == CovariateKind::Categorical) item["levels"] = e.levels;
    if (!e.unit.empty()) item["unit"] = e.unit;
    arr.push_back(std::move(item));
  }
  return json{{"covariates", arr}}.dump(2) + "\n";
}

void write_schema(const std::filesystem::path& path, const CovariateSchema& schema) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write schema file " + path.string());
  out << schema_to_json(schema);
}

namespace {

std::vector<std::string> split_line(const std::string& line, char delimiter) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delimiter) {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

bool is_missing(const std::string& s) { return s.empty() || s == "NA" || s == "NaN"; }

double parse_number(const std::string& s, const std::string& what) {
  double v = 0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) throw Error("cannot parse '" + s + "' as a number for " + what);
  return v;
}

double parse_flag(const std::string& s, const std::string& what) {
  if (s == "1" || s == "true" || s == "TRUE") return 1.0;
  if (s == "0" || s == "false" || s == "FALSE") return 0.0;
  throw Error("expected 0/1 for " + what + ", got '" + s + "'");
}

std::string quote(const std::string& s, char delimiter) {
  if (s.find(delimiter) == std::string::npos && s.find('"') == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

Cohort read_cohort(std::istream& in, const CovariateSchema& schema, CohortRole role, char delimiter) {
  std::string line;
  if (!std::getline(in, line)) throw Error("cohort file is empty");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_line(line, delimiter);

  std::unordered_map<std::string, std::size_t> column_of;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (!column_of.emplace(header[c], c).second) throw Error("duplicate column '" + header[c] + "'");
    const bool reserved = header[c] == "id" || header[c] == "arm" || header[c] == "event" ||
                          header[c] == "time";
    if (!reserved && !schema.find(header[c])) {
      throw Error("column '" + header[c] + "' is not declared in the schema");
    }
  }
  auto require = [&](const std::string& name) {
    auto it = column_of.find(name);
    if (it == column_of.end()) throw Error("cohort file lacks column '" + name + "'");
    return it->second;
  };
  const std::size_t id_col = require("id");
  std::vector<std::size_t> cov_cols;
  for (const auto& e : schema.entries()) cov_cols.push_back(require(e.name));
  std::optional<std::size_t> arm_col, event_col, time_col;
  if (role == CohortRole::Source) {
    arm_col = require("arm");
    event_col = require("event");
    time_col = require("time");
  } else {
    if (column_of.contains("arm")) arm_col = column_of["arm"];
    if (column_of.contains("event")) event_col = column_of["event"];
    if (column_of.contains("time")) time_col = column_of["time"];
  }

  std::vector<SubjectRecord> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_line(line, delimiter);
    if (fields.size() != header.size()) {
      throw Error("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                  " fields, got " + std::to_string(fields.size()));
    }
    SubjectRecord rec;
    rec.id = fields[id_col];
    if (rec.id.empty()) throw Error("line " + std::to_string(line_no) + ": empty id");
    const std::string where = "line " + std::to_string(line_no);
    for (std::size_t j = 0; j < schema.size(); ++j) {
      const auto& spec = schema[j];
      const auto& raw = fields[cov_cols[j]];
      const std::string what = "'" + spec.name + "' (" + where + ")";
      if (is_missing(raw)) throw Error("missing value for " + what + "; imputation is not supported");
      switch (spec.kind) {
        case CovariateKind::Numeric:
          rec.covariates.push_back(parse_number(raw, what));
          break;
        case CovariateKind::Binary:
          rec.covariates.push_back(parse_flag(raw, what));
          break;
        case CovariateKind::Categorical: {
          auto lv = spec.level_index(raw);
          if (!lv) throw Error("undeclared level '" + raw + "' for " + what);
          rec.covariates.push_back(static_cast<double>(*lv));
          break;
        }
      }
    }
    if (arm_col && !is_missing(fields[*arm_col])) rec.arm = fields[*arm_col];
    const bool has_event = event_col && !is_missing(fields[*event_col]);
    const bool has_time = time_col && !is_missing(fields[*time_col]);
    if (has_event) rec.event = parse_flag(fields[*event_col], "event (" + where + ")") == 1.0;
    if (has_time) rec.time = parse_number(fields[*time_col], "time (" + where + ")");
    rows.push_back(std::move(rec));
  }
  return Cohort(schema, std::move(rows), role);
}

Cohort read_cohort(const std::filesystem::path& path, const CovariateSchema& schema, CohortRole role,
                   char delimiter) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open cohort file " + path.string());
  try {
    return read_cohort(in, schema, role, delimiter);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void write_cohort(std::ostream& out, const Cohort& cohort, char delimiter) {
  const auto& schema = cohort.schema();
  const bool outcomes = cohort.role() == CohortRole::Source;
  out << "id";
  for (const auto& e : schema.entries()) out << delimiter << quote(e.name, delimiter);
  if (outcomes) out << delimiter << "arm" << delimiter << "event" << delimiter << "time";
  out << '\n';
  for (const auto& r : cohort.rows()) {
    out << quote(r.id, delimiter);
    for (std::size_t j = 0; j < schema.size(); ++j) {
      out << delimiter;
      const double v = r.covariates[j];
      switch (schema[j].kind) {
        case CovariateKind::Numeric:
          out << fmt::format("{}", v);
          break;
        case CovariateKind::Binary:
          out << (v != 0.0 ? '1' : '0');
          break;
        case CovariateKind::Categorical:
          out << quote(schema[j].levels[static_cast<std::size_t>(v)], delimiter);
          break;
      }
    }
    if (outcomes) {
      out << delimiter << quote(*r.arm, delimiter) << delimiter << (*r.event ? '1' : '0') << delimiter
          << fmt::format("{}", *r.time);
    }
    out << '\n';
  }
}

void write_cohort(const std::filesystem::path& path, const Cohort& cohort, char delimiter) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write cohort file " + path.string());
  write_cohort(out, cohort, delimiter);
}

}  // namespace transport
