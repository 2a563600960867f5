// Long CSV reading/writing and validation reports.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "ddiag/error.hpp"
#include "ddiag/format.hpp"
#include "ddiag/panel.hpp"

namespace ddiag {

namespace {

constexpr std::size_t kMaxIssues = 200;

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (*b == '+') ++b;
  auto res = std::from_chars(b, e, v);
  if (res.ec == std::errc() && res.ptr == e) return v;
  if (s == "Inf" || s == "inf") return HUGE_VAL;
  if (s == "-Inf" || s == "-inf") return -HUGE_VAL;
  return std::nullopt;
}

std::optional<long long> parse_int(const std::string& s) {
  if (s.empty()) return std::nullopt;
  long long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec == std::errc() && res.ptr == s.data() + s.size()) return v;
  auto d = parse_double(s);
  if (d && std::isfinite(*d) && std::floor(*d) == *d && std::abs(*d) < 1e15)
    return static_cast<long long>(*d);
  return std::nullopt;
}

bool is_missing_token(const std::string& s) { return s.empty() || s == "NA" || s == "NaN" || s == "."; }

struct Collector {
  ValidationReport& rep;
  void error(std::string code, std::string msg, std::string loc = {}) {
    if (rep.errors.size() < kMaxIssues) rep.errors.push_back({std::move(code), std::move(msg), std::move(loc)});
  }
  void warning(std::string code, std::string msg, std::string loc = {}) {
    if (rep.warnings.size() < kMaxIssues) rep.warnings.push_back({std::move(code), std::move(msg), std::move(loc)});
  }
};

std::vector<std::pair<std::string, int>> group_sizes_of(const PanelDataset& d) {
  std::map<int, int> counts;
  for (int g : d.group()) counts[g]++;
  std::vector<std::pair<std::string, int>> out;
  for (auto [g, c] : counts) out.emplace_back(d.group_label(g), c);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Schema

PanelSchema PanelSchema::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("bad_schema", "schema must be a JSON object");
  static const std::set<std::string> known{"unit", "time", "outcome", "treat", "group", "weight", "tv", "ti"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ValidationError("bad_schema", "unknown schema key: " + it.key());
  PanelSchema s;
  auto str = [&](const char* key) -> std::optional<std::string> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    if (!j.at(key).is_string()) throw ValidationError("bad_schema", std::string("schema key must be a string: ") + key);
    return j.at(key).get<std::string>();
  };
  auto list = [&](const char* key) {
    std::vector<std::string> v;
    if (!j.contains(key)) return v;
    if (!j.at(key).is_array()) throw ValidationError("bad_schema", std::string("schema key must be a list: ") + key);
    for (const auto& e : j.at(key)) v.push_back(e.get<std::string>());
    return v;
  };
  auto unit = str("unit");
  auto time = str("time");
  if (!unit || !time) throw ValidationError("bad_schema", "schema needs \"unit\" and \"time\"");
  s.unit = *unit;
  s.time = *time;
  s.outcome = str("outcome");
  s.treat = str("treat");
  s.group = str("group");
  s.weight = str("weight");
  s.tv = list("tv");
  s.ti = list("ti");
  if (s.treat.has_value() == s.group.has_value())
    throw ValidationError("bad_schema", "schema needs exactly one of \"treat\" or \"group\"");
  return s;
}

nlohmann::json PanelSchema::to_json() const {
  nlohmann::json j;
  j["unit"] = unit;
  j["time"] = time;
  if (outcome) j["outcome"] = *outcome;
  if (treat) j["treat"] = *treat;
  if (group) j["group"] = *group;
  if (weight) j["weight"] = *weight;
  j["tv"] = tv;
  j["ti"] = ti;
  return j;
}

// ---------------------------------------------------------------------------
// Reports

std::string ValidationReport::to_text() const {
  std::ostringstream os;
  os << (ok() ? "OK" : "INVALID") << ": n=" << n << " T=" << T << "\n";
  if (!group_sizes.empty()) {
    os << "groups:";
    for (const auto& [g, c] : group_sizes) os << " " << g << "=" << c;
    os << "\n";
  }
  for (const auto& e : errors)
    os << "error [" << e.code << "] " << e.message << (e.location.empty() ? "" : " (" + e.location + ")") << "\n";
  for (const auto& w : warnings)
    os << "warning [" << w.code << "] " << w.message << (w.location.empty() ? "" : " (" + w.location + ")")
       << "\n";
  return os.str();
}

nlohmann::json ValidationReport::to_json() const {
  auto issues = [](const std::vector<Issue>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& i : v) a.push_back({{"code", i.code}, {"message", i.message}, {"location", i.location}});
    return a;
  };
  nlohmann::json gs = nlohmann::json::array();
  for (const auto& [g, c] : group_sizes) gs.push_back({{"group", g}, {"n", c}});
  return {{"ok", ok()}, {"n", n}, {"T", T}, {"groups", gs}, {"errors", issues(errors)},
          {"warnings", issues(warnings)}};
}

ValidationReport summarize(const PanelDataset& data) {
  ValidationReport r;
  r.n = data.n();
  r.T = data.T();
  r.group_sizes = group_sizes_of(data);
  if (data.never_treated_units().empty())
    r.warnings.push_back({"no_never_treated", "no never-treated units", ""});
  return r;
}

// ---------------------------------------------------------------------------
// Reading

LoadResult read_long_csv(const std::filesystem::path& path, const PanelSchema& schema,
                         const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) {
    LoadResult r;
    r.report.errors.push_back({"io", "cannot open " + path.string(), ""});
    return r;
  }
  return read_long_csv(in, schema, options);
}

LoadResult read_long_csv(std::istream& in, const PanelSchema& schema, const LoadOptions& options) {
  LoadResult result;
  Collector col{result.report};

  std::string line;
  if (!std::getline(in, line)) {
    col.error("empty", "CSV has no header");
    return result;
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  auto header = split_csv_line(line);
  std::map<std::string, int> idx;
  for (std::size_t c = 0; c < header.size(); ++c) idx[trim(header[c])] = static_cast<int>(c);

  auto find = [&](const std::string& name, bool required) -> int {
    auto it = idx.find(name);
    if (it == idx.end()) {
      if (required) col.error("missing_column", "missing column: " + name);
      return -1;
    }
    return it->second;
  };
  const int c_unit = find(schema.unit, true);
  const int c_time = find(schema.time, true);
  int c_y = -1;
  if (schema.outcome) {
    c_y = find(*schema.outcome, options.require_outcome);
    if (c_y < 0 && !options.require_outcome)
      col.warning("no_outcome", "outcome column " + *schema.outcome + " absent; loading covariates only");
  } else if (options.require_outcome) {
    col.error("missing_column", "schema names no outcome column");
  }
  const int c_treat = schema.treat ? find(*schema.treat, true) : -1;
  const int c_group = schema.group ? find(*schema.group, true) : -1;
  const int c_w = schema.weight ? find(*schema.weight, true) : -1;
  std::vector<int> c_tv, c_ti;
  for (const auto& n : schema.tv) c_tv.push_back(find(n, true));
  for (const auto& n : schema.ti) c_ti.push_back(find(n, true));
  if (!result.report.ok()) return result;

  struct Row {
    std::string unit;
    long long time;
    double y, treat, group, w;
    std::vector<double> tv, ti;
    int line;
  };
  std::vector<Row> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto f = split_csv_line(line);
    const std::string loc = "line " + std::to_string(lineno);
    if (f.size() != header.size()) {
      col.error("bad_row", "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(f.size()), loc);
      continue;
    }
    for (auto& s : f) s = trim(s);
    Row r{};
    r.line = lineno;
    r.unit = f[static_cast<std::size_t>(c_unit)];
    if (r.unit.empty()) col.error("missing_value", "empty unit id", loc);
    auto t = parse_int(f[static_cast<std::size_t>(c_time)]);
    if (!t) {
      col.error("non_numeric", "non-numeric cell in column " + schema.time + ": '" + f[static_cast<std::size_t>(c_time)] + "'", loc);
      continue;
    }
    r.time = *t;
    auto num = [&](int c, const std::string& name) -> double {
      const auto& s = f[static_cast<std::size_t>(c)];
      if (is_missing_token(s)) {
        col.error("missing_value", "missing value in column " + name, loc);
        return 0.0;
      }
      auto v = parse_double(s);
      if (!v || !std::isfinite(*v)) {
        col.error("non_numeric", "non-numeric cell in column " + name + ": '" + s + "'", loc);
        return 0.0;
      }
      return *v;
    };
    if (c_y >= 0) r.y = num(c_y, *schema.outcome);
    if (c_treat >= 0) r.treat = num(c_treat, *schema.treat);
    if (c_group >= 0) {
      const auto& s = f[static_cast<std::size_t>(c_group)];
      if (is_missing_token(s)) {
        r.group = HUGE_VAL;
      } else {
        auto v = parse_double(s);
        if (!v) col.error("non_numeric", "non-numeric cell in column " + *schema.group + ": '" + s + "'", loc);
        r.group = v.value_or(HUGE_VAL);
      }
    }
    r.w = c_w >= 0 ? num(c_w, *schema.weight) : 1.0;
    for (std::size_t j = 0; j < c_tv.size(); ++j) r.tv.push_back(num(c_tv[j], schema.tv[j]));
    for (std::size_t j = 0; j < c_ti.size(); ++j) r.ti.push_back(num(c_ti[j], schema.ti[j]));
    rows.push_back(std::move(r));
  }
  if (rows.empty()) col.error("empty", "CSV has no data rows");
  if (!result.report.ok()) return result;

  // Units and periods.
  std::set<long long> period_set;
  std::vector<std::string> units;
  {
    std::set<std::string> seen;
    for (const auto& r : rows) {
      period_set.insert(r.time);
      if (seen.insert(r.unit).second) units.push_back(r.unit);
    }
  }
  const bool numeric_ids = std::all_of(units.begin(), units.end(), [](const std::string& u) {
    return parse_int(u).has_value() && u.find_first_not_of("-0123456789") == std::string::npos;
  });
  if (numeric_ids)
    std::sort(units.begin(), units.end(),
              [](const std::string& a, const std::string& b) { return std::stoll(a) < std::stoll(b); });
  else
    std::sort(units.begin(), units.end());
  std::vector<long long> periods(period_set.begin(), period_set.end());
  for (std::size_t t = 1; t < periods.size(); ++t)
    if (periods[t] != periods[t - 1] + 1)
      col.error("nonconsecutive_periods",
                "periods are not consecutive: " + std::to_string(periods[t - 1]) + " then " + std::to_string(periods[t]));
  if (periods.size() < 2) col.error("too_few_periods", "panel needs at least two periods");
  if (!result.report.ok()) return result;

  const int n = static_cast<int>(units.size());
  const int T = static_cast<int>(periods.size());
  std::map<std::string, int> unit_pos;
  for (int i = 0; i < n; ++i) unit_pos[units[static_cast<std::size_t>(i)]] = i;
  std::vector<std::vector<const Row*>> cell(static_cast<std::size_t>(n), std::vector<const Row*>(static_cast<std::size_t>(T), nullptr));
  for (const auto& r : rows) {
    const int i = unit_pos[r.unit];
    const int t = static_cast<int>(r.time - periods.front());
    auto& slot = cell[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)];
    if (slot)
      col.error("duplicate_row", "duplicate unit-period: unit " + r.unit + ", period " + std::to_string(r.time),
                "line " + std::to_string(r.line));
    else
      slot = &r;
  }
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < T; ++t)
      if (!cell[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)])
        col.error("unbalanced_panel", "unbalanced panel: unit " + units[static_cast<std::size_t>(i)] + " lacks period " +
                                          std::to_string(periods[static_cast<std::size_t>(t)]));
  if (!result.report.ok()) return result;

  auto at = [&](int i, int t) -> const Row& { return *cell[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)]; };

  PanelParts p;
  p.unit_ids = units;
  for (auto v : periods) p.periods.push_back(static_cast<int>(v));
  if (c_y >= 0) {
    Eigen::MatrixXd y(n, T);
    for (int i = 0; i < n; ++i)
      for (int t = 0; t < T; ++t) y(i, t) = at(i, t).y;
    p.outcome = std::move(y);
  }
  p.tv_names = schema.tv;
  for (std::size_t j = 0; j < schema.tv.size(); ++j) {
    Eigen::MatrixXd m(n, T);
    for (int i = 0; i < n; ++i)
      for (int t = 0; t < T; ++t) m(i, t) = at(i, t).tv[j];
    p.tv.push_back(std::move(m));
  }
  p.ti_names = schema.ti;
  p.ti.resize(n, static_cast<Eigen::Index>(schema.ti.size()));
  for (std::size_t j = 0; j < schema.ti.size(); ++j)
    for (int i = 0; i < n; ++i) {
      const double v0 = at(i, 0).ti[j];
      for (int t = 1; t < T; ++t)
        if (at(i, t).ti[j] != v0) {
          col.error("ti_varies", "time-invariant column varies within unit: " + schema.ti[j] + ", unit " +
                                     units[static_cast<std::size_t>(i)]);
          break;
        }
      p.ti(i, static_cast<Eigen::Index>(j)) = v0;
    }
  p.weight.resize(n);
  for (int i = 0; i < n; ++i) {
    const double w0 = at(i, 0).w;
    for (int t = 1; t < T; ++t)
      if (at(i, t).w != w0) {
        col.error("weight_varies", "sample weight varies within unit " + units[static_cast<std::size_t>(i)]);
        break;
      }
    if (!(w0 > 0.0)) col.error("nonpositive_weight", "sample weight must be positive for unit " + units[static_cast<std::size_t>(i)]);
    p.weight(i) = w0;
  }

  // Groups.
  p.group.assign(static_cast<std::size_t>(n), T + 1);
  std::vector<int> drop;
  for (int i = 0; i < n; ++i) {
    const std::string& uid = units[static_cast<std::size_t>(i)];
    if (c_treat >= 0) {
      int prev = 0;
      bool bad = false;
      for (int t = 0; t < T && !bad; ++t) {
        const double d = at(i, t).treat;
        if (d != 0.0 && d != 1.0) {
          col.error("bad_treatment", "treatment indicator must be 0 or 1 (unit " + uid + ")");
          bad = true;
        } else if (static_cast<int>(d) < prev) {
          col.error("treatment_reversal", "treatment reversal; staggered adoption violated (unit " + uid + ")");
          bad = true;
        } else {
          if (d == 1.0 && prev == 0) p.group[static_cast<std::size_t>(i)] = t + 1;
          prev = static_cast<int>(d);
        }
      }
    } else {
      const double g0 = at(i, 0).group;
      bool bad = false;
      for (int t = 1; t < T; ++t)
        if (!(at(i, t).group == g0 || (std::isinf(g0) && std::isinf(at(i, t).group)))) {
          col.error("group_varies", "group column varies within unit " + uid);
          bad = true;
          break;
        }
      if (bad) continue;
      if (std::isinf(g0) || g0 == 0.0 || g0 > static_cast<double>(periods.back())) continue;
      if (std::floor(g0) != g0 || g0 < static_cast<double>(periods.front())) {
        col.error("bad_group", "group value is not a panel period for unit " + uid);
        continue;
      }
      p.group[static_cast<std::size_t>(i)] = static_cast<int>(static_cast<long long>(g0) - periods.front()) + 1;
    }
    if (p.group[static_cast<std::size_t>(i)] == 1) {
      if (options.drop_always_treated)
        drop.push_back(i);
      else
        col.error("treated_in_first_period", "treated in period 1: unit " + uid);
    }
  }
  if (!result.report.ok()) return result;

  // Dropped units get a placeholder group so the full panel validates; they are cut below.
  for (int i : drop) p.group[static_cast<std::size_t>(i)] = T + 1;
  try {
    PanelDataset full(std::move(p));
    if (!drop.empty()) {
      std::vector<int> keep;
      std::size_t k = 0;
      for (int i = 0; i < n; ++i) {
        if (k < drop.size() && drop[k] == i) {
          ++k;
          continue;
        }
        keep.push_back(i);
      }
      col.warning("dropped_always_treated", std::to_string(drop.size()) + " unit(s) treated in period 1 dropped");
      if (keep.empty()) {
        col.error("empty", "no units left after dropping always-treated units");
        return result;
      }
      result.data = select_units(full, keep);
    } else {
      result.data = std::move(full);
    }
  } catch (const ValidationError& e) {
    col.error(e.code(), e.what());
    return result;
  }
  auto summary = summarize(*result.data);
  result.report.n = summary.n;
  result.report.T = summary.T;
  result.report.group_sizes = summary.group_sizes;
  for (auto& w : summary.warnings) result.report.warnings.push_back(w);
  return result;
}

PanelDataset load_long_csv(const std::filesystem::path& path, const PanelSchema& schema,
                           const LoadOptions& options) {
  auto r = read_long_csv(path, schema, options);
  if (!r.report.ok()) {
    const auto& e = r.report.errors.front();
    throw ValidationError(e.code, e.message);
  }
  return std::move(*r.data);
}

// ---------------------------------------------------------------------------
// Writing

PanelSchema schema_for_written(const PanelDataset& data) {
  PanelSchema s;
  s.unit = "unit";
  s.time = "time";
  if (data.has_outcome()) s.outcome = "y";
  s.treat = "treat";
  s.weight = "weight";
  s.tv = data.tv_names();
  s.ti = data.ti_names();
  return s;
}

void write_long_csv(const PanelDataset& data, std::ostream& out) {
  out << "unit,time";
  if (data.has_outcome()) out << ",y";
  out << ",treat";
  for (const auto& n : data.tv_names()) out << "," << n;
  for (const auto& n : data.ti_names()) out << "," << n;
  out << ",weight\n";
  for (int i = 0; i < data.n(); ++i) {
    const int g = data.group()[static_cast<std::size_t>(i)];
    for (int t = 1; t <= data.T(); ++t) {
      out << data.unit_ids()[static_cast<std::size_t>(i)] << "," << data.period_label(t);
      if (data.has_outcome()) out << "," << format_double(data.outcome()(i, t - 1));
      out << "," << (t >= g ? 1 : 0);
      for (int j = 0; j < data.k(); ++j) out << "," << format_double(data.tv(j)(i, t - 1));
      for (int j = 0; j < data.l(); ++j) out << "," << format_double(data.ti()(i, j));
      out << "," << format_double(data.weight()(i)) << "\n";
    }
  }
}

void write_long_csv(const PanelDataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("io", "cannot write " + path.string());
  write_long_csv(data, out);
}

}  // namespace ddiag
