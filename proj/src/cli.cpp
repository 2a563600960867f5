#include "ddiag/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "ddiag/balance.hpp"
#include "ddiag/error.hpp"
#include "ddiag/format.hpp"
#include "ddiag/twfe.hpp"

#ifndef DDIAG_FIXTURE_DIR
#define DDIAG_FIXTURE_DIR "fixtures"
#endif

namespace ddiag {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// RunConfig

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("bad_config", "config must be a JSON object");
  static const std::vector<std::string> keys{"input", "schema", "method", "covariates", "comparison", "anticipation",
                                             "bootstrap", "trim", "output_dir", "formats", "threads",
                                             "drop_always_treated", "t_star", "region", "functionals",
                                             "schema_version"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(keys.begin(), keys.end(), it.key()) == keys.end())
      throw ValidationError("bad_config", "unknown config key: " + it.key());
  RunConfig c;
  try {
    if (j.contains("input")) c.input = j.at("input").get<std::string>();
    if (j.contains("schema")) c.schema = PanelSchema::from_json(j.at("schema"));
    if (j.contains("method")) c.method = j.at("method").get<std::string>();
    if (j.contains("covariates")) c.covariates = CovariateSpec::from_json(j.at("covariates"));
    if (j.contains("comparison")) c.comparison = j.at("comparison").get<std::string>();
    if (j.contains("anticipation")) c.anticipation = j.at("anticipation").get<int>();
    if (j.contains("bootstrap")) {
      const auto& b = j.at("bootstrap");
      for (auto it = b.begin(); it != b.end(); ++it)
        if (it.key() != "reps" && it.key() != "seed")
          throw ValidationError("bad_config", "unknown bootstrap key: " + it.key());
      c.bootstrap_reps = b.value("reps", 0);
      c.seed = b.value("seed", std::uint64_t{1});
    }
    if (j.contains("trim")) c.trim = j.at("trim").get<bool>();
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("formats")) c.formats = j.at("formats").get<std::vector<std::string>>();
    if (j.contains("threads")) c.threads = j.at("threads").get<int>();
    if (j.contains("drop_always_treated")) c.drop_always_treated = j.at("drop_always_treated").get<bool>();
    if (j.contains("t_star") && !j.at("t_star").is_null()) c.t_star = j.at("t_star").get<int>();
    if (j.contains("region") && !j.at("region").is_null()) c.region = j.at("region").get<std::string>();
    if (j.contains("functionals")) c.functionals = j.at("functionals").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ValidationError("bad_config", std::string("config type error: ") + e.what());
  }
  return c;
}

json RunConfig::to_json() const {
  json j = {{"input", input},
            {"method", method},
            {"covariates", covariates.to_json()},
            {"comparison", comparison},
            {"anticipation", anticipation},
            {"bootstrap", {{"reps", bootstrap_reps}, {"seed", seed}}},
            {"trim", trim},
            {"output_dir", output_dir},
            {"formats", formats},
            {"threads", threads},
            {"drop_always_treated", drop_always_treated},
            {"t_star", t_star ? json(*t_star) : json(nullptr)},
            {"region", region ? json(*region) : json(nullptr)},
            {"functionals", functionals}};
  if (schema) j["schema"] = schema->to_json();
  return j;
}

bool RunConfig::wants(const std::string& f) const {
  return std::find(formats.begin(), formats.end(), f) != formats.end();
}

// ---------------------------------------------------------------------------
// Fixtures and oracle checks

fs::path default_fixture_dir() {
  if (const char* env = std::getenv("DDIAG_FIXTURES")) return env;
  return DDIAG_FIXTURE_DIR;
}

fs::path resolve_fixture(const std::string& name) {
  if (fs::exists(name)) return name;
  fs::path p = default_fixture_dir() / name;
  if (fs::exists(p)) return p;
  p = default_fixture_dir() / (name + ".json");
  if (fs::exists(p)) return p;
  throw ValidationError("io", "no such DGP fixture: " + name);
}

std::vector<OracleCheck> oracle_check_dgp(const oracle::DiscreteDgp& dgp) {
  std::vector<OracleCheck> out;
  auto add = [&](const std::string& check, double value, double tol) {
    out.push_back({dgp.name, check, value, tol, std::isfinite(value) && std::abs(value) <= tol});
  };
  const auto tab = oracle::enumerate_population(dgp);
  double mass = 0.0;
  for (const auto& r : tab.rows) mass += r.mass;
  add("mass sums to one", mass - 1.0, 1e-12);

  const bool two_group = tab.T == 2 && tab.groups == std::vector<int>{2, 3};
  if (two_group) {
    const auto t1 = oracle::theorem1_decomposition(tab);
    add("two-period closure", t1.closure_error, 1e-10);
    add("treated weight mean is one", t1.weight_mean_treated - 1.0, 1e-10);
  }
  if (tab.group_mass(tab.never()) > 0.0) {
    const auto t3 = oracle::theorem3_decomposition(tab);
    add("multi-period closure", t3.closure_error, 1e-8);
    add("MB terms telescope", t3.max_telescoping_error, 1e-10);
    add("post weights sum to one", t3.post_weight_sum - 1.0, 1e-8);
    add("pre weights sum to minus one", t3.pre_weight_sum + 1.0, 1e-8);
  }
  // The population alpha against the sample estimator on the weighted table.
  const auto panel = oracle::to_weighted_panel(tab);
  const double pop = oracle::population_alpha(tab, false);
  add("estimator matches population alpha", fit_fe_twfe(panel).alpha - pop, 1e-8);
  return out;
}

// ---------------------------------------------------------------------------
// Helpers

namespace {

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ValidationError("io", "cannot open " + p.string());
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw ValidationError("bad_config", "invalid JSON in " + p.string() + ": " + e.what());
  }
}

// Inline JSON or a path to a JSON file.
json json_arg(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\n");
  if (first != std::string::npos && (s[first] == '{' || s[first] == '[')) {
    try {
      return json::parse(s);
    } catch (const json::exception& e) {
      throw ValidationError("bad_config", std::string("invalid inline JSON: ") + e.what());
    }
  }
  return read_json_file(s);
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ValidationError("io", "cannot write " + p.string());
  out << s;
}

json envelope(const RunConfig& cfg, const std::string& command) {
  return {{"schema_version", kSchemaVersion}, {"command", command}, {"config", cfg.to_json()}};
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::string opt_num(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

std::string gt_csv(const std::vector<GroupTimeResult>& res, const PanelDataset& data) {
  std::ostringstream os;
  os << "group,time,base_period,event_time,att,se,estimator,estimator_used,comparison,n_treated,n_comparison,"
        "max_pscore,trimmed,converged\n";
  for (const auto& r : res)
    os << data.period_label(r.g) << ',' << data.period_label(r.t) << ',' << data.period_label(r.base) << ','
       << (r.t - r.g) << ',' << format_double(r.att) << ',' << opt_num(r.se) << ',' << to_string(r.estimator) << ','
       << to_string(r.used) << ',' << to_string(r.comparison) << ',' << r.n_treated << ',' << r.n_comparison << ','
       << format_double(r.max_pscore) << ',' << r.trimmed << ',' << (r.converged ? 1 : 0) << '\n';
  return os.str();
}

std::string agg_csv(const AggregateResult& a) {
  std::ostringstream os;
  os << "kind,label,event_time,estimate,se\n";
  for (const auto& v : a.values)
    os << a.kind << ',' << v.label << ',' << (a.kind == "event_study" ? std::to_string(v.event_time) : "") << ','
       << format_double(v.estimate) << ',' << opt_num(v.se) << '\n';
  return os.str();
}

int thread_count(const RunConfig& cfg) {
  if (cfg.threads > 0) return cfg.threads;
  return std::max(1u, std::thread::hardware_concurrency());
}

AttOptions att_options(const RunConfig& cfg) {
  AttOptions o;
  o.comparison = comparison_from_string(cfg.comparison);
  if (cfg.anticipation < 0) throw ValidationError("bad_option", "anticipation must be non-negative");
  o.anticipation = cfg.anticipation;
  o.trim = cfg.trim;
  return o;
}

PanelDataset load_data(const RunConfig& cfg, bool require_outcome, std::ostream& err) {
  if (cfg.input.empty()) throw ValidationError("bad_config", "no input file given");
  if (!cfg.schema) throw ValidationError("bad_config", "no schema given");
  LoadOptions lo;
  lo.drop_always_treated = cfg.drop_always_treated;
  lo.require_outcome = require_outcome;
  auto res = read_long_csv(cfg.input, *cfg.schema, lo);
  for (const auto& w : res.report.warnings) err << "warning: " << w.message << '\n';
  if (!res.report.ok()) {
    err << res.report.to_text();
    const auto& e = res.report.errors.front();
    throw ValidationError(e.code, e.message);
  }
  return std::move(*res.data);
}

std::vector<Functional> functionals_for(const RunConfig& cfg, const PanelDataset& data) {
  if (cfg.functionals.empty()) return default_functionals(data);
  std::vector<Functional> f;
  for (const auto& s : cfg.functionals) f.push_back(Functional::parse(s));
  return f;
}

bool two_period_twfe(const RunConfig& cfg, const PanelDataset& data) { return cfg.t_star || data.T() == 2; }

int t_star_label(const RunConfig& cfg, const PanelDataset& data) {
  return cfg.t_star ? *cfg.t_star : data.period_label(2);
}

// Builds the profile for the configured method without reading outcomes.
WeightProfile profile_for(const RunConfig& cfg, const PanelDataset& data) {
  if (cfg.method == "twfe") {
    if (two_period_twfe(cfg, data)) {
      const int ts = t_star_label(cfg, data);
      const auto view = two_period_view(without_outcome(data), ts);
      return twfe_two_period_profile(view, two_period_implicit_weights(view), data.period_index(ts));
    }
    return twfe_multi_period_profile(data, mp_weight_structure(data, cfg.region));
  }
  return drdid_profile(data, cfg.covariates, estimator_from_string(cfg.method), att_options(cfg));
}

void write_balance(const RunConfig& cfg, const PanelDataset& data, const fs::path& dir, json& summary) {
  const auto profile = profile_for(cfg, data);
  const auto report = balance_report(profile, data, functionals_for(cfg, data));
  json bj = envelope(cfg, "balance");
  bj["balance"] = report.to_json(data);
  if (cfg.wants("json")) write_text(dir / "balance.json", dump(bj));
  if (cfg.wants("csv")) write_text(dir / "balance.csv", report.to_csv(data));
  if (cfg.wants("svg")) {
    LovePlotOptions lo;
    lo.title = "Covariate balance: " + report.estimator;
    write_text(dir / "love_plot.svg", love_plot_svg(report, lo));
  }
  summary["balance"] = {{"estimator", report.estimator},
                        {"ess_treated", report.ess_treated},
                        {"ess_comparison", report.ess_comparison},
                        {"max_abs_weighted_std_diff", 0.0}};
  double mx = 0.0;
  for (const auto& r : report.rows)
    if (!r.degenerate) mx = std::max(mx, std::abs(r.weighted));
  summary["balance"]["max_abs_weighted_std_diff"] = mx;
}

void print_summary(std::ostream& out, const std::vector<std::pair<std::string, double>>& rows) {
  for (const auto& [k, v] : rows) out << std::left << std::setw(28) << k << format_fixed(v, 6) << '\n';
}

// ---------------------------------------------------------------------------
// Commands

int cmd_validate(const RunConfig& cfg, bool as_json, std::ostream& out) {
  if (cfg.input.empty() || !cfg.schema) throw ValidationError("bad_config", "validate needs --input and --schema");
  LoadOptions lo;
  lo.drop_always_treated = cfg.drop_always_treated;
  lo.require_outcome = cfg.schema->outcome.has_value();
  const auto res = read_long_csv(cfg.input, *cfg.schema, lo);
  if (as_json) {
    json j = envelope(cfg, "validate");
    j["report"] = res.report.to_json();
    out << dump(j);
  } else {
    out << res.report.to_text();
  }
  return res.report.ok() ? kExitOk : kExitValidation;
}

int cmd_estimate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  if (cfg.method != "twfe" && cfg.method != "ra" && cfg.method != "ipw" && cfg.method != "aipw")
    throw ValidationError("bad_option", "unknown method: " + cfg.method);
  const auto data = load_data(cfg, true, err);
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  json result = envelope(cfg, "estimate");
  json summary = json::object();
  const int threads = thread_count(cfg);
  std::vector<std::pair<std::string, double>> printed;

  if (cfg.method == "twfe") {
    if (two_period_twfe(cfg, data)) {
      const auto view = two_period_view(data, t_star_label(cfg, data));
      const auto fit = fit_fd_twfe(view);
      const auto w = two_period_implicit_weights(view);
      result["twfe"] = fit.to_json();
      result["implicit_weights"] = w.to_json(view.unit_ids);
      summary["alpha"] = fit.alpha;
      printed.push_back({"alpha", fit.alpha});
      if (cfg.bootstrap_reps > 0) {
        const int ts = t_star_label(cfg, data);
        auto bs = bootstrap_se(
            [&](const PanelDataset& d) {
              Eigen::VectorXd v(1);
              v(0) = fit_fd_twfe(two_period_view(d, ts)).alpha;
              return v;
            },
            data, cfg.bootstrap_reps, cfg.seed, threads);
        summary["alpha_se"] = bs.se(0);
        summary["bootstrap"] = {{"reps", bs.reps}, {"failed", bs.failed}};
        printed.push_back({"alpha se", bs.se(0)});
      }
    } else {
      const auto fit = fit_fe_twfe(data, cfg.region);
      const auto w = mp_implicit_weights(data, fit);
      for (const auto& m : w.warnings) err << "warning: " << m << '\n';
      result["twfe"] = fit.to_json();
      result["implicit_weights"] = w.to_json(data);
      summary["alpha"] = fit.alpha;
      summary["post_contribution"] = w.post_contribution;
      summary["pre_contribution"] = w.pre_contribution;
      summary["alpha_pre_zeroed"] = w.alpha_pre_zeroed;
      printed.insert(printed.end(), {{"alpha", fit.alpha},
                                     {"post contribution", w.post_contribution},
                                     {"pre contribution", w.pre_contribution},
                                     {"alpha, pre zeroed", w.alpha_pre_zeroed}});
      if (cfg.bootstrap_reps > 0) {
        const auto region = cfg.region;
        auto bs = bootstrap_se(
            [&](const PanelDataset& d) {
              const auto f = fit_fe_twfe(d, region);
              const auto mw = mp_implicit_weights(d, f);
              Eigen::VectorXd v(2);
              v << f.alpha, mw.alpha_pre_zeroed;
              return v;
            },
            data, cfg.bootstrap_reps, cfg.seed, threads);
        summary["alpha_se"] = bs.se(0);
        summary["alpha_pre_zeroed_se"] = bs.se(1);
        summary["bootstrap"] = {{"reps", bs.reps}, {"failed", bs.failed}};
        printed.push_back({"alpha se", bs.se(0)});
      }
    }
    if (cfg.wants("csv") && result["implicit_weights"].contains("weights")) {
      std::ostringstream os;
      os << "group,time,post,sum_weight,treated_part,comparison_part,contribution\n";
      for (const auto& c : result["implicit_weights"]["weights"])
        os << c.value("g", 0) << ',' << c.value("t", 0) << ',' << (c.value("post", false) ? 1 : 0) << ','
           << format_double(c.value("sum_weight", 0.0)) << ',' << format_double(c.value("treated_part", 0.0)) << ','
           << format_double(c.value("comparison_part", 0.0)) << ',' << format_double(c.value("contribution", 0.0))
           << '\n';
      write_text(dir / "twfe_cells.csv", os.str());
    }
  } else {
    const Estimator est = estimator_from_string(cfg.method);
    const AttOptions opt = att_options(cfg);
    auto grid = att_gt_grid(data, cfg.covariates, est, opt, true);
    std::vector<GroupTimeResult> post;
    for (const auto& r : grid)
      if (r.t >= r.g) post.push_back(r);
    auto overall = aggregate_overall(post, data);
    auto event = aggregate_event_study(grid, data);
    if (cfg.bootstrap_reps > 0) {
      const auto spec = cfg.covariates;
      const std::size_t ncell = grid.size();
      auto bs = bootstrap_se(
          [&](const PanelDataset& d) {
            auto g2 = att_gt_grid(d, spec, est, opt, true);
            if (g2.size() != ncell) throw EstimationError("bootstrap_cells", "group-time cells changed in resample");
            std::vector<GroupTimeResult> p2;
            for (const auto& r : g2)
              if (r.t >= r.g) p2.push_back(r);
            const auto ev = aggregate_event_study(g2, d);
            Eigen::VectorXd v(static_cast<Eigen::Index>(ncell + 1 + ev.values.size()));
            for (std::size_t i = 0; i < ncell; ++i) v(static_cast<Eigen::Index>(i)) = g2[i].att;
            v(static_cast<Eigen::Index>(ncell)) = aggregate_overall(p2, d).values[0].estimate;
            for (std::size_t i = 0; i < ev.values.size(); ++i)
              v(static_cast<Eigen::Index>(ncell + 1 + i)) = ev.values[i].estimate;
            return v;
          },
          data, cfg.bootstrap_reps, cfg.seed, threads);
      for (std::size_t i = 0; i < ncell; ++i) grid[i].se = bs.se(static_cast<Eigen::Index>(i));
      overall.values[0].se = bs.se(static_cast<Eigen::Index>(ncell));
      for (std::size_t i = 0; i < event.values.size() && ncell + 1 + i < static_cast<std::size_t>(bs.se.size()); ++i)
        event.values[i].se = bs.se(static_cast<Eigen::Index>(ncell + 1 + i));
      summary["bootstrap"] = {{"reps", bs.reps}, {"failed", bs.failed}};
    }
    json cells = json::array();
    for (const auto& r : grid) cells.push_back(r.to_json(data));
    result["group_time"] = cells;
    result["overall"] = overall.to_json(data);
    result["event_study"] = event.to_json(data);
    summary["att_overall"] = overall.values[0].estimate;
    printed.push_back({"overall ATT", overall.values[0].estimate});
    if (overall.values[0].se) printed.push_back({"overall ATT se", *overall.values[0].se});
    for (const auto& r : grid)
      for (const auto& w : r.warnings) err << "warning: (" << r.g << "," << r.t << ") " << w << '\n';
    if (cfg.wants("csv")) {
      write_text(dir / "group_time.csv", gt_csv(grid, data));
      write_text(dir / "aggregate.csv", agg_csv(overall));
      write_text(dir / "event_study.csv", agg_csv(event));
    }
  }
  // Design-phase balance under the same specification.
  write_balance(cfg, data, dir, summary);
  result["summary"] = summary;
  if (cfg.wants("json")) write_text(dir / "estimate.json", dump(result));
  out << "method " << cfg.method << ", n = " << data.n() << ", T = " << data.T() << '\n';
  print_summary(out, printed);
  out << "balance: max |weighted std diff| = " << format_fixed(summary["balance"]["max_abs_weighted_std_diff"], 4)
      << ", ESS treated " << format_fixed(summary["balance"]["ess_treated"], 1) << ", comparison "
      << format_fixed(summary["balance"]["ess_comparison"], 1) << '\n';
  out << "outputs written to " << dir.string() << '\n';
  return kExitOk;
}

int cmd_balance(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  if (cfg.method != "twfe" && cfg.method != "ra" && cfg.method != "ipw" && cfg.method != "aipw")
    throw ValidationError("bad_option", "unknown method: " + cfg.method);
  auto data = load_data(cfg, false, err);
  if (data.has_outcome()) data = without_outcome(data);
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  json summary = json::object();
  write_balance(cfg, data, dir, summary);
  out << "balance (" << cfg.method << "), n = " << data.n() << '\n';
  print_summary(out, {{"max |weighted std diff|", summary["balance"]["max_abs_weighted_std_diff"]},
                      {"ESS treated", summary["balance"]["ess_treated"]},
                      {"ESS comparison", summary["balance"]["ess_comparison"]}});
  out << "outputs written to " << dir.string() << '\n';
  return kExitOk;
}

int cmd_simulate(const std::string& dgp_name, int n, std::uint64_t seed, const std::string& out_path,
                 std::ostream& out) {
  const auto dgp = oracle::DiscreteDgp::load(resolve_fixture(dgp_name));
  const auto data = oracle::simulate_sample(dgp, n, seed);
  if (out_path.empty() || out_path == "-") {
    write_long_csv(data, out);
    return kExitOk;
  }
  const fs::path p = out_path;
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_long_csv(data, p);
  fs::path schema = p;
  schema.replace_extension(".schema.json");
  write_text(schema, dump(schema_for_written(data).to_json()));
  out << "wrote " << n << " units x " << data.T() << " periods to " << p.string() << " (schema " << schema.string()
      << ")\n";
  return kExitOk;
}

int cmd_oracle_check(const std::string& dir_arg, bool as_json, std::ostream& out) {
  const fs::path dir = dir_arg.empty() ? default_fixture_dir() : fs::path(dir_arg);
  if (!fs::is_directory(dir)) throw ValidationError("io", "fixture directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".json" && e.path().string().find(".schema.") == std::string::npos)
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ValidationError("io", "no DGP fixtures in " + dir.string());
  std::vector<OracleCheck> all;
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& f : files) {
    const auto dgp = oracle::DiscreteDgp::load(f);
    try {
      auto c = oracle_check_dgp(dgp);
      all.insert(all.end(), c.begin(), c.end());
    } catch (const Error& e) {
      all.push_back({dgp.name, std::string("error: ") + e.what(), std::nan(""), 0.0, false});
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  bool ok = true;
  for (const auto& c : all) ok = ok && c.pass;
  if (as_json) {
    json rows = json::array();
    for (const auto& c : all)
      rows.push_back({{"fixture", c.fixture}, {"check", c.check}, {"value", c.value}, {"tolerance", c.tolerance},
                      {"pass", c.pass}});
    out << dump({{"schema_version", kSchemaVersion}, {"command", "oracle-check"}, {"checks", rows}, {"pass", ok}});
  } else {
    out << std::left << std::setw(24) << "fixture" << std::setw(40) << "check" << std::setw(14) << "value"
        << "result\n";
    for (const auto& c : all) {
      std::ostringstream v;
      v << std::scientific << std::setprecision(2) << c.value;
      out << std::left << std::setw(24) << c.fixture << std::setw(40) << c.check << std::setw(14) << v.str()
          << (c.pass ? "pass" : "FAIL") << '\n';
    }
    out << (ok ? "all checks passed" : "some checks FAILED") << " (" << all.size() << " checks, "
        << format_fixed(secs, 2) << " s)\n";
  }
  return ok ? kExitOk : kExitEstimation;
}

}  // namespace

// ---------------------------------------------------------------------------
// Dispatch

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Implicit-weight and balance diagnostics for difference-in-differences", "ddiag"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "ddiag 1.0");

  // Shared run options. Flags override config keys.
  std::string config_path, input, schema_arg, method, covariates, mode, comparison, out_dir, formats, region;
  int anticipation = 0, reps = 0, threads = 0, t_star = 0;
  std::uint64_t seed = 1;
  bool trim = false, drop = false, as_json = false;
  std::vector<std::string> functionals;

  auto add_run_opts = [&](CLI::App* sc, bool estimation) {
    sc->add_option("--config", config_path, "JSON run configuration");
    sc->add_option("--input", input, "long-format CSV panel");
    sc->add_option("--schema", schema_arg, "column mapping (JSON file or inline JSON)");
    sc->add_flag("--drop-always-treated", drop, "drop units already treated in the first period");
    if (!estimation) return;
    sc->add_option("--method", method, "twfe | ra | ipw | aipw");
    sc->add_option("--covariates", covariates, "covariate specification (JSON file or inline JSON)");
    sc->add_option("--mode", mode, "covariate mode for both models (none, delta_only, base_level, ...)");
    sc->add_option("--comparison", comparison, "never_treated | not_yet_treated");
    sc->add_option("--anticipation", anticipation, "anticipation periods");
    sc->add_flag("--trim", trim, "drop comparison units with extreme propensity scores");
    sc->add_option("--t-star", t_star, "two-period TWFE on (t_star - 1, t_star)");
    sc->add_option("--region", region, "time-invariant column for region-by-period effects (TWFE)");
    sc->add_option("--functional", functionals, "balance functional, e.g. change:x, base:x, ti:z");
    sc->add_option("--out", out_dir, "output directory");
    sc->add_option("--format", formats, "comma-separated subset of json,csv,svg");
    sc->add_option("--threads", threads, "worker thread cap");
  };

  auto* validate = app.add_subcommand("validate", "check a CSV panel and print the validation report");
  add_run_opts(validate, false);
  validate->add_flag("--json", as_json, "print the report as JSON");

  auto* estimate = app.add_subcommand("estimate", "estimate effects and write estimates plus a balance report");
  add_run_opts(estimate, true);
  estimate->add_option("--reps", reps, "bootstrap replications (0 = none)");
  estimate->add_option("--seed", seed, "bootstrap seed");

  auto* balance = app.add_subcommand("balance", "implicit-weight balance report; outcomes not needed");
  add_run_opts(balance, true);

  std::string dgp, sim_out;
  int n = 0;
  std::uint64_t sim_seed = 1;
  auto* simulate = app.add_subcommand("simulate", "draw a CSV panel from a DGP fixture");
  simulate->add_option("--dgp", dgp, "fixture name or path")->required();
  simulate->add_option("--n", n, "number of units")->required();
  simulate->add_option("--seed", sim_seed, "random seed");
  simulate->add_option("--out", sim_out, "CSV path ('-' for stdout)");

  std::string fixture_dir;
  auto* oracle_check = app.add_subcommand("oracle-check", "run closure checks on every DGP fixture");
  oracle_check->add_option("--fixtures", fixture_dir, "fixture directory");
  oracle_check->add_flag("--json", as_json, "print the table as JSON");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << "ddiag 1.0\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }

  try {
    if (*simulate) return cmd_simulate(dgp, n, sim_seed, sim_out, out);
    if (*oracle_check) return cmd_oracle_check(fixture_dir, as_json, out);

    CLI::App* sc = *validate ? validate : (*estimate ? estimate : balance);
    RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::from_json(read_json_file(config_path));
    auto given = [&](const char* name) { return sc->get_option_no_throw(name) && sc->count(name) > 0; };
    if (given("--input")) cfg.input = input;
    if (given("--schema")) cfg.schema = PanelSchema::from_json(json_arg(schema_arg));
    if (given("--drop-always-treated")) cfg.drop_always_treated = drop;
    if (sc != validate) {
      if (given("--method")) cfg.method = method;
      if (given("--covariates")) cfg.covariates = CovariateSpec::from_json(json_arg(covariates));
      if (given("--mode")) {
        cfg.covariates.outcome.mode = covariate_mode_from_string(mode);
        cfg.covariates.propensity.mode = cfg.covariates.outcome.mode;
      }
      if (given("--comparison")) cfg.comparison = comparison;
      if (given("--anticipation")) cfg.anticipation = anticipation;
      if (given("--trim")) cfg.trim = trim;
      if (given("--t-star")) cfg.t_star = t_star;
      if (given("--region")) cfg.region = region;
      if (given("--functional")) cfg.functionals = functionals;
      if (given("--out")) cfg.output_dir = out_dir;
      if (given("--format")) {
        cfg.formats.clear();
        std::stringstream ss(formats);
        for (std::string f; std::getline(ss, f, ',');) {
          if (f != "json" && f != "csv" && f != "svg") throw ValidationError("bad_option", "unknown format: " + f);
          cfg.formats.push_back(f);
        }
      }
      if (given("--threads")) cfg.threads = threads;
    }
    if (sc == estimate) {
      if (given("--reps")) cfg.bootstrap_reps = reps;
      if (given("--seed")) cfg.seed = seed;
      if (cfg.bootstrap_reps < 0) throw ValidationError("bad_option", "--reps must be non-negative");
    }
    if (sc == validate) return cmd_validate(cfg, as_json, out);
    if (sc == estimate) return cmd_estimate(cfg, out, err);
    return cmd_balance(cfg, out, err);
  } catch (const ValidationError& e) {
    err << "validation error [" << e.code() << "]: " << e.what() << '\n';
    return kExitValidation;
  } catch (const Error& e) {
    err << "estimation error [" << e.code() << "]: " << e.what() << '\n';
    return kExitEstimation;
  } catch (const fs::filesystem_error& e) {
    err << "validation error [io]: " << e.what() << '\n';
    return kExitValidation;
  }
}

}  // namespace ddiag
