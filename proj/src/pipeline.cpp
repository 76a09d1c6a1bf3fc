#include "transport/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "transport/alignment.hpp"
#include "transport/cohort_io.hpp"
#include "transport/crf.hpp"
#include "transport/error.hpp"
#include "transport/km.hpp"
#include "transport/predicate.hpp"
#include "transport/random.hpp"
#include "transport/smd.hpp"
#include "transport/version.hpp"

namespace transport {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

template <typename T>
std::optional<T> optional_field(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

json optional_json(const std::optional<int>& v) { return v ? json(*v) : json(nullptr); }

Contrast parse_contrast(const json& j) {
  if (j.is_array()) {
    if (j.size() != 2) throw Error("a contrast lists exactly two arms");
    return {j[0].get<std::string>(), j[1].get<std::string>()};
  }
  const auto text = j.get<std::string>();
  const auto pos = text.find(" vs ");
  if (pos == std::string::npos) throw Error("contrast '" + text + "' is not of the form 'A vs B'");
  return {text.substr(0, pos), text.substr(pos + 4)};
}

json config_json(const RunConfig& c, bool for_hash) {
  json j;
  j["source"] = {{"data", c.source_data.string()}, {"schema", c.source_schema.string()}};
  j["target"] = {{"data", c.target_data.string()}, {"schema", c.target_schema.string()}};
  j["delimiter"] = std::string(1, c.delimiter);
  j["horizon"] = c.horizon;
  j["seed"] = c.seed;
  j["n_boot"] = c.n_boot;
  j["confidence"] = c.confidence;
  j["forest"] = {{"n_trees", c.forest.n_trees},
                 {"mtry", optional_json(c.forest.mtry)},
                 {"min_node_size", c.forest.min_node_size},
                 {"min_node_events", c.forest.min_node_events},
                 {"max_depth", optional_json(c.forest.max_depth)}};
  j["selection"] = {{"n_trees", c.selection.n_trees},
                    {"mtry", optional_json(c.selection.mtry)},
                    {"min_node_size", c.selection.min_node_size},
                    {"max_depth", optional_json(c.selection.max_depth)},
                    {"clip", {c.selection.clip_low, c.selection.clip_high}}};
  j["contrasts"] = json::array();
  for (const auto& k : c.contrasts) j["contrasts"].push_back(k.label());
  j["estimands"] = json::array();
  for (auto e : c.resolved_estimands()) j["estimands"].push_back(std::string(to_string(e)));
  j["eligibility"] = c.eligibility ? json(*c.eligibility) : json(nullptr);
  j["subgroups"] = json::array();
  for (const auto& s : c.subgroups) j["subgroups"].push_back({{"name", s.name}, {"predicate", s.predicate}});
  j["smd_threshold"] = c.smd_threshold;
  j["load_models"] = c.load_models ? json(c.load_models->string()) : json(nullptr);
  if (!for_hash) {
    j["output_dir"] = c.output_dir.string();
    j["threads"] = c.threads;
    j["save_models"] = c.save_models ? json(c.save_models->string()) : json(nullptr);
  }
  return j;
}

bool contains(const std::vector<Estimand>& set, Estimand e) {
  return std::find(set.begin(), set.end(), e) != set.end();
}

std::string slug(const std::string& label) {
  std::string out;
  for (char ch : label) {
    const bool keep = std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.';
    out += keep ? ch : '_';
  }
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::string cell(const ContrastEstimate& e) {
  return fmt::format("{:.4f} ({:.4f}, {:.4f})", e.point, e.ci_low, e.ci_high);
}

json estimate_json(const ContrastEstimate& e) {
  json j = {{"contrast", e.contrast.label()},
            {"treated", e.contrast.treated()},
            {"reference", e.contrast.reference()},
            {"estimand", std::string(to_string(e.estimand))},
            {"n", e.n},
            {"point", e.point},
            {"se", e.se},
            {"ci_low", e.ci_low},
            {"ci_high", e.ci_high},
            {"n_boot", e.n_boot}};
  if (!e.subgroup.empty()) j["subgroup"] = e.subgroup;
  return j;
}

/// Stage runner: records status, keeps going only while every stage succeeds.
class Stages {
 public:
  Stages(RunResult& result, std::ostream* log) : result_(result), log_(log) {}

  bool run(const std::string& name, const std::function<void(StageStatus&)>& body) {
    StageStatus status{name, "ok", {}, {}};
    if (!result_.failed_stage.empty()) {
      status.status = "skipped";
      result_.stages.push_back(std::move(status));
      return false;
    }
    try {
      body(status);
      if (log_) *log_ << "[" << name << "] ok\n";
    } catch (const std::exception& e) {
      status.status = "failed";
      status.error = e.what();
      result_.failed_stage = name;
      result_.error = name + ": " + e.what();
      if (log_) *log_ << "[" << name << "] failed: " << e.what() << "\n";
    }
    result_.stages.push_back(std::move(status));
    return result_.failed_stage.empty();
  }

  void skip(const std::string& name) { result_.stages.push_back({name, "skipped", {}, {}}); }

 private:
  RunResult& result_;
  std::ostream* log_;
};

class ReportWriter {
 public:
  ReportWriter(fs::path dir, std::string hash, std::uint64_t seed)
      : dir_(std::move(dir)), hash_(std::move(hash)), seed_(seed) {}

  std::string header() const { return fmt::format("# config_hash={} seed={}\n", hash_, seed_); }
  const std::string& hash() const { return hash_; }
  std::uint64_t seed() const { return seed_; }

  void write(StageStatus& stage, const std::string& name, const std::string& body) const {
    std::ofstream out(dir_ / name, std::ios::binary);
    if (!out) throw Error("cannot write " + (dir_ / name).string());
    out << body;
    if (!out) throw Error("failed writing " + (dir_ / name).string());
    stage.outputs.push_back(name);
  }

  void csv(StageStatus& stage, const std::string& name, const std::string& body) const {
    write(stage, name, header() + body);
  }

  void json_report(StageStatus& stage, const std::string& name, json j) const {
    j["config_hash"] = hash_;
    j["seed"] = seed_;
    write(stage, name, j.dump(2) + "\n");
  }

 private:
  fs::path dir_;
  std::string hash_;
  std::uint64_t seed_;
};

std::vector<std::string> deviations(const RunConfig& c, const std::vector<Estimand>& estimands) {
  std::vector<std::string> out{
      "SMD denominators use population (1/n) variances",
      "split candidates are numeric thresholds; categorical covariates enter as 0/1 level indicators",
  };
  if (contains(estimands, Estimand::Weighted)) {
    out.push_back("weighted comparator: weighted Kaplan-Meier risk difference per arm");
    out.push_back("weights are inverse odds of trial membership, (1 - p) / p");
    out.push_back(fmt::format("selection probabilities: classification forest, mean of leaf class shares, "
                              "out-of-bag for trial rows, clipped to [{}, {}]",
                              c.selection.clip_low, c.selection.clip_high));
  }
  if (c.n_boot > 0) {
    out.push_back("bootstrap resamples the trial within arms; the target population is held fixed");
  }
  return out;
}

}  // namespace

std::vector<Estimand> RunConfig::resolved_estimands() const {
  if (estimands) return *estimands;
  std::vector<Estimand> out{Estimand::Sate, Estimand::OobRetranslation, Estimand::Tate};
  if (eligibility) out.push_back(Estimand::TateEligible);
  out.push_back(Estimand::Weighted);
  return out;
}

RunConfig parse_run_config(const std::string& json_text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  try {
    c.source_data = resolve(base_dir, j.at("source").at("data").get<std::string>());
    c.source_schema = resolve(base_dir, j.at("source").at("schema").get<std::string>());
    c.target_data = resolve(base_dir, j.at("target").at("data").get<std::string>());
    c.target_schema = resolve(base_dir, j.at("target").at("schema").get<std::string>());
    if (j.contains("output_dir")) c.output_dir = resolve(base_dir, j.at("output_dir").get<std::string>());
    if (j.contains("delimiter")) {
      const auto d = j.at("delimiter").get<std::string>();
      if (d.size() != 1) throw Error("delimiter must be a single character");
      c.delimiter = d[0];
    }
    c.horizon = j.value("horizon", c.horizon);
    c.seed = j.value("seed", c.seed);
    c.n_boot = j.value("n_boot", c.n_boot);
    c.confidence = j.value("confidence", c.confidence);
    c.threads = j.value("threads", c.threads);
    if (j.contains("forest")) {
      const auto& f = j.at("forest");
      c.forest.n_trees = f.value("n_trees", c.forest.n_trees);
      c.forest.mtry = optional_field<int>(f, "mtry");
      c.forest.min_node_size = f.value("min_node_size", c.forest.min_node_size);
      c.forest.min_node_events = f.value("min_node_events", c.forest.min_node_events);
      c.forest.max_depth = optional_field<int>(f, "max_depth");
    }
    if (j.contains("selection")) {
      const auto& s = j.at("selection");
      c.selection.n_trees = s.value("n_trees", c.selection.n_trees);
      c.selection.mtry = optional_field<int>(s, "mtry");
      c.selection.min_node_size = s.value("min_node_size", c.selection.min_node_size);
      c.selection.max_depth = optional_field<int>(s, "max_depth");
      if (s.contains("clip")) {
        const auto clip = s.at("clip").get<std::vector<double>>();
        if (clip.size() != 2) throw Error("selection.clip needs two bounds");
        c.selection.clip_low = clip[0];
        c.selection.clip_high = clip[1];
      }
    }
    if (j.contains("contrasts")) {
      for (const auto& k : j.at("contrasts")) c.contrasts.push_back(parse_contrast(k));
    }
    if (j.contains("estimands")) {
      std::vector<Estimand> set;
      for (const auto& e : j.at("estimands")) {
        const auto parsed = parse_estimand(e.get<std::string>());
        if (contains(set, parsed)) throw Error("estimand listed twice: " + e.get<std::string>());
        set.push_back(parsed);
      }
      c.estimands = std::move(set);
    }
    c.eligibility = optional_field<std::string>(j, "eligibility");
    if (j.contains("subgroups")) {
      for (const auto& s : j.at("subgroups")) {
        c.subgroups.push_back({s.at("name").get<std::string>(), s.at("predicate").get<std::string>()});
      }
    }
    c.smd_threshold = j.value("smd_threshold", c.smd_threshold);
    if (auto p = optional_field<std::string>(j, "save_models")) c.save_models = resolve(base_dir, *p);
    if (auto p = optional_field<std::string>(j, "load_models")) c.load_models = resolve(base_dir, *p);
  } catch (const json::exception& e) {
    throw Error(std::string("invalid config: ") + e.what());
  }
  return c;
}

RunConfig read_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_run_config(buffer.str(), path.parent_path());
}

std::string run_config_to_json(const RunConfig& config) { return config_json(config, false).dump(2) + "\n"; }

std::string config_hash(const RunConfig& config) {
  return fmt::format("{:016x}", fnv1a(config_json(config, true).dump()));
}

RunResult run_transport(const RunConfig& config, std::ostream* log) {
  RunResult result;
  Stages stages(result, log);
  const auto estimands = config.resolved_estimands();
  const ReportWriter out(config.output_dir, config_hash(config), config.seed);

  std::optional<Cohort> source, target;
  AlignmentReport alignment;
  FeatureLayout layout;
  SourceData src;
  ModelMatrix target_x;
  std::vector<std::string> target_ids;
  std::vector<Contrast> contrasts;
  std::vector<bool> eligible;
  std::vector<Subgroup> subgroups;
  std::optional<ArmModelSet> models;
  std::optional<CounterfactualGrid> grid;
  std::map<Estimand, std::vector<ContrastEstimate>> points;
  std::vector<ContrastEstimate> subgroup_points;
  std::optional<WeightSet> weights;
  std::vector<std::string> warnings;
  std::size_t oob_fallbacks = 0;

  stages.run("config", [&](StageStatus& st) {
    if (!(config.horizon > 0)) throw Error("horizon must be > 0");
    if (config.n_boot == 1 || config.n_boot < 0) throw Error("n_boot must be 0 (skip) or at least 2");
    normal_multiplier(config.confidence);
    if (config.estimands && config.estimands->empty()) throw Error("estimand set is empty");
    if (contains(estimands, Estimand::TateEligible) && !config.eligibility) {
      throw Error("TATE-eligible requested without eligibility criteria");
    }
    std::set<std::string> names;
    for (const auto& s : config.subgroups) {
      if (s.name.empty()) throw Error("subgroup name is empty");
      if (!names.insert(s.name).second) throw Error("duplicate subgroup '" + s.name + "'");
    }
    fs::create_directories(config.output_dir);
    (void)st;
  });

  stages.run("load", [&](StageStatus&) {
    source = read_cohort(config.source_data, read_schema(config.source_schema), CohortRole::Source, config.delimiter);
    target = read_cohort(config.target_data, read_schema(config.target_schema), CohortRole::Target, config.delimiter);
    if (source->empty()) throw Error("source cohort is empty");
    if (target->empty()) throw Error("target cohort is empty");
  });

  stages.run("alignment", [&](StageStatus& st) {
    alignment = align_cohorts(*source, *target);
    out.write(st, "alignment.json", alignment_to_json(alignment));
    layout = FeatureLayout(source->schema(), alignment.shared);
    src = encode_source(*source, layout);
    target_x = make_model_matrix(*target, layout);
    for (const auto& r : target->rows()) target_ids.push_back(r.id);

    contrasts = config.contrasts.empty() ? all_contrasts(src.arms) : config.contrasts;
    if (contrasts.empty()) throw Error("the source has a single arm; no contrasts to estimate");
    for (const auto& c : contrasts) {
      src.arm_index(c.treated());
      src.arm_index(c.reference());
    }
    const std::set<std::string> shared(alignment.shared.begin(), alignment.shared.end());
    auto check = [&](const Predicate& p, const std::string& what) {
      for (const auto& name : p.covariates()) {
        if (!shared.count(name)) throw Error(what + " uses covariate '" + name + "' that is not shared");
      }
      p.validate(target->schema());
    };
    if (config.eligibility) {
      const auto p = Predicate::parse(*config.eligibility);
      check(p, "eligibility criteria");
      eligible = p.mask(*target);
    }
    for (const auto& s : config.subgroups) {
      const auto p = Predicate::parse(s.predicate);
      check(p, "subgroup '" + s.name + "'");
      subgroups.push_back({s.name, p.mask(*target)});
    }
  });

  stages.run("smd", [&](StageStatus& st) {
    const auto table = smd_table(*source, *target, alignment.shared, config.smd_threshold);
    std::ostringstream body;
    write_smd_csv(body, table, ',');
    out.csv(st, "smd.csv", body.str());
  });

  stages.run("sate", [&](StageStatus& st) {
    std::ostringstream body;
    body << "arm,time,survival,at_risk,events\n";
    std::vector<double> risk(src.arms.size());
    for (std::size_t a = 0; a < src.arms.size(); ++a) {
      std::vector<double> times;
      std::vector<bool> events;
      for (std::size_t i = 0; i < src.size(); ++i) {
        if (src.arm_of[i] != a) continue;
        times.push_back(src.time[i]);
        events.push_back(src.event[i]);
      }
      const auto curve = km_fit(times, events);
      const auto r = risk_at(curve, config.horizon);
      if (r.extrapolated) {
        warnings.push_back(fmt::format("arm '{}': horizon beyond last follow-up time {}", src.arms[a], curve.last_time));
      }
      risk[a] = r.risk;
      for (std::size_t k = 0; k < curve.grid.size(); ++k) {
        body << csv_field(src.arms[a]) << ',' << fmt::format("{},{},{},{}", curve.grid[k], curve.survival[k],
                                                             curve.at_risk[k], curve.events[k])
             << '\n';
      }
    }
    out.csv(st, "km.csv", body.str());
    for (const auto& c : contrasts) {
      auto e = ContrastEstimate::make(c, Estimand::Sate,
                                      risk[src.arm_index(c.treated())] - risk[src.arm_index(c.reference())], 0, 0);
      e.n = src.size();
      points[Estimand::Sate].push_back(e);
    }
  });

  const bool need_models = contains(estimands, Estimand::OobRetranslation) || contains(estimands, Estimand::Tate) ||
                           contains(estimands, Estimand::TateEligible) || !subgroups.empty();
  const bool need_grid =
      contains(estimands, Estimand::Tate) || contains(estimands, Estimand::TateEligible) || !subgroups.empty();

  if (need_models) {
    stages.run("fit", [&](StageStatus& st) {
      ForestParams params = config.forest;
      params.seed = config.seed;
      params.threads = config.threads;
      if (config.load_models) {
        ArmModelSet set;
        set.arms = src.arms;
        set.horizon = config.horizon;
        set.fingerprint = src.x.fingerprint();
        for (std::size_t a = 0; a < src.arms.size(); ++a) {
          const auto path = *config.load_models / ("forest_" + slug(src.arms[a]) + ".bin");
          std::ifstream in(path, std::ios::binary);
          if (!in) throw Error("cannot open saved model " + path.string());
          auto forest = SurvivalForest::read(in);
          std::vector<std::size_t> rows;
          src.arm_data(a, &rows);
          if (forest.fingerprint() != set.fingerprint) {
            throw Error("saved model for arm '" + src.arms[a] + "' was fitted on a different covariate layout");
          }
          if (forest.n_training() != rows.size()) {
            throw Error("saved model for arm '" + src.arms[a] + "' was fitted on a different cohort");
          }
          set.forests.push_back(std::move(forest));
          set.training_rows.push_back(std::move(rows));
        }
        models = std::move(set);
      } else {
        models = fit_arm_models(src, params, config.horizon);
      }
      if (config.save_models) {
        fs::create_directories(*config.save_models);
        for (std::size_t a = 0; a < models->arms.size(); ++a) {
          const auto path = *config.save_models / ("forest_" + slug(models->arms[a]) + ".bin");
          std::ofstream os(path, std::ios::binary);
          if (!os) throw Error("cannot write " + path.string());
          models->forests[a].write(os);
        }
      }
      (void)st;
    });
  } else {
    stages.skip("fit");
  }

  if (contains(estimands, Estimand::OobRetranslation)) {
    stages.run("oob", [&](StageStatus&) {
      const auto oob = oob_counterfactuals(*models, src, config.threads);
      oob_fallbacks = oob.fallbacks;
      if (oob.fallbacks > 0) {
        warnings.push_back(fmt::format("{} source rows had no out-of-bag tree; used all trees", oob.fallbacks));
      }
      for (const auto& c : contrasts) {
        auto e = ContrastEstimate::make(c, Estimand::OobRetranslation, tate(oob.grid, c), 0, 0);
        e.n = src.size();
        points[Estimand::OobRetranslation].push_back(e);
      }
    });
  } else {
    stages.skip("oob");
  }

  if (need_grid) {
    stages.run("tate", [&](StageStatus& st) {
      grid = counterfactual_grid(*models, target_x, target_ids, config.threads);
      std::ostringstream body;
      body << "id";
      for (const auto& a : grid->arms()) body << ',' << csv_field("risk_" + a);
      for (const auto& c : contrasts) body << ',' << csv_field("ite_" + c.label());
      body << '\n';
      for (std::size_t i = 0; i < grid->subjects(); ++i) {
        body << csv_field(grid->ids()[i]);
        for (std::size_t a = 0; a < grid->arms().size(); ++a) body << ',' << fmt::format("{}", grid->risk(i, a));
        for (const auto& c : contrasts) body << ',' << fmt::format("{}", ite(*grid, c, i));
        body << '\n';
      }
      out.csv(st, "counterfactuals.csv", body.str());
      if (contains(estimands, Estimand::Tate)) {
        for (const auto& c : contrasts) {
          auto e = ContrastEstimate::make(c, Estimand::Tate, tate(*grid, c), 0, 0);
          e.n = target_x.rows();
          points[Estimand::Tate].push_back(e);
        }
      }
    });
  } else {
    stages.skip("tate");
  }

  if (contains(estimands, Estimand::TateEligible)) {
    stages.run("tate_eligible", [&](StageStatus&) {
      const auto n = static_cast<std::size_t>(std::count(eligible.begin(), eligible.end(), true));
      if (n == 0) throw Error("no target subject meets the eligibility criteria");
      for (const auto& c : contrasts) {
        auto e = ContrastEstimate::make(c, Estimand::TateEligible, tate(*grid, c, eligible), 0, 0);
        e.n = n;
        points[Estimand::TateEligible].push_back(e);
      }
    });
  } else {
    stages.skip("tate_eligible");
  }

  if (contains(estimands, Estimand::Weighted)) {
    stages.run("weighted", [&](StageStatus& st) {
      SelectionParams sel = config.selection;
      sel.seed = derive_seed(config.seed, Stream::Selection, 0);
      sel.threads = config.threads;
      const auto model = SelectionModel::fit(src.x, src.ids, target_x, target_ids, sel);
      weights = compute_weights(model, src.x, src.ids);
      if (weights->clipped > 0) {
        warnings.push_back(fmt::format("{} selection probabilities clipped", weights->clipped));
      }
      std::ostringstream body;
      write_weights_csv(body, *weights);
      out.csv(st, "weights.csv", body.str());
      for (const auto& c : contrasts) {
        auto e = weighted_contrast(src, *weights, c, config.horizon);
        e.n = src.size();
        points[Estimand::Weighted].push_back(e);
      }
    });
  } else {
    stages.skip("weighted");
  }

  if (!subgroups.empty()) {
    stages.run("subgroups", [&](StageStatus&) {
      for (const auto& s : subgroups) {
        const auto n = static_cast<std::size_t>(std::count(s.mask.begin(), s.mask.end(), true));
        if (n == 0) throw Error("subgroup '" + s.name + "' is empty");
        for (const auto& c : contrasts) {
          auto e = ContrastEstimate::make(c, Estimand::Tate, tate(*grid, c, s.mask), 0, 0);
          e.subgroup = s.name;
          e.n = n;
          subgroup_points.push_back(e);
        }
      }
    });
  } else {
    stages.skip("subgroups");
  }

  // Point estimates in report order; the bootstrap fills in the spread.
  std::vector<ContrastEstimate> overall;
  for (auto e : estimands) {
    if (points.count(e)) overall.insert(overall.end(), points[e].begin(), points[e].end());
  }
  result.estimates.estimates = overall;
  result.estimates.subgroups = subgroup_points;
  result.estimates.weights = weights;
  result.estimates.oob_fallbacks = oob_fallbacks;

  if (config.n_boot > 0) {
    stages.run("bootstrap", [&](StageStatus&) {
      TransportProblem problem;
      problem.source = src;
      problem.target = target_x;
      problem.target_ids = target_ids;
      problem.eligible = eligible;
      problem.subgroups = subgroups;
      problem.contrasts = contrasts;
      problem.estimands = estimands;
      problem.horizon = config.horizon;
      problem.forest = config.forest;
      problem.forest.seed = config.seed;
      problem.selection = config.selection;
      BootstrapOptions options;
      options.n_boot = config.n_boot;
      options.confidence = config.confidence;
      options.threads = config.threads;
      const auto boot = bootstrap_estimates(problem, options);
      const double z = normal_multiplier(config.confidence);
      auto merge = [&](std::vector<ContrastEstimate>& mine, const std::vector<ContrastEstimate>& theirs) {
        if (mine.size() != theirs.size()) throw Error("bootstrap layout does not match the point estimates");
        for (std::size_t k = 0; k < mine.size(); ++k) {
          auto merged = ContrastEstimate::make(mine[k].contrast, mine[k].estimand, mine[k].point, theirs[k].se,
                                               theirs[k].n_boot, z);
          merged.subgroup = mine[k].subgroup;
          merged.n = mine[k].n;
          mine[k] = merged;
        }
      };
      merge(result.estimates.estimates, boot.estimates);
      merge(result.estimates.subgroups, boot.subgroups);
      result.estimates.n_boot = boot.n_boot;
      result.estimates.redraws = boot.redraws;
      for (const auto& w : boot.warnings) {
        if (std::find(warnings.begin(), warnings.end(), w) == warnings.end()) warnings.push_back(w);
      }
    });
  } else {
    stages.skip("bootstrap");
  }

  stages.run("report", [&](StageStatus& st) {
    // Table 2 layout: one row per estimand, one column per contrast.
    std::ostringstream table;
    table << "estimand";
    for (const auto& c : contrasts) table << ',' << csv_field(c.label());
    table << '\n';
    json grid_json = json::array();
    for (auto e : estimands) {
      if (!points.count(e)) continue;
      table << to_string(e);
      for (const auto& est : result.estimates.estimates) {
        if (est.estimand != e) continue;
        table << ',' << csv_field(cell(est));
        grid_json.push_back(estimate_json(est));
      }
      table << '\n';
    }
    out.csv(st, "table2.csv", table.str());
    json t;
    t["horizon"] = config.horizon;
    t["confidence"] = config.confidence;
    t["contrasts"] = json::array();
    for (const auto& c : contrasts) t["contrasts"].push_back(c.label());
    t["estimates"] = grid_json;
    out.json_report(st, "table2.json", t);

    if (!result.estimates.subgroups.empty()) {
      std::ostringstream body;
      body << "subgroup,contrast,n,point,se,ci_low,ci_high\n";
      for (const auto& e : result.estimates.subgroups) {
        body << csv_field(e.subgroup) << ',' << csv_field(e.contrast.label()) << ','
             << fmt::format("{},{},{},{},{}", e.n, e.point, e.se, e.ci_low, e.ci_high) << '\n';
      }
      out.csv(st, "subgroups.csv", body.str());
    }
  });

  result.ok = result.failed_stage.empty();
  result.estimates.warnings = warnings;

  // The manifest is written even when a stage failed.
  try {
    json m;
    m["version"] = std::string(kVersion);
    m["config"] = config_json(config, false);
    m["complete"] = result.ok;
    m["failed_stage"] = result.ok ? json(nullptr) : json(result.failed_stage);
    m["error"] = result.ok ? json(nullptr) : json(result.error);
    m["stages"] = json::array();
    for (const auto& s : result.stages) {
      json js = {{"name", s.name}, {"status", s.status}, {"outputs", s.outputs}};
      if (!s.error.empty()) js["error"] = s.error;
      m["stages"].push_back(std::move(js));
    }
    m["n_boot"] = result.estimates.n_boot;
    m["bootstrap_redraws"] = result.estimates.redraws;
    m["oob_fallbacks"] = result.estimates.oob_fallbacks;
    m["warnings"] = warnings;
    m["deviations"] = deviations(config, estimands);
    StageStatus sink;
    out.json_report(sink, "manifest.json", m);
  } catch (const std::exception& e) {
    if (log) *log << "[manifest] failed: " << e.what() << "\n";
    if (result.ok) {
      result.ok = false;
      result.failed_stage = "manifest";
      result.error = std::string("manifest: ") + e.what();
    }
  }
  return result;
}

OracleTruth write_synthetic(const Scenario& scenario, const fs::path& dir) {
  auto data = generate(scenario);
  fs::create_directories(dir);
  write_schema(dir / "schema.json", data.source.schema());
  write_cohort(dir / "source.csv", data.source);
  write_cohort(dir / "target.csv", data.target);
  auto put = [&](const std::string& name, const std::string& body) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw Error("cannot write " + (dir / name).string());
    out << body;
  };
  put("scenario.json", scenario_to_json(scenario));
  put("truth.json", truth_to_json(data.truth));
  std::ostringstream risks;
  write_truth_risks_csv(risks, data.truth);
  put("truth_risks.csv", risks.str());
  json config = {{"source", {{"data", "source.csv"}, {"schema", "schema.json"}}},
                 {"target", {{"data", "target.csv"}, {"schema", "schema.json"}}},
                 {"output_dir", "report"},
                 {"horizon", scenario.horizon},
                 {"seed", scenario.seed}};
  put("config.json", config.dump(2) + "\n");
  return std::move(data.truth);
}

}  // namespace transport
