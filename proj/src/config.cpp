#include "fodkit/config.hpp"

#include "fodkit/errors.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace fodkit {

using nlohmann::json;

namespace {

// Reads the keys of one JSON object; finish() rejects keys nobody asked for.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    known_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + ": wrong type (" + std::string(it->type_name()) + ")");
    }
  }

  // Seeds and counts that must be non-negative integers.
  void get_u64(const std::string& key, std::uint64_t& out) {
    known_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_number_integer() || (it->is_number_integer() && !it->is_number_unsigned() && it->get<long long>() < 0))
      throw ConfigError(where(key) + ": expected a non-negative integer");
    out = it->get<std::uint64_t>();
  }

  // Numbers that may be "inf".
  void get_extended(const std::string& key, double& out) {
    known_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    if (it->is_string() && (it->get<std::string>() == "inf" || it->get<std::string>() == "infinity")) {
      out = std::numeric_limits<double>::infinity();
      return;
    }
    if (!it->is_number()) throw ConfigError(where(key) + ": expected a number or \"inf\"");
    out = it->get<double>();
  }

  const json* object(const std::string& key) {
    known_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string where(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!known_.count(it.key())) throw ConfigError(where(it.key()) + ": unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> known_;
};

template <class F>
auto checked(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

OrderedJson extended(double v) { return std::isinf(v) ? OrderedJson("inf") : OrderedJson(v); }

PhantomSpec phantom_at(const json& j, PhantomSpec s, const std::string& path) {
  Fields f(j, path);
  std::array<int, 3> dims{s.dims.nx, s.dims.ny, s.dims.nz};
  f.get("dims", dims);
  s.dims = Dims{dims[0], dims[1], dims[2]};
  f.get("voxel_size", s.voxel_size);
  f.get_extended("snr", s.snr);
  f.get("age", s.age_weeks);
  f.get_u64("seed", s.seed);
  if (const json* r = f.object("rule")) {
    Fields g(*r, path + ".rule");
    g.get("p_one", s.rule.p_one);
    g.get("p_two", s.rule.p_two);
    g.get("p_three", s.rule.p_three);
    g.get("min_separation_deg", s.rule.min_separation_deg);
    g.finish();
  }
  f.finish();
  checked(path, [&] {
    s.validate();
    return 0;
  });
  return s;
}

SolverConfig solver_at(const json& j, SolverConfig s, const std::string& path) {
  Fields f(j, path);
  f.get("mesh_subdivisions", s.mesh_subdivisions);
  f.get("kkt_tolerance", s.qp.kkt_tolerance);
  f.get("max_iterations", s.qp.max_iterations);
  f.get("fallback_iterations", s.qp.fallback_iterations);
  f.get("rank_ridge", s.qp.rank_ridge);
  f.get("ss3t_max_outer", s.ss3t_max_outer);
  f.get("ss3t_tolerance", s.ss3t_tolerance);
  std::string init = s.ss3t_init == SolverConfig::Ss3tInit::csd ? "csd" : "zero";
  f.get("ss3t_init", init);
  if (init == "csd")
    s.ss3t_init = SolverConfig::Ss3tInit::csd;
  else if (init == "zero")
    s.ss3t_init = SolverConfig::Ss3tInit::zero;
  else
    throw ConfigError(f.where("ss3t_init") + ": expected \"csd\" or \"zero\"");
  f.get("ss3t_init_threshold", s.ss3t_init_threshold);
  f.get("csd_shell", s.csd_shell);
  f.finish();
  if (!(s.qp.kkt_tolerance > 0) || !(s.ss3t_tolerance > 0) || s.ss3t_max_outer < 1 || s.mesh_subdivisions < 0 ||
      s.mesh_subdivisions > 6 || s.qp.max_iterations < 0 || s.qp.fallback_iterations < 0 || !(s.qp.rank_ridge > 0))
    throw ConfigError(path + ": tolerances and iteration counts must be positive (mesh_subdivisions 0-6)");
  if (!(s.ss3t_init_threshold >= 0.0 && s.ss3t_init_threshold < 1.0))
    throw ConfigError(f.where("ss3t_init_threshold") + ": expected a value in [0, 1)");
  return s;
}

PeakOptions peaks_at(const json& j, PeakOptions s, const std::string& path, int* mesh = nullptr) {
  Fields f(j, path);
  f.get("min_separation_deg", s.min_separation_deg);
  f.get("relative_threshold", s.relative_threshold);
  f.get("max_peaks", s.max_peaks);
  f.get("newton_iterations", s.newton_iterations);
  f.get("max_step_deg", s.max_step_deg);
  if (mesh) f.get("mesh_subdivisions", *mesh);
  f.finish();
  if (s.max_peaks < 0 || s.max_peaks > 3 || s.relative_threshold < 0 || s.min_separation_deg < 0 ||
      s.newton_iterations < 0 || !(s.max_step_deg > 0))
    throw ConfigError(path + ": invalid peak options (max_peaks 0-3, non-negative thresholds)");
  if (mesh && (*mesh < 1 || *mesh > 6)) throw ConfigError(path + ".mesh_subdivisions: expected 1-6");
  return s;
}

ModelSpec model_at(const json& j, ModelSpec s, const std::string& path) {
  Fields f(j, path);
  std::string kind = to_string(s.kind);
  f.get("kind", kind);
  s.kind = checked(f.where("kind"), [&] { return parse_model_kind(kind); });
  f.get("hidden", s.hidden);
  f.get("dropout", s.dropout);
  f.get_u64("seed", s.seed);
  f.get("input_size", s.input_size);
  f.get("output_size", s.output_size);
  f.finish();
  checked(path, [&] {
    s.validate();
    return 0;
  });
  return s;
}

TrainConfig train_at(const json& j, TrainConfig s, const std::string& path) {
  Fields f(j, path);
  f.get("lr", s.adam.lr);
  f.get("beta1", s.adam.beta1);
  f.get("beta2", s.adam.beta2);
  f.get("eps", s.adam.eps);
  f.get("patches_per_subject", s.patches_per_subject);
  f.get("patch_size", s.patch_size);
  f.get("patience", s.patience);
  f.get("max_epochs", s.max_epochs);
  f.get_u64("seed", s.seed);
  f.finish();
  if (!(s.adam.lr > 0) || s.patience < 1 || s.max_epochs < 1 || s.patch_size < 1 || s.patches_per_subject < 1 ||
      !(s.adam.beta1 >= 0 && s.adam.beta1 < 1) || !(s.adam.beta2 >= 0 && s.adam.beta2 < 1) || !(s.adam.eps > 0))
    throw ConfigError(path + ": invalid training settings");
  return s;
}

CohortSpec cohort_at(const json& j, CohortSpec s, const std::string& path) {
  Fields f(j, path);
  f.get("n_train", s.n_train);
  f.get("n_val", s.n_val);
  f.get("n_test", s.n_test);
  std::array<double, 2> age{s.age_min, s.age_max};
  f.get("age", age);
  s.age_min = age[0];
  s.age_max = age[1];
  f.get_u64("seed", s.seed);
  if (const json* p = f.object("phantom")) s.phantom = phantom_at(*p, s.phantom, path + ".phantom");
  f.finish();
  checked(path, [&] {
    s.validate();
    return 0;
  });
  return s;
}

}  // namespace

PhantomSpec phantom_spec_from_json(const json& j, PhantomSpec base) { return phantom_at(j, base, "phantom"); }
SolverConfig solver_config_from_json(const json& j, SolverConfig base) { return solver_at(j, base, "solver"); }
PeakOptions peak_options_from_json(const json& j, PeakOptions base) { return peaks_at(j, base, "peaks"); }
ModelSpec model_spec_from_json(const json& j, ModelSpec base) { return model_at(j, base, "model"); }
TrainConfig train_config_from_json(const json& j, TrainConfig base) { return train_at(j, base, "train"); }
CohortSpec cohort_spec_from_json(const json& j, CohortSpec base) { return cohort_at(j, base, "cohort"); }

ExperimentConfig experiment_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("experiment config: expected an object");
  const auto kind_it = j.find("experiment");
  if (kind_it == j.end() || !kind_it->is_string())
    throw ConfigError("experiment config: missing \"experiment\" (consistency, ablation or ageshift)");
  const ExperimentKind kind = checked("experiment", [&] { return parse_experiment_kind(kind_it->get<std::string>()); });
  ExperimentConfig c = default_experiment_config(kind);

  Fields f(j, "config");
  std::string ignored;
  f.get("experiment", ignored);
  std::string method = to_string(c.method);
  f.get("method", method);
  c.method = checked("config.method", [&] { return parse_csd_method(method); });
  f.get_u64("seed", c.seed);
  f.get("threads", c.threads);
  f.get("input_shell", c.input_shell);
  f.get("lb_lambda", c.lb_lambda);
  f.get("n_sig", c.n_sig);
  f.get("ageshift_n_sig", c.ageshift_n_sig);
  std::array<double, 2> early{c.early_age.first, c.early_age.second}, late{c.late_age.first, c.late_age.second};
  f.get("early_age", early);
  f.get("late_age", late);
  c.early_age = {early[0], early[1]};
  c.late_age = {late[0], late[1]};
  if (const json* o = f.object("cohort")) c.cohort = cohort_at(*o, c.cohort, "config.cohort");
  if (const json* o = f.object("model")) c.model = model_at(*o, c.model, "config.model");
  if (const json* o = f.object("train")) c.train = train_at(*o, c.train, "config.train");
  if (const json* o = f.object("solver")) c.solver = solver_at(*o, c.solver, "config.solver");
  if (const json* o = f.object("peaks")) c.peaks = peaks_at(*o, c.peaks, "config.peaks", &c.peak_mesh_subdivisions);
  f.finish();
  checked("config", [&] {
    c.validate();
    return 0;
  });
  return c;
}

OrderedJson to_json(const PhantomSpec& s) {
  return {{"dims", {s.dims.nx, s.dims.ny, s.dims.nz}},
          {"voxel_size", s.voxel_size},
          {"snr", extended(s.snr)},
          {"age", s.age_weeks},
          {"seed", s.seed},
          {"rule",
           {{"p_one", s.rule.p_one},
            {"p_two", s.rule.p_two},
            {"p_three", s.rule.p_three},
            {"min_separation_deg", s.rule.min_separation_deg}}}};
}

OrderedJson to_json(const SolverConfig& s) {
  return {{"mesh_subdivisions", s.mesh_subdivisions},
          {"kkt_tolerance", s.qp.kkt_tolerance},
          {"max_iterations", s.qp.max_iterations},
          {"fallback_iterations", s.qp.fallback_iterations},
          {"rank_ridge", s.qp.rank_ridge},
          {"ss3t_max_outer", s.ss3t_max_outer},
          {"ss3t_tolerance", s.ss3t_tolerance},
          {"ss3t_init", s.ss3t_init == SolverConfig::Ss3tInit::csd ? "csd" : "zero"},
          {"ss3t_init_threshold", s.ss3t_init_threshold},
          {"csd_shell", s.csd_shell}};
}

OrderedJson to_json(const PeakOptions& s) {
  return {{"min_separation_deg", s.min_separation_deg},
          {"relative_threshold", s.relative_threshold},
          {"max_peaks", s.max_peaks},
          {"newton_iterations", s.newton_iterations},
          {"max_step_deg", s.max_step_deg}};
}

OrderedJson to_json(const ModelSpec& s) {
  return {{"kind", to_string(s.kind)}, {"hidden", s.hidden},         {"dropout", s.dropout},
          {"seed", s.seed},            {"input_size", s.input_size}, {"output_size", s.output_size}};
}

OrderedJson to_json(const TrainConfig& s) {
  return {{"lr", s.adam.lr},
          {"beta1", s.adam.beta1},
          {"beta2", s.adam.beta2},
          {"eps", s.adam.eps},
          {"patches_per_subject", s.patches_per_subject},
          {"patch_size", s.patch_size},
          {"patience", s.patience},
          {"max_epochs", s.max_epochs},
          {"seed", s.seed}};
}

OrderedJson to_json(const CohortSpec& s) {
  return {{"n_train", s.n_train},  {"n_val", s.n_val}, {"n_test", s.n_test},
          {"age", {s.age_min, s.age_max}}, {"seed", s.seed}, {"phantom", to_json(s.phantom)}};
}

OrderedJson to_json(const ExperimentConfig& c) {
  OrderedJson peaks = to_json(c.peaks);
  peaks["mesh_subdivisions"] = c.peak_mesh_subdivisions;
  return {{"experiment", to_string(c.kind)},
          {"method", to_string(c.method)},
          {"seed", c.seed},
          {"threads", c.threads},
          {"input_shell", c.input_shell},
          {"lb_lambda", c.lb_lambda},
          {"n_sig", c.n_sig},
          {"ageshift_n_sig", c.ageshift_n_sig},
          {"early_age", {c.early_age.first, c.early_age.second}},
          {"late_age", {c.late_age.first, c.late_age.second}},
          {"cohort", to_json(c.cohort)},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"solver", to_json(c.solver)},
          {"peaks", peaks}};
}

json load_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  try {
    return json::parse(is, nullptr, true, false);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::optional<std::uint64_t> seed_from_env() {
  const char* s = std::getenv("FODKIT_SEED");
  if (!s || !*s) return std::nullopt;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (*end != '\0' || s[0] == '-') throw ConfigError("FODKIT_SEED must be an unsigned integer");
  return static_cast<std::uint64_t>(v);
}

}  // namespace fodkit
