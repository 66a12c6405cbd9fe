#include "fodkit/cli.hpp"

#include "fodkit/config.hpp"
#include "fodkit/csd.hpp"
#include "fodkit/errors.hpp"
#include "fodkit/experiments.hpp"
#include "fodkit/fod_analysis.hpp"
#include "fodkit/gradients_io.hpp"
#include "fodkit/metrics.hpp"
#include "fodkit/regressor.hpp"
#include "fodkit/volume_io.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

namespace fodkit {

namespace {

using nlohmann::json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Ties command-line options to keys of an optional JSON config. Flags given on
// the command line win over the file.
class Binder {
 public:
  explicit Binder(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_path_, "JSON config; keys mirror the long options");
  }

  template <class T>
  CLI::Option* opt(const std::string& key, T& var, const std::string& help) {
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    CLI::Option* o = app_->add_option(flag, var, help);
    scalars_[key] = {o, [&var, key](const json& j) {
                       try {
                         var = j.get<T>();
                       } catch (const json::exception&) {
                         throw ConfigError("config." + key + ": wrong type");
                       }
                     }};
    return o;
  }

  void section(const std::string& key, std::function<void(const json&)> read) { sections_[key] = std::move(read); }

  bool given(const std::string& key) const { return scalars_.at(key).option->count() > 0; }

  void apply() const {
    if (config_path_.empty()) return;
    const json j = load_json_file(config_path_);
    if (!j.is_object()) throw ConfigError(config_path_ + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (auto s = sections_.find(it.key()); s != sections_.end()) {
        s->second(it.value());
      } else if (auto b = scalars_.find(it.key()); b != scalars_.end()) {
        if (b->second.option->count() == 0) b->second.set(it.value());
      } else {
        throw ConfigError("config." + it.key() + ": unknown key");
      }
    }
  }

 private:
  struct Scalar {
    CLI::Option* option;
    std::function<void(const json&)> set;
  };
  CLI::App* app_;
  std::string config_path_;
  std::map<std::string, Scalar> scalars_;
  std::map<std::string, std::function<void(const json&)>> sections_;
};

void require(const std::string& value, const std::string& key) {
  if (value.empty()) throw UsageError("--" + key + " is required (flag or config key)");
}

Mask read_mask(const std::string& path, const Dims& dims) {
  if (path.empty()) return full_mask(dims);
  const Volume m = read_volume(path);
  if (!(m.dims == dims)) throw std::invalid_argument("mask dimensions do not match the input volume");
  Mask out(dims.voxels());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = m.data(0, static_cast<Eigen::Index>(i)) != 0.0 ? 1 : 0;
  return out;
}

int order_for_channels(int channels) {
  for (int l = 0; l <= 16; l += 2)
    if (n_coeffs(l) == channels) return l;
  throw std::invalid_argument("volume with " + std::to_string(channels) + " channels is not an SH coefficient volume");
}

SignalVolume read_signal(const std::string& in, const std::string& bvals, const std::string& bvecs) {
  SignalVolume s;
  auto g = read_gradients(bvals, bvecs);
  for (const auto& w : g.warnings) std::cerr << json{{"warning", w}}.dump() << "\n";
  s.table = std::move(g.table);
  s.volume = read_volume(in);
  if (static_cast<std::size_t>(s.volume.channels()) != s.table.size())
    throw std::invalid_argument("volume has " + std::to_string(s.volume.channels()) + " channels but the table has " +
                                std::to_string(s.table.size()) + " entries");
  return s;
}

std::optional<std::uint64_t> seed_override(const Binder& b, const std::string& key, std::uint64_t value) {
  if (b.given(key)) return value;
  return seed_from_env();
}

struct Command {
  virtual ~Command() = default;
  virtual void run() = 0;
  CLI::App* app = nullptr;
};

struct PhantomCmd : Command {
  std::string out, bvals, bvecs, labels, truth_peaks, in_bvals, in_bvecs;
  double snr = 0, age = 0;
  std::uint64_t seed = 0;
  std::vector<int> dims;
  PhantomSpec spec;
  std::unique_ptr<Binder> b;

  explicit PhantomCmd(CLI::App& root) {
    app = root.add_subcommand("phantom", "Generate a synthetic phantom");
    b = std::make_unique<Binder>(app);
    b->opt("out", out, "Signal volume to write");
    b->opt("bvals", bvals, "Write the gradient table b-values here");
    b->opt("bvecs", bvecs, "Write the gradient table directions here");
    b->opt("labels", labels, "Optional tissue label volume (0 wm, 1 gm, 2 csf)");
    b->opt("truth_peaks", truth_peaks, "Optional ground-truth peaks volume (fiber axes, fractions)");
    b->opt("in_bvals", in_bvals, "Acquisition b-values (default: built-in 300-measurement scheme)");
    b->opt("in_bvecs", in_bvecs, "Acquisition directions");
    b->opt("snr", snr, "SNR relative to b0 (inf for noiseless)");
    b->opt("age", age, "Post-menstrual age in weeks");
    b->opt("seed", seed, "Random seed");
    b->opt("dims", dims, "Grid size nx ny nz")->expected(3);
    b->section("phantom", [this](const json& j) { spec = phantom_spec_from_json(j, spec); });
  }

  void run() override {
    b->apply();
    require(out, "out");
    if (b->given("snr")) spec.snr = snr;
    if (b->given("age")) spec.age_weeks = age;
    if (b->given("dims")) spec.dims = Dims{dims[0], dims[1], dims[2]};
    if (auto s = seed_override(*b, "seed", seed)) spec.seed = *s;
    GradientTable table = default_multishell_table();
    if (!in_bvals.empty() || !in_bvecs.empty()) {
      require(in_bvals, "in-bvals");
      require(in_bvecs, "in-bvecs");
      table = read_gradients(in_bvals, in_bvecs).table;
    }
    const SignalVolume s = generate_phantom(spec, table);
    write_volume(out, s.volume);
    if (!bvals.empty() || !bvecs.empty()) {
      require(bvals, "bvals");
      require(bvecs, "bvecs");
      write_gradients(s.table, bvals, bvecs);
    }
    if (!labels.empty()) {
      Volume l(spec.dims, 1);
      l.voxel_size = s.volume.voxel_size;
      l.affine = s.volume.affine;
      for (std::size_t i = 0; i < s.labels.size(); ++i) l.data(0, static_cast<Eigen::Index>(i)) = static_cast<int>(s.labels[i]);
      write_volume(labels, l);
    }
    if (!truth_peaks.empty()) {
      Volume p(spec.dims, kPeakChannels);
      p.voxel_size = s.volume.voxel_size;
      p.affine = s.volume.affine;
      for (std::size_t i = 0; i < s.truth->size(); ++i) {
        const auto& fibers = (*s.truth)[i].fibers;
        for (std::size_t k = 0; k < fibers.size() && k < 3; ++k) {
          const Eigen::Index c = static_cast<Eigen::Index>(i);
          p.data.block(static_cast<Eigen::Index>(4 * k), c, 3, 1) = canonical_axis(fibers[k].axis);
          p.data(static_cast<Eigen::Index>(4 * k + 3), c) = fibers[k].fraction;
        }
      }
      write_volume(truth_peaks, p);
    }
    std::cout << json{{"voxels", spec.dims.voxels()}, {"measurements", s.table.size()}, {"out", out}}.dump() << "\n";
  }
};

struct FitCmd : Command {
  std::string in, bvals, bvecs, mask, out, tissue, residual, method = "msmt";
  int order = 8, threads = 0;
  double age = 40.0;
  SolverConfig solver;
  std::unique_ptr<Binder> b;

  explicit FitCmd(CLI::App& root) {
    app = root.add_subcommand("fit", "Fit FODs with csd, msmt or ss3t");
    b = std::make_unique<Binder>(app);
    b->opt("in", in, "Signal volume");
    b->opt("bvals", bvals, "b-values file");
    b->opt("bvecs", bvecs, "Directions file");
    b->opt("mask", mask, "Optional mask volume (non-zero = fit)");
    b->opt("out", out, "FOD volume to write");
    b->opt("tissue", tissue, "Optional tissue volume (wm l=0, gm, csf)");
    b->opt("residual", residual, "Optional residual volume");
    b->opt("method", method, "csd, msmt or ss3t");
    b->opt("order", order, "Even SH order of the FOD");
    b->opt("age", age, "Age (weeks) of the tissue model that supplies the responses");
    b->opt("threads", threads, "Worker threads (0: FODKIT_THREADS or all cores)");
    b->section("solver", [this](const json& j) { solver = solver_config_from_json(j, solver); });
  }

  void run() override {
    b->apply();
    require(in, "in");
    require(bvals, "bvals");
    require(bvecs, "bvecs");
    require(out, "out");
    const CsdMethod m = parse_csd_method(method);
    const SignalVolume s = read_signal(in, bvals, bvecs);
    const ResponseSet responses = responses_from_tissue(tissue_params_at_age(age), s.table.shells(), order);
    const VolumeFit fit =
        fit_volume(s, m, responses, ShBasisSpec{order}, solver, read_mask(mask, s.volume.dims), threads);
    write_volume(out, fit.fod);
    if (!tissue.empty()) write_volume(tissue, fit.tissue);
    if (!residual.empty()) write_volume(residual, fit.residual);
    json failures = json::array();
    for (const auto& f : fit.failures) failures.push_back({{"voxel", f.voxel}, {"message", f.message}});
    std::cout << json{{"method", to_string(m)},
                      {"fitted_voxels", fit.fitted_voxels},
                      {"mean_residual", fit.mean_residual},
                      {"max_kkt", fit.max_kkt},
                      {"max_outer_iterations", fit.max_outer_iterations},
                      {"failures", failures}}
                     .dump()
              << "\n";
  }
};

struct PeaksCmd : Command {
  std::string in, out, mask, afd;
  int mesh = 3, threads = 0;
  PeakOptions peaks;
  std::unique_ptr<Binder> b;

  explicit PeaksCmd(CLI::App& root) {
    app = root.add_subcommand("peaks", "Extract FOD peaks");
    b = std::make_unique<Binder>(app);
    b->opt("in", in, "FOD volume");
    b->opt("out", out, "Peaks volume (12 channels)");
    b->opt("mask", mask, "Optional mask volume");
    b->opt("afd", afd, "Optional AFD volume");
    b->opt("mesh", mesh, "Seed mesh subdivisions");
    b->opt("threads", threads, "Worker threads");
    b->section("peaks", [this](const json& j) { peaks = peak_options_from_json(j, peaks); });
  }

  void run() override {
    b->apply();
    require(in, "in");
    require(out, "out");
    if (mesh < 1 || mesh > 6) throw std::invalid_argument("--mesh must be in [1, 6]");
    const Volume fod = read_volume(in);
    const int order = order_for_channels(fod.channels());
    const PeakExtractor ex(tessellate_sphere(mesh), order, peaks);
    const Mask m = read_mask(mask, fod.dims);
    write_volume(out, peaks_volume(fod, order, ex, m, threads));
    if (!afd.empty()) write_volume(afd, afd_volume(fod));
    std::cout << json{{"voxels", mask_count(m)}, {"out", out}}.dump() << "\n";
  }
};

struct MetricsCmd : Command {
  std::string ref_peaks, test_peaks, ref_fod, test_fod, mask, out, csv;
  std::unique_ptr<Binder> b;

  explicit MetricsCmd(CLI::App& root) {
    app = root.add_subcommand("metrics", "Compare two FOD fields");
    b = std::make_unique<Binder>(app);
    b->opt("ref_peaks", ref_peaks, "Reference peaks volume");
    b->opt("test_peaks", test_peaks, "Test peaks volume");
    b->opt("ref_fod", ref_fod, "Reference FOD volume (for AFD)");
    b->opt("test_fod", test_fod, "Test FOD volume (for AFD)");
    b->opt("mask", mask, "Optional mask volume");
    b->opt("out", out, "JSON report (default: stdout)");
    b->opt("csv", csv, "Optional flat CSV");
  }

  void run() override {
    b->apply();
    require(ref_peaks, "ref-peaks");
    require(test_peaks, "test-peaks");
    require(ref_fod, "ref-fod");
    require(test_fod, "test-fod");
    const Volume rp = read_volume(ref_peaks), tp = read_volume(test_peaks);
    const Volume rf = read_volume(ref_fod), tf = read_volume(test_fod);
    for (const Volume* v : {&tp, &rf, &tf})
      if (!(v->dims == rp.dims)) throw std::invalid_argument("metrics: volume dimensions differ");
    const Mask m = read_mask(mask, rp.dims);
    const MetricsReport r =
        compare_fields(peaks_from_volume(rp), peaks_from_volume(tp), afd_volume(rf).data.row(0).transpose(),
                       afd_volume(tf).data.row(0).transpose(), m);
    const std::string text = metrics_to_json(r).dump(2) + "\n";
    if (out.empty()) {
      std::cout << text;
    } else {
      std::ofstream os(out);
      if (!(os << text)) throw std::runtime_error("cannot write " + out);
    }
    if (!csv.empty()) {
      std::ofstream os(csv);
      os << "class,metric,value\n";
      auto num = [](const std::optional<double>& v) {
        std::ostringstream ss;
        ss.precision(10);
        if (v) ss << *v; else ss << "NA";
        return ss.str();
      };
      for (int k = 0; k < 3; ++k) os << k + 1 << ",AR," << num(r.agreement[k]) << "\n";
      for (int k = 0; k < 3; ++k) os << k + 1 << ",AE," << num(r.angular.mean_deg[k]) << "\n";
      os << "all,AFD_MAPE," << num(r.afd.percent) << "\n";
      os << "all,MFF_ref," << num(r.multi_fiber_a) << "\n";
      os << "all,MFF_test," << num(r.multi_fiber_b) << "\n";
      if (!os) throw std::runtime_error("cannot write " + csv);
    }
  }
};

// "input,target,mask" triples.
std::vector<RegressionDataset> load_datasets(const std::vector<std::string>& specs, const std::string& flag) {
  std::vector<RegressionDataset> out;
  for (const auto& s : specs) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string p;
    while (std::getline(ss, p, ',')) parts.push_back(p);
    if (parts.size() != 2 && parts.size() != 3)
      throw UsageError(flag + " expects input,target[,mask], got '" + s + "'");
    RegressionDataset d;
    d.input = read_volume(parts[0]);
    d.target = read_volume(parts[1]);
    d.mask = read_mask(parts.size() == 3 ? parts[2] : "", d.input.dims);
    out.push_back(std::move(d));
  }
  return out;
}

struct TrainCmd : Command {
  std::vector<std::string> train_data, val_data;
  std::string out, kind;
  std::uint64_t seed = 0;
  int epochs = 0;
  double lr = 0;
  ModelSpec model;
  TrainConfig train;
  std::unique_ptr<Binder> b;

  explicit TrainCmd(CLI::App& root) {
    app = root.add_subcommand("train", "Train the SH-to-FOD regressor");
    b = std::make_unique<Binder>(app);
    b->opt("train_data", train_data, "Training triple input,target[,mask] (repeatable)");
    b->opt("val_data", val_data, "Validation triple input,target[,mask] (repeatable)");
    b->opt("out", out, "Model checkpoint to write");
    b->opt("kind", kind, "linear or mlp");
    b->opt("seed", seed, "Seed for initialisation, dropout and patch sampling");
    b->opt("epochs", epochs, "Maximum epochs");
    b->opt("lr", lr, "Adam learning rate");
    b->section("model", [this](const json& j) { model = model_spec_from_json(j, model); });
    b->section("train", [this](const json& j) { train = train_config_from_json(j, train); });
  }

  void run() override {
    b->apply();
    require(out, "out");
    if (train_data.empty() || val_data.empty()) throw UsageError("--train-data and --val-data are required");
    const auto tr = load_datasets(train_data, "--train-data");
    const auto va = load_datasets(val_data, "--val-data");
    if (!kind.empty()) model.kind = parse_model_kind(kind);
    if (b->given("epochs")) train.max_epochs = epochs;
    if (b->given("lr")) train.adam.lr = lr;
    if (auto s = seed_override(*b, "seed", seed)) {
      model.seed = *s;
      train.seed = *s;
    }
    model.input_size = tr.front().input.channels();
    model.output_size = tr.front().target.channels();
    const TrainResult r = fodkit::train(tr, va, model, train);
    save_model(r.model, out, r.history.best_epoch);
    std::cout << json{{"epochs", r.history.val_loss.size()},
                      {"best_epoch", r.history.best_epoch},
                      {"train_loss", r.history.train_loss},
                      {"val_loss", r.history.val_loss},
                      {"stopped_early", r.history.stopped_early}}
                     .dump()
              << "\n";
  }
};

struct PredictCmd : Command {
  std::string model, in, mask, out;
  int window = 16;
  std::unique_ptr<Binder> b;

  explicit PredictCmd(CLI::App& root) {
    app = root.add_subcommand("predict", "Apply a trained regressor");
    b = std::make_unique<Binder>(app);
    b->opt("model", model, "Model checkpoint");
    b->opt("in", in, "Input SH volume");
    b->opt("mask", mask, "Optional mask volume");
    b->opt("out", out, "FOD volume to write");
    b->opt("window", window, "Sliding window edge (voxels)");
  }

  void run() override {
    b->apply();
    require(model, "model");
    require(in, "in");
    require(out, "out");
    const Model m = load_model(model);
    const Volume input = read_volume(in);
    write_volume(out, predict_volume(m, input, read_mask(mask, input.dims), window));
  }
};

struct ProjectCmd : Command {
  std::string in, bvals, bvecs, mask, out;
  double shell = 1000.0, lambda = kDefaultLbLambda;
  int n = 0;
  std::uint64_t seed = 0;
  std::unique_ptr<Binder> b;

  explicit ProjectCmd(CLI::App& root) {
    app = root.add_subcommand("project", "Project b0-normalised single-shell signal onto SH (regressor input)");
    b = std::make_unique<Binder>(app);
    b->opt("in", in, "Signal volume");
    b->opt("bvals", bvals, "b-values file");
    b->opt("bvecs", bvecs, "Directions file");
    b->opt("mask", mask, "Optional mask volume");
    b->opt("out", out, "SH volume to write");
    b->opt("shell", shell, "Shell b-value");
    b->opt("n", n, "Subsample this many shell directions (0: all)");
    b->opt("seed", seed, "Subsampling seed");
    b->opt("lambda", lambda, "Laplace-Beltrami regularisation weight");
  }

  void run() override {
    b->apply();
    require(in, "in");
    require(bvals, "bvals");
    require(bvecs, "bvecs");
    require(out, "out");
    const SignalVolume s = read_signal(in, bvals, bvecs);
    const auto b0 = s.table.b0_indices();
    if (b0.empty()) throw InvalidModelError("project: table has no b=0 measurement");
    std::vector<std::size_t> rows{b0.front()};
    std::vector<std::size_t> dwi = s.table.shell_indices(shell);
    if (n > 0) {
      SubsampleOptions opts;
      if (auto sd = seed_override(*b, "seed", seed)) opts.seed = *sd;
      dwi = subsample_directions(s.table, shell, n, ShBasisSpec{std::min(8, max_order_for(n))}, opts);
    }
    rows.insert(rows.end(), dwi.begin(), dwi.end());
    write_volume(out, project_to_sh(s, rows, read_mask(mask, s.volume.dims), lambda));
  }
};

struct SubsampleCmd : Command {
  std::string bvals, bvecs, out_bvals, out_bvecs;
  double shell = 1000.0;
  int n = 0, order = -1, restarts = 10;
  std::uint64_t seed = 0;
  std::unique_ptr<Binder> b;

  explicit SubsampleCmd(CLI::App& root) {
    app = root.add_subcommand("subsample", "Pick well-conditioned directions of one shell");
    b = std::make_unique<Binder>(app);
    b->opt("bvals", bvals, "b-values file");
    b->opt("bvecs", bvecs, "Directions file");
    b->opt("shell", shell, "Shell b-value");
    b->opt("n", n, "Number of directions");
    b->opt("order", order, "SH order of the conditioning basis (default: largest fitting n, at most 8)");
    b->opt("seed", seed, "Random seed");
    b->opt("restarts", restarts, "Random restarts");
    b->opt("out_bvals", out_bvals, "Optional b-values of b0s plus the subset");
    b->opt("out_bvecs", out_bvecs, "Optional directions of b0s plus the subset");
  }

  void run() override {
    b->apply();
    require(bvals, "bvals");
    require(bvecs, "bvecs");
    if (n <= 0) throw UsageError("--n must be positive");
    const GradientTable table = read_gradients(bvals, bvecs).table;
    SubsampleOptions opts;
    opts.restarts = restarts;
    if (auto sd = seed_override(*b, "seed", seed)) opts.seed = *sd;
    const ShBasisSpec basis{order >= 0 ? order : std::min(8, max_order_for(n))};
    const auto idx = subsample_directions(table, shell, n, basis, opts);
    const double cond = condition_number(sh_basis_matrix(table.directions(idx), basis));
    if (!out_bvals.empty() || !out_bvecs.empty()) {
      require(out_bvals, "out-bvals");
      require(out_bvecs, "out-bvecs");
      auto rows = table.b0_indices();
      rows.insert(rows.end(), idx.begin(), idx.end());
      write_gradients(table.subset(rows), out_bvals, out_bvecs);
    }
    std::cout << json{{"indices", idx}, {"order", basis.order}, {"condition", cond}}.dump() << "\n";
  }
};

struct ExpCmd : Command {
  std::string kind, config, out;
  std::uint64_t seed = 0;
  int threads = 0;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* threads_opt = nullptr;

  explicit ExpCmd(CLI::App& root) {
    app = root.add_subcommand("exp", "Run an experiment: consistency, ablation or ageshift");
    app->add_option("kind", kind, "consistency, ablation or ageshift")
        ->required()
        ->check(CLI::IsMember({"consistency", "ablation", "ageshift"}));
    app->add_option("--config", config, "Experiment JSON config (defaults when omitted)");
    app->add_option("--out", out, "Output directory")->required();
    seed_opt = app->add_option("--seed", seed, "Overrides the experiment and cohort seeds");
    threads_opt = app->add_option("--threads", threads, "Worker threads (0: FODKIT_THREADS or all cores)");
  }

  void run() override {
    ExperimentConfig cfg;
    if (config.empty()) {
      cfg = default_experiment_config(parse_experiment_kind(kind));
    } else {
      json j = load_json_file(config);
      if (!j.is_object()) throw ConfigError(config + ": expected an object");
      if (!j.contains("experiment")) j["experiment"] = kind;
      if (j["experiment"] != kind)
        throw ConfigError(config + ": experiment '" + j["experiment"].dump() + "' does not match '" + kind + "'");
      cfg = experiment_config_from_json(j);
    }
    std::optional<std::uint64_t> s = seed_opt->count() ? std::optional<std::uint64_t>(seed) : seed_from_env();
    if (s) {
      cfg.seed = *s;
      cfg.cohort.seed = *s;
    }
    if (threads_opt->count()) cfg.threads = threads;
    const ExperimentReport r = run_experiment(cfg);
    write_report(r, out);
    std::cout << json{{"experiment", kind}, {"out", out}}.dump() << "\n";
  }
};

std::string error_type(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return "usage";
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (auto v = dynamic_cast<const VolumeError*>(&e)) return std::string("volume.") + to_string(v->code());
  if (dynamic_cast<const ParseError*>(&e)) return "parse";
  if (dynamic_cast<const InvalidModelError*>(&e)) return "invalid_model";
  if (dynamic_cast<const IllConditionedError*>(&e)) return "ill_conditioned";
  if (dynamic_cast<const InfeasibleError*>(&e)) return "infeasible";
  if (dynamic_cast<const EmptyPopulationError*>(&e)) return "empty_population";
  if (dynamic_cast<const NonConvergedError*>(&e)) return "non_converged";
  if (dynamic_cast<const TrainingAbortedError*>(&e)) return "training_aborted";
  if (dynamic_cast<const std::invalid_argument*>(&e)) return "invalid_argument";
  return "runtime";
}

void report_error(const std::string& type, const std::string& message) {
  std::cerr << json{{"error", {{"type", type}, {"message", message}}}}.dump() << "\n";
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"fodkit: constrained spherical deconvolution toolkit"};
  app.require_subcommand(1);
  std::vector<std::unique_ptr<Command>> commands;
  commands.push_back(std::make_unique<PhantomCmd>(app));
  commands.push_back(std::make_unique<FitCmd>(app));
  commands.push_back(std::make_unique<PeaksCmd>(app));
  commands.push_back(std::make_unique<MetricsCmd>(app));
  commands.push_back(std::make_unique<TrainCmd>(app));
  commands.push_back(std::make_unique<PredictCmd>(app));
  commands.push_back(std::make_unique<ProjectCmd>(app));
  commands.push_back(std::make_unique<SubsampleCmd>(app));
  commands.push_back(std::make_unique<ExpCmd>(app));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", e.what());
    return 2;
  }

  try {
    for (auto& c : commands)
      if (c->app->parsed()) c->run();
  } catch (const UsageError& e) {
    report_error("usage", e.what());
    return 2;
  } catch (const std::exception& e) {
    report_error(error_type(e), e.what());
    return 1;
  }
  return 0;
}

}  // namespace fodkit
