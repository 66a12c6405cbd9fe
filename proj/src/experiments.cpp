#include "fodkit/experiments.hpp"

#include "fodkit/config.hpp"
#include "fodkit/errors.hpp"
#include "fodkit/random.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

namespace fodkit {

using OJ = nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kStreamSubject = 0x5355424a;  // "SUBJ"
constexpr std::uint64_t kStreamSplit = 0x53504c54;
constexpr std::uint64_t kStreamAblation = 0x41424c54;
constexpr std::uint64_t kStreamModel = 0x4d4f444c;
constexpr std::uint64_t kStreamTrain = 0x5452414e;

constexpr int kFodOrder = 8;
// Restarts beyond two barely move the condition number but cost seconds per shell.
constexpr int kSubsampleRestarts = 2;

// Fixed-format numbers keep the CSV files byte-stable.
std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "NA"; }

OJ opt_json(const std::optional<double>& v) { return v ? OJ(*v) : OJ(nullptr); }

SignalVolume subset_signal(const SignalVolume& in, const std::vector<std::size_t>& rows) {
  SignalVolume out;
  out.table = in.table.subset(rows);
  out.volume = Volume(in.volume.dims, static_cast<int>(rows.size()));
  out.volume.voxel_size = in.volume.voxel_size;
  out.volume.affine = in.volume.affine;
  out.volume.dtype = in.volume.dtype;
  for (std::size_t k = 0; k < rows.size(); ++k)
    out.volume.data.row(static_cast<Eigen::Index>(k)) = in.volume.data.row(static_cast<Eigen::Index>(rows[k]));
  out.truth = in.truth;
  out.labels = in.labels;
  return out;
}

Eigen::VectorXd afd_vector(const Volume& fod) { return afd_volume(fod).data.row(0).transpose(); }

// Peaks and AFD of one FOD field.
struct Field {
  std::vector<PeakSet> peaks;
  Eigen::VectorXd afd;
};

Field analyse(const Volume& fod, const PeakExtractor& extractor, const Mask& mask, int threads) {
  return {peaks_from_volume(peaks_volume(fod, kFodOrder, extractor, mask, threads)), afd_vector(fod)};
}

struct FitSummary {
  std::size_t voxels = 0;
  std::size_t failures = 0;
  double mean_residual = 0.0;
  double max_kkt = 0.0;
  int max_outer = 0;

  void add(const VolumeFit& f) {
    mean_residual = (mean_residual * static_cast<double>(voxels) + f.mean_residual * static_cast<double>(f.fitted_voxels)) /
                    std::max<double>(1.0, static_cast<double>(voxels + f.fitted_voxels));
    voxels += f.fitted_voxels;
    failures += f.failures.size();
    max_kkt = std::max(max_kkt, f.max_kkt);
    max_outer = std::max(max_outer, f.max_outer_iterations);
  }
  OJ json() const {
    return {{"voxels", voxels},
            {"failures", failures},
            {"mean_residual", mean_residual},
            {"max_kkt", max_kkt},
            {"max_outer_iterations", max_outer}};
  }
};

VolumeFit fit_subject(const SignalVolume& sig, CsdMethod method, const ResponseSet& responses,
                      const ExperimentConfig& cfg, const Mask& mask) {
  if (method == CsdMethod::ss3t)
    return fit_volume(subset_signal(sig, single_shell_rows(sig.table, cfg.input_shell)), method, responses,
                      ShBasisSpec{kFodOrder}, cfg.solver, mask, cfg.threads);
  return fit_volume(sig, method, responses, ShBasisSpec{kFodOrder}, cfg.solver, mask, cfg.threads);
}

// One synthetic subject with its ground-truth field.
struct Subject {
  SignalVolume signal;
  Mask mask;
  Volume gt_fod;
  Field gt;
};

std::vector<Subject> build_cohort(const CohortSpec& cohort, const ExperimentConfig& cfg,
                                  const PeakExtractor& extractor, FitSummary& fits) {
  const GradientTable table = default_multishell_table();
  std::vector<Subject> out;
  out.reserve(static_cast<std::size_t>(cohort.n_subjects()));
  for (int i = 0; i < cohort.n_subjects(); ++i) {
    const PhantomSpec spec = subject_spec(cohort, i);
    Subject s;
    s.signal = generate_phantom(spec, table);
    s.mask = wm_mask(s.signal);
    const ResponseSet responses = responses_from_tissue(tissue_params_at_age(spec.age_weeks), table.shells());
    VolumeFit fit = fit_subject(s.signal, cfg.method, responses, cfg, s.mask);
    fits.add(fit);
    s.gt_fod = std::move(fit.fod);
    s.gt = analyse(s.gt_fod, extractor, s.mask, cfg.threads);
    out.push_back(std::move(s));
  }
  return out;
}

// Unweighted mean over subjects; undefined per-subject values are skipped.
MetricsReport mean_report(const std::vector<MetricsReport>& rs) {
  MetricsReport m;
  if (rs.empty()) return m;
  const double n = static_cast<double>(rs.size());
  for (const auto& r : rs) {
    m.confusion.fractions += r.confusion.fractions / n;
    m.confusion.population += r.confusion.population;
    m.afd.percent += r.afd.percent / n;
    m.afd.voxels += r.afd.voxels;
    m.afd.excluded_zero_reference += r.afd.excluded_zero_reference;
    m.multi_fiber_a += r.multi_fiber_a / n;
    m.multi_fiber_b += r.multi_fiber_b / n;
  }
  for (int k = 0; k < 3; ++k) {
    double ar = 0, ae = 0;
    int n_ar = 0, n_ae = 0;
    for (const auto& r : rs) {
      if (r.agreement[k]) {
        ar += *r.agreement[k];
        ++n_ar;
      }
      if (r.angular.mean_deg[k]) {
        ae += *r.angular.mean_deg[k];
        ++n_ae;
      }
      m.angular.voxels[k] += r.angular.voxels[k];
    }
    if (n_ar) m.agreement[k] = ar / n_ar;
    if (n_ae) m.angular.mean_deg[k] = ae / n_ae;
  }
  return m;
}

void add_csv(ExperimentReport& rep, const std::string& exp, const std::string& condition, const std::string& method,
             const MetricsReport& m) {
  auto row = [&](const std::string& cls, const std::string& metric, const std::string& value) {
    rep.csv_rows.push_back({exp, condition, method, cls, metric, value});
  };
  for (int k = 0; k < 3; ++k) row(std::to_string(k + 1), "AR", fmt(m.agreement[k]));
  for (int k = 0; k < 3; ++k) row(std::to_string(k + 1), "AE", fmt(m.angular.mean_deg[k]));
  row("all", "AFD_MAPE", fmt(m.afd.percent));
  row("all", "MFF_ref", fmt(m.multi_fiber_a));
  row("all", "MFF_test", fmt(m.multi_fiber_b));
}

OJ condition_json(const std::string& name, const MetricsReport& mean, const std::vector<MetricsReport>& per_subject) {
  OJ subjects = OJ::array();
  for (const auto& r : per_subject) subjects.push_back(metrics_to_json(r));
  return {{"name", name}, {"metrics", metrics_to_json(mean)}, {"per_subject", std::move(subjects)}};
}

OJ history_json(const TrainHistory& h) {
  double best = h.best_epoch >= 0 ? h.val_loss[static_cast<std::size_t>(h.best_epoch)] : 0.0;
  return {{"epochs", h.val_loss.size()},
          {"best_epoch", h.best_epoch},
          {"best_val_loss", best},
          {"final_train_loss", h.train_loss.empty() ? 0.0 : h.train_loss.back()},
          {"stopped_early", h.stopped_early}};
}

// Input rows of the learned model: the first b0 plus n directions of the input shell.
std::vector<std::size_t> input_rows(const GradientTable& table, const ExperimentConfig& cfg, int n) {
  const int order = std::min(kFodOrder, max_order_for(n));
  SubsampleOptions opts;
  opts.seed = derive_seed(cfg.seed, kStreamAblation, static_cast<std::uint64_t>(n));
  opts.restarts = kSubsampleRestarts;
  auto rows = subsample_directions(table, cfg.input_shell, n, ShBasisSpec{order}, opts);
  const auto b0 = table.b0_indices();
  if (b0.empty()) throw InvalidModelError("input table has no b=0 measurement");
  rows.insert(rows.begin(), b0.front());
  return rows;
}

std::vector<RegressionDataset> datasets(const std::vector<Subject>& subjects, int begin, int end,
                                        const std::vector<std::size_t>& rows, const ExperimentConfig& cfg) {
  std::vector<RegressionDataset> out;
  for (int i = begin; i < end; ++i) {
    const Subject& s = subjects[static_cast<std::size_t>(i)];
    out.push_back({project_to_sh(s.signal, rows, s.mask, cfg.lb_lambda), s.gt_fod, s.mask});
  }
  return out;
}

TrainResult train_model(const std::vector<Subject>& subjects, const CohortSpec& cohort,
                        const std::vector<std::size_t>& rows, const ExperimentConfig& cfg, std::uint64_t tag) {
  const auto tr = datasets(subjects, 0, cohort.n_train, rows, cfg);
  const auto va = datasets(subjects, cohort.n_train, cohort.n_train + cohort.n_val, rows, cfg);
  ModelSpec spec = cfg.model;
  spec.input_size = tr.front().input.channels();
  spec.output_size = n_coeffs(kFodOrder);
  spec.seed = derive_seed(cfg.seed, kStreamModel, tag);
  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.seed, kStreamTrain, tag);
  return train(tr, va, spec, tc);
}

// Metrics of a trained model on the test subjects of a cohort.
std::vector<MetricsReport> evaluate(const Model& model, const std::vector<Subject>& subjects, const CohortSpec& cohort,
                                    const std::vector<std::size_t>& rows, const ExperimentConfig& cfg,
                                    const PeakExtractor& extractor) {
  std::vector<MetricsReport> out;
  for (int i = cohort.n_train + cohort.n_val; i < cohort.n_subjects(); ++i) {
    const Subject& s = subjects[static_cast<std::size_t>(i)];
    const Volume input = project_to_sh(s.signal, rows, s.mask, cfg.lb_lambda);
    const Volume pred = predict_volume(model, input, s.mask);
    const Field f = analyse(pred, extractor, s.mask, cfg.threads);
    out.push_back(compare_fields(s.gt.peaks, f.peaks, s.gt.afd, f.afd, s.mask));
  }
  return out;
}

PeakExtractor make_extractor(const ExperimentConfig& cfg) {
  return PeakExtractor(tessellate_sphere(cfg.peak_mesh_subdivisions), kFodOrder, cfg.peaks);
}

OJ report_head(const ExperimentConfig& cfg) {
  return {{"experiment", to_string(cfg.kind)}, {"config", to_json(cfg)}};
}

}  // namespace

void CohortSpec::validate() const {
  if (n_train < 1 || n_val < 1 || n_test < 1)
    throw std::invalid_argument("cohort: train, validation and test splits need at least one subject each");
  if (!(age_min <= age_max)) throw std::invalid_argument("cohort: age_min exceeds age_max");
  if (!(age_min >= 26.0 && age_max <= 46.0)) throw std::invalid_argument("cohort: ages must lie in [26, 46] weeks");
  phantom.validate();
}

PhantomSpec subject_spec(const CohortSpec& cohort, int i) {
  if (i < 0 || i >= cohort.n_subjects()) throw std::out_of_range("subject index out of range");
  PhantomSpec s = cohort.phantom;
  s.seed = derive_seed(cohort.seed, kStreamSubject, static_cast<std::uint64_t>(i));
  auto rng = make_rng(cohort.seed, kStreamSubject + 1, static_cast<std::uint64_t>(i));
  s.age_weeks = cohort.age_min == cohort.age_max ? cohort.age_min : uniform(rng, cohort.age_min, cohort.age_max);
  return s;
}

std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::consistency: return "consistency";
    case ExperimentKind::ablation: return "ablation";
    case ExperimentKind::ageshift: return "ageshift";
  }
  return "?";
}

ExperimentKind parse_experiment_kind(const std::string& s) {
  if (s == "consistency") return ExperimentKind::consistency;
  if (s == "ablation") return ExperimentKind::ablation;
  if (s == "ageshift") return ExperimentKind::ageshift;
  throw std::invalid_argument("unknown experiment '" + s + "' (consistency, ablation, ageshift)");
}

void ExperimentConfig::validate() const {
  cohort.validate();
  if (kind == ExperimentKind::consistency && method == CsdMethod::csd)
    throw std::invalid_argument("consistency experiment compares msmt or ss3t");
  if (n_sig.empty()) throw std::invalid_argument("n_sig list is empty");
  for (int n : n_sig)
    if (n < 6) throw std::invalid_argument("n_sig entries must be at least 6");
  if (ageshift_n_sig < 6) throw std::invalid_argument("ageshift_n_sig must be at least 6");
  for (const auto& r : {early_age, late_age})
    if (!(r.first <= r.second && r.first >= 26.0 && r.second <= 46.0))
      throw std::invalid_argument("age ranges must be ordered and lie in [26, 46] weeks");
  if (!(lb_lambda >= 0)) throw std::invalid_argument("lb_lambda must be non-negative");
  if (threads < 0) throw std::invalid_argument("threads must be >= 0");
  if (peak_mesh_subdivisions < 1 || peak_mesh_subdivisions > 6)
    throw std::invalid_argument("peak mesh subdivisions must be in [1, 6]");
  model.validate();
}

ExperimentConfig default_experiment_config(ExperimentKind kind) {
  ExperimentConfig c;
  c.kind = kind;
  c.method = kind == ExperimentKind::ablation ? CsdMethod::ss3t : CsdMethod::msmt;
  c.cohort.phantom.dims = Dims{8, 8, 5};
  c.cohort.phantom.snr = 20.0;
  // Linear by default: with cohorts this small the MLP memorises the training
  // age range and the self/cross age comparison turns into noise.
  c.model.kind = ModelSpec::Kind::linear;
  c.model.hidden = {64};
  c.model.dropout = 0.0;
  c.train.adam.lr = 3e-3;
  c.train.patches_per_subject = 8;
  c.train.patch_size = 16;
  c.train.patience = 10;
  c.train.max_epochs = 100;
  c.threads = 1;
  return c;
}

std::vector<std::size_t> single_shell_rows(const GradientTable& table, double shell) {
  std::vector<std::size_t> rows = table.b0_indices();
  const auto s = table.shell_indices(shell);
  if (s.empty()) throw InvalidModelError("no measurements on shell b=" + fmt(shell));
  rows.insert(rows.end(), s.begin(), s.end());
  std::sort(rows.begin(), rows.end());
  return rows;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> consistency_split(const GradientTable& table,
                                                                                CsdMethod method,
                                                                                std::uint64_t seed,
                                                                                double ss3t_shell) {
  std::vector<double> shells;
  for (double s : table.shells())
    if (s > 0.0) shells.push_back(s);
  if (method == CsdMethod::ss3t) {
    if (table.shell_indices(ss3t_shell).empty())
      throw InvalidModelError("consistency split: table has no b=" + fmt(ss3t_shell) + " shell");
    shells = {shell_of(ss3t_shell)};
  }
  const auto b0 = table.b0_indices();
  if (b0.size() < 2) throw InvalidModelError("consistency split needs at least two b=0 measurements");
  if (shells.empty()) throw InvalidModelError("consistency split: no diffusion-weighted shell");

  std::vector<std::size_t> a, b;
  for (std::size_t k = 0; k < b0.size(); ++k) (k % 2 == 0 ? a : b).push_back(b0[k]);
  for (double shell : shells) {
    const auto idx = table.shell_indices(shell);
    const int half = static_cast<int>(idx.size() / 2);
    const int order = std::min(kFodOrder, max_order_for(half));
    if (order < 0) throw InvalidModelError("shell b=" + fmt(shell) + " is too small to split");
    SubsampleOptions opts;
    opts.seed = derive_seed(seed, kStreamSplit, static_cast<std::uint64_t>(shell));
    opts.restarts = kSubsampleRestarts;
    const auto chosen = subsample_directions(table, shell, half, ShBasisSpec{order}, opts);
    const std::set<std::size_t> in_a(chosen.begin(), chosen.end());
    for (auto i : idx) (in_a.count(i) ? a : b).push_back(i);
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return {a, b};
}

Volume project_to_sh(const SignalVolume& vol, const std::vector<std::size_t>& rows, const Mask& mask,
                     double lb_lambda) {
  const Dims dims = vol.volume.dims;
  if (mask.size() != dims.voxels()) throw std::invalid_argument("project_to_sh: mask size mismatch");
  std::optional<std::size_t> ref;
  std::vector<std::size_t> dwi;
  for (auto r : rows) {
    if (r >= vol.table.size()) throw std::out_of_range("project_to_sh: row index out of range");
    if (vol.table.is_b0(r)) {
      if (!ref) ref = r;
    } else {
      dwi.push_back(r);
    }
  }
  if (!ref) throw InvalidModelError("project_to_sh: rows contain no b=0 measurement");
  const int order = std::min(kFodOrder, max_order_for(static_cast<int>(dwi.size())));
  if (order < 0) throw InvalidModelError("project_to_sh: no diffusion-weighted rows");
  const ShProjector proj(vol.table.directions(dwi), ShBasisSpec{order}, lb_lambda);

  Volume out(dims, n_coeffs(order));
  out.voxel_size = vol.volume.voxel_size;
  out.affine = vol.volume.affine;
  Eigen::VectorXd s(static_cast<Eigen::Index>(dwi.size()));
  for (std::size_t v = 0; v < dims.voxels(); ++v) {
    if (!mask[v]) continue;
    const double s0 = vol.volume.data(static_cast<Eigen::Index>(*ref), static_cast<Eigen::Index>(v));
    if (!(s0 > 0.0)) continue;  // left at zero
    for (std::size_t k = 0; k < dwi.size(); ++k)
      s(static_cast<Eigen::Index>(k)) =
          vol.volume.data(static_cast<Eigen::Index>(dwi[k]), static_cast<Eigen::Index>(v)) / s0;
    out.voxel(v) = proj.fit(s).values;
  }
  return out;
}

OJ metrics_to_json(const MetricsReport& m) {
  OJ cm = OJ::array();
  for (int i = 0; i < 3; ++i) cm.push_back({m.confusion.fractions(i, 0), m.confusion.fractions(i, 1), m.confusion.fractions(i, 2)});
  return {{"confusion", cm},
          {"population", m.confusion.population},
          {"agreement_rate", {opt_json(m.agreement[0]), opt_json(m.agreement[1]), opt_json(m.agreement[2])}},
          {"angular_error_deg",
           {opt_json(m.angular.mean_deg[0]), opt_json(m.angular.mean_deg[1]), opt_json(m.angular.mean_deg[2])}},
          {"angular_voxels", {m.angular.voxels[0], m.angular.voxels[1], m.angular.voxels[2]}},
          {"afd_mape_percent", m.afd.percent},
          {"afd_voxels", m.afd.voxels},
          {"afd_excluded_zero_reference", m.afd.excluded_zero_reference},
          {"multi_fiber_fraction", {{"ref", m.multi_fiber_a}, {"test", m.multi_fiber_b}}}};
}

ExperimentReport run_consistency(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.method == CsdMethod::csd) throw std::invalid_argument("consistency experiment compares msmt or ss3t");
  const GradientTable table = default_multishell_table();
  const auto [half_a, half_b] = consistency_split(table, cfg.method, cfg.seed, cfg.input_shell);
  const PeakExtractor extractor = make_extractor(cfg);

  FitSummary fits;
  std::vector<MetricsReport> per_subject;
  for (int i = 0; i < cfg.cohort.n_subjects(); ++i) {
    const PhantomSpec spec = subject_spec(cfg.cohort, i);
    const SignalVolume sig = generate_phantom(spec, table);
    const Mask mask = wm_mask(sig);
    const ResponseSet responses = responses_from_tissue(tissue_params_at_age(spec.age_weeks), table.shells());
    Field fields[2];
    int h = 0;
    for (const auto* rows : {&half_a, &half_b}) {
      const VolumeFit fit = fit_volume(subset_signal(sig, *rows), cfg.method, responses, ShBasisSpec{kFodOrder},
                                       cfg.solver, mask, cfg.threads);
      fits.add(fit);
      fields[h++] = analyse(fit.fod, extractor, mask, cfg.threads);
    }
    per_subject.push_back(compare_fields(fields[0].peaks, fields[1].peaks, fields[0].afd, fields[1].afd, mask));
  }
  const MetricsReport mean = mean_report(per_subject);

  ExperimentReport rep;
  rep.json = report_head(cfg);
  OJ counts = OJ::object();
  for (double s : table.shells()) {
    int na = 0, nb = 0;
    for (auto i : half_a) na += shell_of(table.entries[i].bvalue) == s;
    for (auto i : half_b) nb += shell_of(table.entries[i].bvalue) == s;
    if (na + nb) counts[fmt(s)] = {na, nb};
  }
  rep.json["split"] = {{"half_a", half_a}, {"half_b", half_b}, {"counts_per_shell", counts}};
  rep.json["conditions"] = OJ::array({condition_json(to_string(cfg.method), mean, per_subject)});
  rep.json["diagnostics"] = {{"fits", fits.json()}};
  add_csv(rep, "consistency", "halfA_vs_halfB", to_string(cfg.method), mean);
  return rep;
}

ExperimentReport run_ablation(const ExperimentConfig& cfg) {
  cfg.validate();
  const PeakExtractor extractor = make_extractor(cfg);
  FitSummary fits;
  const auto subjects = build_cohort(cfg.cohort, cfg, extractor, fits);
  const GradientTable& table = subjects.front().signal.table;

  ExperimentReport rep;
  rep.json = report_head(cfg);
  OJ conditions = OJ::array(), training = OJ::array();
  for (int n : cfg.n_sig) {
    const auto rows = input_rows(table, cfg, n);
    const TrainResult tr = train_model(subjects, cfg.cohort, rows, cfg, static_cast<std::uint64_t>(n));
    const auto per_subject = evaluate(tr.model, subjects, cfg.cohort, rows, cfg, extractor);
    const MetricsReport mean = mean_report(per_subject);
    const std::string name = "n_sig=" + std::to_string(n);
    OJ c = condition_json(name, mean, per_subject);
    c["n_sig"] = n;
    c["input_order"] = std::min(kFodOrder, max_order_for(n));
    conditions.push_back(std::move(c));
    training.push_back({{"condition", name}, {"history", history_json(tr.history)}});
    add_csv(rep, "ablation", name, to_string(cfg.method), mean);
    rep.plot_rows.push_back({std::to_string(n), to_string(cfg.method), fmt(mean.agreement[0]), fmt(mean.agreement[1]),
                             fmt(mean.agreement[2]), fmt(mean.angular.mean_deg[0]), fmt(mean.angular.mean_deg[1]),
                             fmt(mean.angular.mean_deg[2]), fmt(mean.afd.percent)});
  }
  rep.json["conditions"] = std::move(conditions);
  rep.json["diagnostics"] = {{"fits", fits.json()}, {"training", std::move(training)}};
  return rep;
}

ExperimentReport run_age_shift(const ExperimentConfig& cfg) {
  cfg.validate();
  const PeakExtractor extractor = make_extractor(cfg);
  // Both groups share the cohort seed, so they differ only in age.
  CohortSpec early = cfg.cohort, late = cfg.cohort;
  early.age_min = cfg.early_age.first;
  early.age_max = cfg.early_age.second;
  late.age_min = cfg.late_age.first;
  late.age_max = cfg.late_age.second;

  FitSummary fits;
  const std::vector<Subject> groups[2] = {build_cohort(early, cfg, extractor, fits),
                                          build_cohort(late, cfg, extractor, fits)};
  const CohortSpec* specs[2] = {&early, &late};
  const char* names[2] = {"early", "late"};
  const auto rows = input_rows(groups[0].front().signal.table, cfg, cfg.ageshift_n_sig);

  ExperimentReport rep;
  rep.json = report_head(cfg);
  OJ conditions = OJ::array(), training = OJ::array();
  MetricsReport cell[2][2];
  for (int m = 0; m < 2; ++m) {
    const TrainResult tr = train_model(groups[m], *specs[m], rows, cfg, static_cast<std::uint64_t>(m));
    training.push_back({{"model", names[m]}, {"history", history_json(tr.history)}});
    for (int t = 0; t < 2; ++t) {
      const auto per_subject = evaluate(tr.model, groups[t], *specs[t], rows, cfg, extractor);
      cell[m][t] = mean_report(per_subject);
      const std::string name = std::string("model=") + names[m] + ",test=" + names[t];
      OJ c = condition_json(name, cell[m][t], per_subject);
      c["model"] = names[m];
      c["test"] = names[t];
      c["self_age"] = m == t;
      conditions.push_back(std::move(c));
      add_csv(rep, "ageshift", name, to_string(cfg.method), cell[m][t]);
    }
  }
  OJ summary = OJ::object();
  for (int k = 0; k < 3; ++k) {
    auto avg = [&](const std::optional<double>& x, const std::optional<double>& y) -> std::optional<double> {
      if (x && y) return (*x + *y) / 2;
      return x ? x : y;
    };
    summary["AR" + std::to_string(k + 1)] = {
        {"self", opt_json(avg(cell[0][0].agreement[k], cell[1][1].agreement[k]))},
        {"cross", opt_json(avg(cell[0][1].agreement[k], cell[1][0].agreement[k]))}};
  }
  rep.json["conditions"] = std::move(conditions);
  rep.json["summary"] = std::move(summary);
  rep.json["diagnostics"] = {{"fits", fits.json()}, {"training", std::move(training)}};
  return rep;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  switch (cfg.kind) {
    case ExperimentKind::consistency: return run_consistency(cfg);
    case ExperimentKind::ablation: return run_ablation(cfg);
    case ExperimentKind::ageshift: return run_age_shift(cfg);
  }
  throw std::invalid_argument("unknown experiment kind");
}

void write_report(const ExperimentReport& report, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);
  auto open = [&](const char* name) {
    std::ofstream os(base / name, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + (base / name).string());
    return os;
  };
  auto write_csv = [&](const char* name, const char* header, const std::vector<std::vector<std::string>>& rows) {
    auto os = open(name);
    os << header << "\n";
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << r[i];
      os << "\n";
    }
    if (!os) throw std::runtime_error(std::string("write failed: ") + name);
  };
  {
    auto os = open("report.json");
    os << report.json.dump(2) << "\n";
    if (!os) throw std::runtime_error("write failed: report.json");
  }
  write_csv("metrics.csv", "experiment,condition,method,class,metric,value", report.csv_rows);
  if (!report.plot_rows.empty())
    write_csv("plot.csv", "n_sig,gt_method,AR1,AR2,AR3,AE1,AE2,AE3,AFD_MAPE", report.plot_rows);
}

}  // namespace fodkit
