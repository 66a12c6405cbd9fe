// Acceptance checks, one per criterion. Usage: acceptance [N ...]; with no
// arguments every criterion runs. Prints one PASS/FAIL line per criterion and
// exits non-zero if any failed.

#include "fodkit/csd.hpp"
#include "fodkit/errors.hpp"
#include "fodkit/experiments.hpp"
#include "fodkit/fod_analysis.hpp"
#include "fodkit/forward_model.hpp"
#include "fodkit/metrics.hpp"
#include "fodkit/nnqp.hpp"
#include "fodkit/random.hpp"
#include "fodkit/regressor.hpp"
#include "fodkit/volume_io.hpp"

#include "qp_oracle.hpp"
#include "test_util.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

using namespace fodkit;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string num(double x, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, x);
  return buf;
}

// 1: published confusion matrices through the metric code.
void agreement_identity(Outcome& o) {
  const auto start = Clock::now();
  Eigen::Matrix3d msmt, ss3t;
  msmt << 0.715, 0.0446, 0.0052, 0.0362, 0.1013, 0.021, 0.0035, 0.0188, 0.0544;
  ss3t << 0.2955, 0.0775, 0.0062, 0.0774, 0.3517, 0.0494, 0.0056, 0.0532, 0.0835;
  const struct {
    const char* name;
    Eigen::Matrix3d m;
    double ar[3];
    double mff;
  } rows[2] = {{"msmt", msmt, {88.8, 45.6, 52.8}, 23.5}, {"ss3t", ss3t, {63.9, 57.7, 42.1}, 62.1}};
  for (const auto& r : rows) {
    const auto cm = FiberCountConfusion::from_fractions(r.m);
    o.detail << r.name << " AR";
    for (int k = 1; k <= 3; ++k) {
      const auto ar = agreement_rate(cm, k);
      o.check(ar && std::abs(*ar - r.ar[k - 1]) <= 0.1, std::string(r.name) + " AR" + std::to_string(k));
      o.detail << " " << (ar ? num(*ar) : "NA");
    }
    const double mff = multi_fiber_fraction(cm, Side::a);
    o.check(std::abs(mff - r.mff) <= 1.0, std::string(r.name) + " multi-fiber fraction");
    o.detail << " mff " << num(mff) << "; ";
  }
  const double t = seconds_since(start);
  o.check(t < 1.0, "runtime < 1 s");
  o.detail << "time " << num(t) << " s";
}

// 2: QP solver against exhaustive active-set enumeration.
void qp_oracle_equivalence(Outcome& o) {
  const auto start = Clock::now();
  double worst_obj = 0.0, worst_kkt = 0.0;
  int max_m = 0;
  for (std::uint64_t seed = 1000; seed < 1200; ++seed) {
    const QpProblem p = qp_oracle::random_problem(seed);
    max_m = std::max(max_m, static_cast<int>(p.constraints.rows()));
    Eigen::VectorXd xb;
    const double ob = qp_oracle::brute_force(p, xb);
    const QpSolution s = nnqp_solve(p);
    const auto& d = s.diagnostics;
    worst_obj = std::max(worst_obj, std::abs(d.objective - ob) / (1.0 + ob));
    worst_kkt = std::max({worst_kkt, d.stationarity, d.primal_violation, d.dual_violation, d.complementarity});
  }
  const double t = seconds_since(start);
  o.check(max_m <= 12, "at most 12 constraints");
  o.check(worst_obj <= 1e-8, "objective within 1e-8");
  o.check(worst_kkt <= 1e-6, "KKT residuals <= 1e-6");
  o.check(t < 30.0, "runtime < 30 s");
  o.detail << "200 problems, max constraints " << max_m << ", worst objective gap " << num(worst_obj)
           << ", worst KKT " << num(worst_kkt) << ", time " << num(t) << " s";
}

// 3: noiseless round trips through all three deconvolution methods.
void noiseless_round_trips(Outcome& o) {
  const auto start = Clock::now();
  const GradientTable table = default_multishell_table();
  const TissueParams params = tissue_params_at_age(40);
  const ResponseSet responses = responses_from_tissue(params, table.shells(), 8);
  const auto shell_rows = table.shell_indices(1000);
  const GradientTable shell = table.subset(shell_rows);
  const GradientTable single = table.subset(testutil::b0_and_shell(table, 1000));
  const PeakExtractor peaks(tessellate_sphere(3), 8);
  const SingleShellCsd csd(table.directions(shell_rows), responses.get(Tissue::wm, 1000), {8});
  const MsmtCsd msmt(table, responses, {8});
  const Ss3tCsd ss3t(single, responses, {8});

  // 100 voxels: 50 single fibers, 50 orthogonal equal-weight crossings, with
  // random tissue fractions. Each voxel is synthesized twice: from a
  // band-limited non-negative FOD through the matched responses, where the
  // models are exact, and from the tensor mixture, where order-8 truncation
  // biases the tissue split but peaks must still hold. Single-tissue CSD sees
  // WM-only signal on the b=1000 shell.
  // Noiseless two-shell data leaves a flat valley in the WM l0/GM/CSF split
  // that the alternation crawls along. Peaks are judged on the best iterate
  // as fit_volume would report it.
  int ss3t_capped = 0;
  const auto ss3t_wm = [&](const Eigen::VectorXd& signal) {
    try {
      return ss3t.fit(signal).decomposition.wm;
    } catch (const NonConvergedError& e) {
      ++ss3t_capped;
      return ShCoefficients(8, e.best().head(n_coeffs(8)));
    }
  };
  auto rng = make_rng(303, 1);
  std::map<std::string, double> worst1, worst2;
  std::map<std::string, int> wrong_count;
  double worst_fraction = 0.0;
  for (int v = 0; v < 100; ++v) {
    const bool crossing = v >= 50;
    const Direction a = testutil::random_direction(rng);
    Direction b = testutil::random_direction(rng);
    b = (b - b.dot(a) * a).normalized();
    const double f_wm = uniform(rng, 0.5, 0.9), f_gm = uniform(rng, 0.0, 1.0 - f_wm), f_csf = 1.0 - f_wm - f_gm;
    const std::vector<Direction> truth = crossing ? std::vector<Direction>{a, b} : std::vector<Direction>{a};

    const auto lobes = [&](double mass) {
      return crossing ? testutil::power_lobes({{a, 0.5 * mass}, {b, 0.5 * mass}}) : testutil::power_lobes({{a, mass}});
    };
    std::vector<Fiber> fibers = crossing ? std::vector<Fiber>{{a, 0.5}, {b, 0.5}} : std::vector<Fiber>{{a, 1.0}};
    const FiberConfig mixed{fibers, f_wm, f_gm, f_csf};
    const FiberConfig pure{fibers, 1.0, 0.0, 0.0};

    std::map<std::string, PeakSet> got;
    const CsdResult rm = msmt.fit(testutil::matched_signal(table, params, lobes(f_wm), f_gm, f_csf));
    got["msmt"] = peaks.extract(rm.decomposition.wm);
    got["ss3t"] = peaks.extract(ss3t_wm(testutil::matched_signal(single, params, lobes(f_wm), f_gm, f_csf)));
    got["csd"] = peaks.extract(csd.fit(testutil::matched_signal(shell, params, lobes(1.0), 0.0, 0.0)).decomposition.wm);
    got["msmt tensor"] = peaks.extract(msmt.fit(simulate_voxel(mixed, table, params)).decomposition.wm);
    got["ss3t tensor"] = peaks.extract(ss3t_wm(simulate_voxel(mixed, single, params)));
    got["csd tensor"] = peaks.extract(csd.fit(simulate_voxel(pure, shell, params)).decomposition.wm);
    const Eigen::Vector3d fr = rm.decomposition.signal_fractions();
    worst_fraction = std::max(worst_fraction, (fr - Eigen::Vector3d(f_wm, f_gm, f_csf)).cwiseAbs().maxCoeff());
    for (const auto& [name, ps] : got) {
      if (ps.size() != truth.size()) {
        ++wrong_count[name];
        continue;
      }
      auto& w = crossing ? worst2[name] : worst1[name];
      w = std::max(w, testutil::worst_match(ps, truth));
    }
  }
  for (const char* name : {"csd", "msmt", "ss3t", "csd tensor", "msmt tensor", "ss3t tensor"}) {
    o.check(wrong_count[name] == 0, std::string(name) + " peak counts");
    o.check(worst1[name] < 1.0, std::string(name) + " single-fiber AE < 1 deg");
    o.check(worst2[name] < 2.0, std::string(name) + " crossing AE < 2 deg");
    o.detail << name << ": wrong counts " << wrong_count[name] << ", worst AE single " << num(worst1[name], 3)
             << " crossing " << num(worst2[name], 3) << "; ";
  }
  o.check(worst_fraction <= 1e-3, "MSMT fractions within 1e-3");
  const double t = seconds_since(start);
  o.check(t < 60.0, "runtime < 1 min");
  o.detail << "ss3t fits at the outer cap " << ss3t_capped << "/200; ";
  o.detail << "msmt worst fraction error " << num(worst_fraction, 3) << ", time " << num(t) << " s";
}

// 4: SH fit/eval identity and coefficient-space convolution.
void sh_machinery(Outcome& o) {
  const auto start = Clock::now();
  auto rng = make_rng(404, 1);
  Directions dirs;
  for (int i = 0; i < 300; ++i) dirs.push_back(testutil::random_direction(rng));
  double worst_fit = 0.0;
  for (int t = 0; t < 20; ++t) {
    Eigen::VectorXd c(45);
    for (int i = 0; i < 45; ++i) c(i) = standard_normal(rng);
    const ShCoefficients back = sh_fit(sh_eval(ShCoefficients(8, c), dirs), dirs, {8}, 0.0);
    worst_fit = std::max(worst_fit, (back.values - c).norm() / c.norm());
  }

  const auto rule = testutil::product_rule(64, 128);
  const Eigen::MatrixXd Y = sh_basis_matrix(rule.points, {8});
  const double axial = 1.7e-3, radial = 0.2e-3;
  double worst_conv = 0.0;
  for (int t = 0; t < 50; ++t) {
    const double b = t % 2 ? 2600.0 : 1000.0;
    const ZonalResponse r = response_from_model(axial, radial, b, 8);
    Eigen::VectorXd c(45);
    for (int i = 0; i < 45; ++i) c(i) = standard_normal(rng);
    const Eigen::VectorXd f = Y * c;
    Directions gs;
    for (int k = 0; k < 20; ++k) gs.push_back(testutil::random_direction(rng));
    const Eigen::VectorXd fast = fod_to_signal(ShCoefficients(8, c), r, gs);
    Eigen::VectorXd quad(static_cast<Eigen::Index>(gs.size()));
    for (std::size_t k = 0; k < gs.size(); ++k) {
      double q = 0.0;
      for (std::size_t i = 0; i < rule.points.size(); ++i) {
        const double ct = rule.points[i].dot(gs[k]);
        q += rule.weights[i] * f(static_cast<Eigen::Index>(i)) * std::exp(-b * (radial + (axial - radial) * ct * ct));
      }
      quad(static_cast<Eigen::Index>(k)) = q;
    }
    worst_conv = std::max(worst_conv, (fast - quad).norm() / quad.norm());
  }
  const double t = seconds_since(start);
  o.check(worst_fit <= 1e-10, "fit of eval identity to 1e-10");
  o.check(worst_conv <= 1e-6, "convolution within 1e-6");
  o.check(t < 10.0, "runtime < 10 s");
  o.detail << "fit/eval worst relative error " << num(worst_fit) << " (L=8, 300 directions), convolution worst "
           << num(worst_conv) << " over 50 FODs, time " << num(t) << " s";
}

// 5: SS3T outer loop on noisy voxels.
void ss3t_behaviour(Outcome& o) {
  const auto start = Clock::now();
  const GradientTable table = default_multishell_table();
  const GradientTable single = table.subset(testutil::b0_and_shell(table, 1000));
  const ResponseSet responses = responses_from_tissue(tissue_params_at_age(40), table.shells(), 8);
  const Ss3tCsd ss3t(single, responses, {8});
  PhantomSpec spec;
  spec.dims = Dims{5, 5, 4};
  spec.snr = 20;
  spec.seed = 505;
  const SignalVolume v = generate_phantom(spec, single);
  int converged = 0, monotone = 0;
  int max_outer = 0;
  for (std::size_t i = 0; i < spec.dims.voxels(); ++i) {
    std::vector<double> trace;
    try {
      const CsdResult r = ss3t.fit(v.volume.voxel(i));
      trace = r.diagnostics.objective_trace;
      max_outer = std::max(max_outer, r.diagnostics.outer_iterations);
      if (r.diagnostics.outer_iterations <= 20) ++converged;
    } catch (const NonConvergedError& e) {
      trace = e.trace();
    }
    bool ok = trace.size() >= 2;
    for (std::size_t k = 1; k < trace.size(); ++k) ok = ok && trace[k] <= trace[k - 1] * (1 + 1e-12) + 1e-15;
    monotone += ok ? 1 : 0;
  }
  const int n = static_cast<int>(spec.dims.voxels());
  o.check(monotone == n, "objective non-increasing on every voxel");
  o.check(converged >= 95, "converged within 20 outer iterations on >= 95%");
  o.detail << n << " voxels at SNR 20: monotone " << monotone << ", converged " << converged
           << ", max outer iterations " << max_outer << ", time " << num(seconds_since(start)) << " s";
}

// 6: regressor gradients and a realizable target.
void regressor_checks(Outcome& o) {
  const auto start = Clock::now();
  auto rng = make_rng(606, 1);
  auto randm = [&](Eigen::Index r, Eigen::Index c) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng);
    return m;
  };
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    ModelSpec spec;
    spec.kind = t % 4 == 0 ? ModelSpec::Kind::linear : ModelSpec::Kind::mlp;
    spec.hidden = {12, 8};
    spec.dropout = 0.0;
    spec.input_size = 15;
    spec.output_size = 45;
    spec.seed = static_cast<std::uint64_t>(t);
    Model m(spec);
    m.set_parameters(m.parameters() + 0.1 * randm(static_cast<Eigen::Index>(m.n_parameters()), 1));
    const Eigen::MatrixXd x = randm(15, 6), y = randm(45, 6);
    Eigen::VectorXd g;
    m.loss_and_gradient(x, y, g);
    Model probe = m;
    const Eigen::VectorXd p0 = m.parameters();
    Eigen::VectorXd fd(p0.size());
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < p0.size(); ++i) {
      Eigen::VectorXd p = p0;
      p(i) += h;
      probe.set_parameters(p);
      const double up = l2_loss(probe.forward(x), y);
      p(i) -= 2 * h;
      probe.set_parameters(p);
      fd(i) = (up - l2_loss(probe.forward(x), y)) / (2 * h);
    }
    worst = std::max(worst, (g - fd).norm() / fd.norm());
  }

  const Eigen::MatrixXd w = 0.3 * randm(45, 15);
  const Eigen::VectorXd bias = 0.1 * randm(45, 1);
  auto dataset = [&](std::uint64_t seed) {
    auto r = make_rng(seed, 7);
    const Dims dims{6, 5, 4};
    RegressionDataset ds;
    ds.input = Volume(dims, 15);
    for (Eigen::Index i = 0; i < ds.input.data.size(); ++i) ds.input.data.data()[i] = standard_normal(r);
    ds.target = Volume(dims, 45);
    ds.target.data = (w * ds.input.data).colwise() + bias;
    ds.mask = Mask(dims.voxels(), 1);
    return ds;
  };
  ModelSpec spec;
  spec.kind = ModelSpec::Kind::linear;
  spec.input_size = 15;
  TrainConfig cfg;
  cfg.adam.lr = 1e-2;
  cfg.patches_per_subject = 4;
  cfg.patch_size = 8;
  cfg.max_epochs = 1500;
  cfg.patience = 100;
  const TrainResult res = train({dataset(1), dataset(2)}, {dataset(3)}, spec, cfg);
  const double val = dataset_loss(res.model, {dataset(3)});
  const double t = seconds_since(start);
  o.check(worst < 1e-4, "gradient relative error < 1e-4");
  o.check(val < 1e-6, "validation loss < 1e-6");
  o.check(t < 60.0, "runtime < 1 min");
  o.detail << "worst gradient relative error " << num(worst) << " over 100 points, realizable validation loss "
           << num(val) << " after " << res.history.val_loss.size() << " epochs, time " << num(t) << " s";
}

std::optional<double> ar(const nlohmann::ordered_json& metrics, int k) {
  const auto& v = metrics["agreement_rate"][static_cast<std::size_t>(k - 1)];
  if (v.is_null()) return std::nullopt;
  return v.get<double>();
}

constexpr int kSeeds = 5;

ExperimentConfig seeded(ExperimentKind kind, CsdMethod method, int seed) {
  ExperimentConfig c = default_experiment_config(kind);
  c.method = method;
  c.seed = static_cast<std::uint64_t>(seed);
  c.cohort.seed = static_cast<std::uint64_t>(seed);
  return c;
}

// 7: ablation trends averaged over seeds.
void ablation_trend(Outcome& o) {
  const auto start = Clock::now();
  const std::vector<int> n_sig = default_experiment_config(ExperimentKind::ablation).n_sig;
  std::map<CsdMethod, std::vector<Eigen::Vector3d>> mean;
  bool missing = false;
  for (CsdMethod method : {CsdMethod::ss3t, CsdMethod::msmt}) {
    auto& m = mean[method];
    m.assign(n_sig.size(), Eigen::Vector3d::Zero());
    for (int seed = 1; seed <= kSeeds; ++seed) {
      const ExperimentReport r = run_ablation(seeded(ExperimentKind::ablation, method, seed));
      for (std::size_t c = 0; c < n_sig.size(); ++c)
        for (int k = 1; k <= 2; ++k) {
          const auto v = ar(r.json["conditions"][c]["metrics"], k);
          missing = missing || !v;
          m[c](k - 1) += v.value_or(0.0) / kSeeds;
        }
    }
  }
  o.check(!missing, "all agreement rates defined");
  const auto& ss = mean[CsdMethod::ss3t];
  const auto& ms = mean[CsdMethod::msmt];
  o.detail << "SS3T-GT AR2 by n_sig:";
  for (std::size_t c = 0; c < n_sig.size(); ++c) {
    o.detail << " " << n_sig[c] << "=" << num(ss[c](1));
    if (c > 0) o.check(ss[c](1) >= ss[c - 1](1), "SS3T-GT AR2 non-decreasing at n_sig " + std::to_string(n_sig[c]));
  }
  o.detail << "; MSMT-GT AR1/AR2:";
  for (std::size_t c = 0; c < n_sig.size(); ++c) {
    o.detail << " " << n_sig[c] << "=" << num(ms[c](0)) << "/" << num(ms[c](1));
    o.check(ms[c](0) > ms[c](1), "MSMT-GT AR1 > AR2 at n_sig " + std::to_string(n_sig[c]));
  }
  const double t = seconds_since(start);
  o.check(t < 1800.0, "runtime < 30 min");
  o.detail << "; " << kSeeds << " seeds, time " << num(t) << " s";
}

// 8: cross-age agreement does not exceed same-age agreement.
void age_shift_direction(Outcome& o) {
  const auto start = Clock::now();
  for (CsdMethod method : {CsdMethod::ss3t, CsdMethod::msmt}) {
    double self = 0.0, cross = 0.0;
    bool missing = false;
    for (int seed = 1; seed <= kSeeds; ++seed) {
      const ExperimentReport r = run_age_shift(seeded(ExperimentKind::ageshift, method, seed));
      const auto& s = r.json["summary"]["AR2"];
      missing = missing || s["self"].is_null() || s["cross"].is_null();
      if (!s["self"].is_null()) self += s["self"].get<double>() / kSeeds;
      if (!s["cross"].is_null()) cross += s["cross"].get<double>() / kSeeds;
    }
    const std::string name = to_string(method);
    o.check(!missing, name + " agreement rates defined");
    o.check(cross <= self, name + "-GT cross-age AR2 <= self-age AR2");
    o.detail << name << "-GT AR2 self " << num(self) << " cross " << num(cross) << "; ";
  }
  const double t = seconds_since(start);
  o.check(t < 1800.0, "runtime < 30 min");
  o.detail << kSeeds << " seeds, time " << num(t) << " s";
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// 9: serial reruns write byte-identical reports.
void determinism(Outcome& o) {
  const auto start = Clock::now();
  testutil::TempDir dir;
  std::vector<ExperimentConfig> configs;
  ExperimentConfig c = default_experiment_config(ExperimentKind::consistency);
  c.cohort.phantom.dims = Dims{6, 6, 4};
  configs.push_back(c);
  for (auto kind : {ExperimentKind::ablation, ExperimentKind::ageshift}) {
    ExperimentConfig e = default_experiment_config(kind);
    e.cohort.n_train = 4;
    e.cohort.n_val = 2;
    e.cohort.n_test = 2;
    e.n_sig = {6, 28};
    e.train.max_epochs = 10;
    configs.push_back(e);
  }
  for (const auto& cfg : configs) {
    const std::string name = to_string(cfg.kind);
    for (const char* run : {"a", "b"}) write_report(run_experiment(cfg), (dir.path() / (name + run)).string());
    for (const char* file : {"report.json", "metrics.csv", "plot.csv"}) {
      const auto a = dir.path() / (name + "a") / file, b = dir.path() / (name + "b") / file;
      if (!std::filesystem::exists(a) && !std::filesystem::exists(b)) continue;
      const bool same = std::filesystem::exists(a) && slurp(a) == slurp(b);
      o.check(same, name + " " + file + " identical");
      o.detail << name << "/" << file << (same ? " identical" : " DIFFERS") << "; ";
    }
  }
  o.detail << "time " << num(seconds_since(start)) << " s";
}

// 10: volume formats and malformed headers.
void format_round_trips(Outcome& o) {
  const auto start = Clock::now();
  auto rng = make_rng(1010, 1);
  int identical = 0, total = 0;
  for (auto dt : {DataType::float64, DataType::float32}) {
    for (int t = 0; t < 10; ++t) {
      Volume v(Dims{1 + static_cast<int>(uniform_index(rng, 6)), 1 + static_cast<int>(uniform_index(rng, 6)),
                    1 + static_cast<int>(uniform_index(rng, 4))},
               1 + static_cast<int>(uniform_index(rng, 45)));
      v.dtype = dt;
      v.voxel_size = {uniform(rng, 0.5, 3.0), uniform(rng, 0.5, 3.0), uniform(rng, 0.5, 3.0)};
      for (int k = 0; k < 3; ++k) {
        for (int j = 0; j < 3; ++j) v.affine(k, j) = standard_normal(rng);
        v.affine(k, 3) = 50.0 * standard_normal(rng);
      }
      if (dt == DataType::float32)
        for (int k = 0; k < 3; ++k) {
          v.voxel_size[static_cast<std::size_t>(k)] = static_cast<float>(v.voxel_size[static_cast<std::size_t>(k)]);
          for (int j = 0; j < 4; ++j) v.affine(k, j) = static_cast<float>(v.affine(k, j));
        }
      for (Eigen::Index i = 0; i < v.data.size(); ++i) {
        const double x = standard_normal(rng);
        v.data.data()[i] = dt == DataType::float32 ? static_cast<double>(static_cast<float>(x)) : x;
      }
      const std::string native = encode_native(v);
      const Volume back = decode_volume(native);
      total += 2;
      if (encode_native(back) == native && back.data == v.data && back.affine == v.affine &&
          back.voxel_size == v.voxel_size && back.dims == v.dims && back.dtype == v.dtype)
        ++identical;
      const Volume nb = decode_volume(encode_nifti(v));
      // NIfTI stores pixdim and the sform in float32.
      bool ok = nb.dims == v.dims && nb.dtype == v.dtype && nb.data == v.data;
      for (int k = 0; k < 3; ++k) {
        ok = ok && static_cast<float>(nb.voxel_size[static_cast<std::size_t>(k)]) ==
                       static_cast<float>(v.voxel_size[static_cast<std::size_t>(k)]);
        for (int j = 0; j < 4; ++j) ok = ok && static_cast<float>(nb.affine(k, j)) == static_cast<float>(v.affine(k, j));
      }
      if (ok) ++identical;
    }
  }
  o.check(identical == total, "round trips preserve every field");

  const Volume seed_volume = [&] {
    Volume v(Dims{3, 2, 2}, 4);
    v.dtype = DataType::float32;
    return v;
  }();
  const std::string seeds[2] = {encode_native(seed_volume), encode_nifti(seed_volume)};
  int typed = 0, accepted = 0, untyped = 0;
  for (int t = 0; t < 1000; ++t) {
    std::string s = seeds[t % 2];
    const std::size_t header = t % 2 ? 352 : kNativeHeaderSize;
    const int flips = 1 + static_cast<int>(uniform_index(rng, 8));
    for (int f = 0; f < flips; ++f) s[uniform_index(rng, header)] = static_cast<char>(uniform_index(rng, 256));
    if (uniform_index(rng, 4) == 0) s.resize(uniform_index(rng, s.size()));
    try {
      decode_volume(s);
      ++accepted;
    } catch (const VolumeError&) {
      ++typed;
    } catch (...) {
      ++untyped;
    }
  }
  o.check(untyped == 0, "every rejection is a VolumeError");
  o.detail << identical << "/" << total << " round trips exact; 1000 fuzzed headers: " << typed << " typed errors, "
           << accepted << " still valid, " << untyped << " untyped; time " << num(seconds_since(start)) << " s";
}

const std::map<int, std::pair<const char*, std::function<void(Outcome&)>>> kCriteria = {
    {1, {"published confusion matrices give the published agreement rates", agreement_identity}},
    {2, {"QP solver matches exhaustive enumeration", qp_oracle_equivalence}},
    {3, {"noiseless deconvolution round trips", noiseless_round_trips}},
    {4, {"SH fit/eval identity and convolution", sh_machinery}},
    {5, {"SS3T objective monotone and converging", ss3t_behaviour}},
    {6, {"regressor gradient check and realizable fit", regressor_checks}},
    {7, {"ablation trend", ablation_trend}},
    {8, {"age-shift direction", age_shift_direction}},
    {9, {"deterministic reports", determinism}},
    {10, {"volume format round trips and fuzzing", format_round_trips}},
};

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> which;
  for (int i = 1; i < argc; ++i) which.push_back(std::atoi(argv[i]));
  if (which.empty())
    for (const auto& [n, c] : kCriteria) which.push_back(n);
  int failed = 0;
  for (int n : which) {
    const auto it = kCriteria.find(n);
    if (it == kCriteria.end()) {
      std::fprintf(stderr, "unknown criterion %d\n", n);
      return 2;
    }
    Outcome o;
    try {
      it->second.second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    std::printf("CRITERION %d %s: %s -- %s\n", n, o.pass ? "PASS" : "FAIL", it->second.first, o.detail.str().c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
