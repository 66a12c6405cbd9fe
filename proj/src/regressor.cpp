#include "fodkit/regressor.hpp"

#include "fodkit/errors.hpp"
#include "fodkit/random.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace fodkit {

using nlohmann::json;

namespace {

constexpr std::uint64_t kStreamInit = 0x696e6974;
constexpr std::uint64_t kStreamPatch = 0x7061;
constexpr std::uint64_t kStreamDropout = 0x6470;
constexpr char kMagic[8] = {'F', 'O', 'D', 'K', 'M', 'D', 'L', '1'};

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(v);
  return v;
}

Eigen::MatrixXd relu(const Eigen::MatrixXd& z) { return z.cwiseMax(0.0); }

// Inverted-dropout keep mask scaled by 1/(1-p).
Eigen::MatrixXd dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, std::mt19937_64& rng) {
  Eigen::MatrixXd m(rows, cols);
  const double keep = 1.0 / (1.0 - p);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = uniform01(rng) >= p ? keep : 0.0;
  return m;
}

}  // namespace

void RegressionDataset::validate() const {
  if (!(input.dims == target.dims)) throw std::invalid_argument("dataset: input and target dims differ");
  if (mask.size() != input.dims.voxels()) throw std::invalid_argument("dataset: mask size mismatch");
  if (target.channels() != 45) throw std::invalid_argument("dataset: target must hold 45 SH coefficients");
}

void ModelSpec::validate() const {
  if (input_size < 1 || output_size < 1) throw std::invalid_argument("model: layer sizes must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("model: dropout must be in [0, 1)");
  if (kind == Kind::mlp) {
    if (hidden.empty()) throw std::invalid_argument("model: mlp needs at least one hidden layer");
    for (int h : hidden)
      if (h < 1) throw std::invalid_argument("model: hidden widths must be positive");
  }
}

std::string to_string(ModelSpec::Kind kind) { return kind == ModelSpec::Kind::linear ? "linear" : "mlp"; }

ModelSpec::Kind parse_model_kind(const std::string& name) {
  if (name == "linear") return ModelSpec::Kind::linear;
  if (name == "mlp") return ModelSpec::Kind::mlp;
  throw std::invalid_argument("unknown model kind '" + name + "' (expected linear or mlp)");
}

Model::Model(const ModelSpec& spec) : spec_(spec) {
  spec_.validate();
  if (spec_.kind == ModelSpec::Kind::linear) spec_.hidden.clear();
  std::vector<int> widths{spec_.input_size};
  widths.insert(widths.end(), spec_.hidden.begin(), spec_.hidden.end());
  widths.push_back(spec_.output_size);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    auto rng = make_rng(spec_.seed, kStreamInit, l);
    const bool last = l + 2 == widths.size();
    const double scale = std::sqrt((last ? 1.0 : 2.0) / widths[l]);
    DenseLayer layer;
    layer.weight.resize(widths[l + 1], widths[l]);
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = scale * standard_normal(rng);
    layer.bias = Eigen::VectorXd::Zero(widths[l + 1]);
    layers_.push_back(std::move(layer));
  }
}

Eigen::MatrixXd Model::forward(const Eigen::MatrixXd& x) const {
  if (x.rows() != spec_.input_size)
    throw std::invalid_argument("model: expected " + std::to_string(spec_.input_size) + " inputs, got " +
                                std::to_string(x.rows()));
  Eigen::MatrixXd a = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::MatrixXd z = (layers_[l].weight * a).colwise() + layers_[l].bias;
    a = l + 1 < layers_.size() ? relu(z) : std::move(z);
  }
  return a;
}

double Model::loss_and_gradient(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, Eigen::VectorXd& grad,
                                std::optional<std::uint64_t> dropout_seed) const {
  if (x.rows() != spec_.input_size || y.rows() != spec_.output_size || x.cols() != y.cols())
    throw std::invalid_argument("model: batch shape mismatch");
  const std::size_t L = layers_.size();
  std::vector<Eigen::MatrixXd> acts{x};   // input of each layer
  std::vector<Eigen::MatrixXd> gates;     // d(activation)/d(pre-activation) incl. dropout
  std::optional<std::mt19937_64> rng;
  if (dropout_seed && spec_.dropout > 0.0) rng = std::mt19937_64(*dropout_seed);
  for (std::size_t l = 0; l < L; ++l) {
    Eigen::MatrixXd z = (layers_[l].weight * acts.back()).colwise() + layers_[l].bias;
    if (l + 1 == L) {
      acts.push_back(std::move(z));
      break;
    }
    Eigen::MatrixXd gate = (z.array() > 0.0).cast<double>();
    if (rng) gate.array() *= dropout_mask(z.rows(), z.cols(), spec_.dropout, *rng).array();
    acts.push_back(z.cwiseProduct(gate));
    gates.push_back(std::move(gate));
  }
  const Eigen::MatrixXd diff = acts.back() - y;
  const double denom = static_cast<double>(diff.size());
  const double loss = diff.squaredNorm() / denom;

  grad.resize(static_cast<Eigen::Index>(n_parameters()));
  std::vector<std::pair<Eigen::MatrixXd, Eigen::VectorXd>> per_layer(L);
  Eigen::MatrixXd delta = 2.0 * diff / denom;
  for (std::size_t l = L; l-- > 0;) {
    per_layer[l].first = delta * acts[l].transpose();
    per_layer[l].second = delta.rowwise().sum();
    if (l > 0) delta = (layers_[l].weight.transpose() * delta).cwiseProduct(gates[l - 1]);
  }
  Eigen::Index off = 0;
  for (const auto& [gw, gb] : per_layer) {
    grad.segment(off, gw.size()) = Eigen::Map<const Eigen::VectorXd>(gw.data(), gw.size());
    off += gw.size();
    grad.segment(off, gb.size()) = gb;
    off += gb.size();
  }
  return loss;
}

std::size_t Model::n_parameters() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

Eigen::VectorXd Model::parameters() const {
  Eigen::VectorXd p(static_cast<Eigen::Index>(n_parameters()));
  Eigen::Index off = 0;
  for (const auto& l : layers_) {
    p.segment(off, l.weight.size()) = Eigen::Map<const Eigen::VectorXd>(l.weight.data(), l.weight.size());
    off += l.weight.size();
    p.segment(off, l.bias.size()) = l.bias;
    off += l.bias.size();
  }
  return p;
}

void Model::set_parameters(const Eigen::VectorXd& p) {
  if (static_cast<std::size_t>(p.size()) != n_parameters())
    throw std::invalid_argument("model: parameter vector has wrong length");
  Eigen::Index off = 0;
  for (auto& l : layers_) {
    Eigen::Map<Eigen::VectorXd>(l.weight.data(), l.weight.size()) = p.segment(off, l.weight.size());
    off += l.weight.size();
    l.bias = p.segment(off, l.bias.size());
    off += l.bias.size();
  }
}

double l2_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw std::invalid_argument("l2_loss: shape mismatch");
  if (pred.size() == 0) return 0.0;
  return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

void adam_step(Eigen::VectorXd& params, AdamState& state, const Eigen::VectorXd& grad, const AdamConfig& cfg) {
  if (grad.size() != params.size()) throw std::invalid_argument("adam: gradient has wrong length");
  if (state.m.size() != params.size()) {
    state.m = Eigen::VectorXd::Zero(params.size());
    state.v = Eigen::VectorXd::Zero(params.size());
    state.step = 0;
  }
  ++state.step;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  params.array() -= cfg.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + cfg.eps);
}

// ---------------------------------------------------------------------------

namespace {

std::array<int, 3> patch_extent(const Dims& d, int size) {
  return {std::min(size, d.nx), std::min(size, d.ny), std::min(size, d.nz)};
}

// Voxels of the patch at `o` that are in the mask.
std::vector<std::size_t> patch_voxels(const Dims& d, const Mask& mask, const PatchOrigin& o,
                                      const std::array<int, 3>& ext) {
  std::vector<std::size_t> out;
  for (int z = o[2]; z < o[2] + ext[2]; ++z)
    for (int y = o[1]; y < o[1] + ext[1]; ++y)
      for (int x = o[0]; x < o[0] + ext[0]; ++x) {
        const std::size_t i = d.index(x, y, z);
        if (mask[i]) out.push_back(i);
      }
  return out;
}

void gather(const RegressionDataset& ds, const std::vector<std::size_t>& voxels, Eigen::MatrixXd& x,
            Eigen::MatrixXd& y) {
  x.resize(ds.input.channels(), static_cast<Eigen::Index>(voxels.size()));
  y.resize(ds.target.channels(), static_cast<Eigen::Index>(voxels.size()));
  for (std::size_t k = 0; k < voxels.size(); ++k) {
    x.col(static_cast<Eigen::Index>(k)) = ds.input.voxel(voxels[k]);
    y.col(static_cast<Eigen::Index>(k)) = ds.target.voxel(voxels[k]);
  }
}

}  // namespace

std::vector<PatchOrigin> sample_patches(const Dims& dims, const Mask& mask, int n, int size, std::uint64_t seed) {
  if (mask.size() != dims.voxels()) throw std::invalid_argument("sample_patches: mask size mismatch");
  if (size < 1 || n < 0) throw std::invalid_argument("sample_patches: invalid patch size or count");
  const auto ext = patch_extent(dims, size);

  // Summed-volume table of the mask, padded by one on each axis.
  const int px = dims.nx + 1, py = dims.ny + 1;
  std::vector<long> sat(static_cast<std::size_t>(px) * py * (dims.nz + 1), 0);
  auto at = [&](int x, int y, int z) -> long& {
    return sat[static_cast<std::size_t>(x) + static_cast<std::size_t>(px) * (y + static_cast<std::size_t>(py) * z)];
  };
  for (int z = 1; z <= dims.nz; ++z)
    for (int y = 1; y <= dims.ny; ++y)
      for (int x = 1; x <= dims.nx; ++x)
        at(x, y, z) = (mask[dims.index(x - 1, y - 1, z - 1)] ? 1 : 0) + at(x - 1, y, z) + at(x, y - 1, z) +
                      at(x, y, z - 1) - at(x - 1, y - 1, z) - at(x - 1, y, z - 1) - at(x, y - 1, z - 1) +
                      at(x - 1, y - 1, z - 1);
  auto box = [&](int x0, int y0, int z0, int x1, int y1, int z1) {
    return at(x1, y1, z1) - at(x0, y1, z1) - at(x1, y0, z1) - at(x1, y1, z0) + at(x0, y0, z1) + at(x0, y1, z0) +
           at(x1, y0, z0) - at(x0, y0, z0);
  };

  std::vector<PatchOrigin> candidates;
  for (int z = 0; z + ext[2] <= dims.nz; ++z)
    for (int y = 0; y + ext[1] <= dims.ny; ++y)
      for (int x = 0; x + ext[0] <= dims.nx; ++x)
        if (box(x, y, z, x + ext[0], y + ext[1], z + ext[2]) > 0) candidates.push_back({x, y, z});
  if (candidates.empty()) throw EmptyPopulationError("sample_patches: mask is empty");

  auto rng = make_rng(seed, kStreamPatch);
  std::vector<PatchOrigin> out(static_cast<std::size_t>(n));
  for (auto& o : out) o = candidates[uniform_index(rng, candidates.size())];
  return out;
}

double dataset_loss(const Model& model, const std::vector<RegressionDataset>& sets) {
  double sum = 0.0;
  double count = 0.0;
  for (const auto& ds : sets) {
    std::vector<std::size_t> voxels;
    for (std::size_t i = 0; i < ds.mask.size(); ++i)
      if (ds.mask[i]) voxels.push_back(i);
    if (voxels.empty()) continue;
    Eigen::MatrixXd x, y;
    gather(ds, voxels, x, y);
    sum += (model.forward(x) - y).squaredNorm();
    count += static_cast<double>(y.size());
  }
  if (count == 0.0) throw EmptyPopulationError("validation sets contain no masked voxel");
  return sum / count;
}

TrainResult train(const std::vector<RegressionDataset>& train_sets, const std::vector<RegressionDataset>& val_sets,
                  const ModelSpec& spec, const TrainConfig& cfg) {
  if (train_sets.empty() || val_sets.empty()) throw std::invalid_argument("train: need training and validation data");
  if (!(cfg.adam.lr > 0.0) || cfg.patience < 1 || cfg.max_epochs < 1 || cfg.patch_size < 1)
    throw std::invalid_argument("train: invalid training configuration");
  for (const auto* sets : {&train_sets, &val_sets})
    for (const auto& ds : *sets) {
      ds.validate();
      if (ds.input.channels() != spec.input_size || ds.target.channels() != spec.output_size)
        throw std::invalid_argument("train: dataset channels do not match the model");
    }

  TrainResult res{Model(spec), {}};
  Model& model = res.model;
  TrainHistory& hist = res.history;
  Eigen::VectorXd params = model.parameters();
  Eigen::VectorXd best = params;
  double best_val = std::numeric_limits<double>::infinity();
  AdamState adam;
  int since_best = 0;
  std::uint64_t step = 0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd x, y;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    double loss_sum = 0.0;
    int n_steps = 0;
    for (std::size_t s = 0; s < train_sets.size(); ++s) {
      const auto& ds = train_sets[s];
      const auto ext = patch_extent(ds.input.dims, cfg.patch_size);
      const auto origins = sample_patches(ds.input.dims, ds.mask, cfg.patches_per_subject, cfg.patch_size,
                                          derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch), s));
      for (const auto& o : origins) {
        gather(ds, patch_voxels(ds.input.dims, ds.mask, o, ext), x, y);
        const double loss = model.loss_and_gradient(x, y, grad, derive_seed(cfg.seed, kStreamDropout, step++));
        if (!std::isfinite(loss) || !grad.allFinite()) {
          hist.train_loss.push_back(loss);
          throw TrainingAbortedError("train: non-finite loss at epoch " + std::to_string(epoch), hist);
        }
        adam_step(params, adam, grad, cfg.adam);
        model.set_parameters(params);
        loss_sum += loss;
        ++n_steps;
      }
    }
    hist.train_loss.push_back(n_steps > 0 ? loss_sum / n_steps : 0.0);

    double val = dataset_loss(model, val_sets);
    if (cfg.validation_transform) val = cfg.validation_transform(epoch, val);
    hist.val_loss.push_back(val);
    if (!std::isfinite(val)) throw TrainingAbortedError("train: non-finite validation loss", hist);
    if (val < best_val) {
      best_val = val;
      best = params;
      hist.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      hist.stopped_early = true;
      break;
    }
  }
  model.set_parameters(best);
  return res;
}

Volume predict_volume(const Model& model, const Volume& input, const Mask& mask, int window) {
  if (mask.size() != input.dims.voxels()) throw std::invalid_argument("predict_volume: mask size mismatch");
  if (window < 1) throw std::invalid_argument("predict_volume: window must be positive");
  if (input.channels() != model.spec().input_size)
    throw std::invalid_argument("predict_volume: input channels do not match the model");
  const Dims d = input.dims;
  const auto ext = patch_extent(d, window);
  auto starts = [&](int dim, int w) {
    std::vector<int> s;
    for (int p = 0;; p += w) {
      if (p + w >= dim) {
        s.push_back(dim - w);
        break;
      }
      s.push_back(p);
    }
    return s;
  };

  Volume out(d, model.spec().output_size);
  out.voxel_size = input.voxel_size;
  out.affine = input.affine;
  std::vector<int> hits(d.voxels(), 0);
  Eigen::MatrixXd x;
  for (int z0 : starts(d.nz, ext[2]))
    for (int y0 : starts(d.ny, ext[1]))
      for (int x0 : starts(d.nx, ext[0])) {
        const auto voxels = patch_voxels(d, mask, {x0, y0, z0}, ext);
        if (voxels.empty()) continue;
        x.resize(input.channels(), static_cast<Eigen::Index>(voxels.size()));
        for (std::size_t k = 0; k < voxels.size(); ++k) x.col(static_cast<Eigen::Index>(k)) = input.voxel(voxels[k]);
        const Eigen::MatrixXd y = model.forward(x);
        // Running mean, so identical predictions from overlapping windows
        // average to exactly the same value.
        for (std::size_t k = 0; k < voxels.size(); ++k) {
          const std::size_t v = voxels[k];
          const int n = ++hits[v];
          out.voxel(v) += (y.col(static_cast<Eigen::Index>(k)) - out.voxel(v)) / n;
        }
      }
  return out;
}

// ---------------------------------------------------------------------------

void save_model(const Model& model, std::ostream& os, int epoch) {
  const ModelSpec& s = model.spec();
  json header = {{"kind", to_string(s.kind)},   {"hidden", s.hidden},          {"dropout", s.dropout},
                 {"seed", s.seed},              {"input_size", s.input_size},  {"output_size", s.output_size},
                 {"epoch", epoch},              {"n_parameters", model.n_parameters()},
                 {"payload", "float64-le"}};
  const std::string text = header.dump();
  os.write(kMagic, sizeof kMagic);
  const std::uint64_t len = to_le(text.size());
  os.write(reinterpret_cast<const char*>(&len), sizeof len);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  const Eigen::VectorXd p = model.parameters();
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(p(i)));
    os.write(reinterpret_cast<const char*>(&bits), sizeof bits);
  }
  if (!os) throw std::runtime_error("save_model: write failed");
}

void save_model(const Model& model, const std::string& path, int epoch) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_model: cannot open " + path);
  save_model(model, os, epoch);
}

Model load_model(std::istream& is) {
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw std::runtime_error("load_model: not a model checkpoint");
  std::uint64_t len = 0;
  if (!is.read(reinterpret_cast<char*>(&len), sizeof len)) throw std::runtime_error("load_model: truncated header");
  len = to_le(len);
  if (len > (1u << 20)) throw std::runtime_error("load_model: header too large");
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw std::runtime_error("load_model: truncated header");
  ModelSpec spec;
  std::size_t n = 0;
  try {
    const json h = json::parse(text);
    spec.kind = parse_model_kind(h.at("kind").get<std::string>());
    spec.hidden = h.at("hidden").get<std::vector<int>>();
    spec.dropout = h.at("dropout").get<double>();
    spec.seed = h.at("seed").get<std::uint64_t>();
    spec.input_size = h.at("input_size").get<int>();
    spec.output_size = h.at("output_size").get<int>();
    n = h.at("n_parameters").get<std::size_t>();
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("load_model: bad header: ") + e.what());
  }
  Model model(spec);
  if (model.n_parameters() != n) throw std::runtime_error("load_model: parameter count does not match the model in the header");
  Eigen::VectorXd p(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    std::uint64_t bits = 0;
    if (!is.read(reinterpret_cast<char*>(&bits), sizeof bits)) throw std::runtime_error("load_model: truncated payload");
    p(i) = std::bit_cast<double>(to_le(bits));
  }
  model.set_parameters(p);
  return model;
}

Model load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_model: cannot open " + path);
  return load_model(is);
}

}  // namespace fodkit
