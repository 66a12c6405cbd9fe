#pragma once

#include "fodkit/volume.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fodkit {

/// Input SH volume (any even order), target FOD SH volume and the voxels that
/// count towards the loss.
struct RegressionDataset {
  Volume input;
  Volume target;
  Mask mask;

  void validate() const;
};

struct ModelSpec {
  enum class Kind { linear, mlp };
  Kind kind = Kind::mlp;
  std::vector<int> hidden{64};  // ignored for linear
  double dropout = 0.1;         // applied after each hidden ReLU, training only
  std::uint64_t seed = 0;
  int input_size = 15;
  int output_size = 45;

  void validate() const;
};

std::string to_string(ModelSpec::Kind kind);
ModelSpec::Kind parse_model_kind(const std::string& name);

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

/// Voxel-wise regressor from input SH to FOD SH. Inputs are one column per
/// voxel.
class Model {
 public:
  Model() = default;
  /// He-initialised hidden layers, zero biases, small output layer.
  explicit Model(const ModelSpec& spec);

  const ModelSpec& spec() const { return spec_; }
  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  /// Eval-mode forward pass (no dropout).
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;

  /// Mean squared error over all entries of the batch and its gradient with
  /// respect to parameters(). With a dropout seed the dropout masks are drawn
  /// from that seed, so repeated calls with the same seed see the same masks.
  double loss_and_gradient(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, Eigen::VectorXd& grad,
                           std::optional<std::uint64_t> dropout_seed = std::nullopt) const;

  std::size_t n_parameters() const;
  /// Layer by layer: weight (column-major), then bias.
  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& p);

 private:
  ModelSpec spec_;
  std::vector<DenseLayer> layers_;
};

/// Mean squared error over every entry.
double l2_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target);

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long step = 0;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of `params` in place.
void adam_step(Eigen::VectorXd& params, AdamState& state, const Eigen::VectorXd& grad, const AdamConfig& cfg);

using PatchOrigin = std::array<int, 3>;

/// Patch origins drawn uniformly among positions whose (clamped) patch touches
/// the mask. Edges shorter than `size` use the whole axis.
std::vector<PatchOrigin> sample_patches(const Dims& dims, const Mask& mask, int n, int size, std::uint64_t seed);

struct TrainConfig {
  AdamConfig adam;
  int patches_per_subject = 128;
  int patch_size = 16;
  int patience = 10;
  int max_epochs = 200;
  std::uint64_t seed = 0;
  /// Hook applied to each epoch's validation loss before early stopping
  /// looks at it (epoch index, raw loss). Unset in normal use.
  std::function<double(int, double)> validation_transform;
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  int best_epoch = -1;
  bool stopped_early = false;
};

class TrainingAbortedError : public std::runtime_error {
 public:
  TrainingAbortedError(const std::string& what, TrainHistory history)
      : std::runtime_error(what), history_(std::move(history)) {}
  const TrainHistory& history() const noexcept { return history_; }

 private:
  TrainHistory history_;
};

struct TrainResult {
  Model model;
  TrainHistory history;
};

/// Adam training, one gradient step per sampled patch. Restores the weights of
/// the best validation epoch. Throws TrainingAbortedError on a non-finite loss.
TrainResult train(const std::vector<RegressionDataset>& train_sets, const std::vector<RegressionDataset>& val_sets,
                  const ModelSpec& spec, const TrainConfig& cfg);

/// Pooled validation loss over the masked voxels of every dataset.
double dataset_loss(const Model& model, const std::vector<RegressionDataset>& sets);

/// Sliding-window inference: windows of `window` voxels tile the volume (the
/// last window along an axis is shifted back to fit), overlapping predictions
/// are averaged. Voxels outside the mask are zero.
Volume predict_volume(const Model& model, const Volume& input, const Mask& mask, int window = 16);

/// Checkpoint: "FODKMDL1", uint64 LE header length, JSON header, LE float64
/// parameters.
void save_model(const Model& model, std::ostream& os, int epoch = -1);
void save_model(const Model& model, const std::string& path, int epoch = -1);
Model load_model(std::istream& is);
Model load_model(const std::string& path);

}  // namespace fodkit
