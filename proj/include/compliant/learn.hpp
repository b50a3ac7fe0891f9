#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "compliant/condense.hpp"
#include "compliant/mlp.hpp"
#include "compliant/robot.hpp"

namespace compliant {

/// One observation: reached cable pull-in, condensed compliance (upper
/// triangle) and free cable violation.
struct Sample {
  Eigen::VectorXd delta_a;
  Eigen::VectorXd W_tri;
  Eigen::VectorXd delta_a_free;
};

/// Condensed state of the robot at zero actuation.
struct Anchor {
  Eigen::VectorXd delta_a;
  Eigen::VectorXd W_tri;
  Eigen::VectorXd delta_a_free;
};

struct GridAxis {
  double lo = 0.0;
  double hi = 0.0;
  int samples = 1;

  double value(int k) const { return samples == 1 ? lo : lo + (hi - lo) * k / (samples - 1); }
};

struct SampleSet {
  int num_actuators = 0;
  int num_effector_rows = 0;
  std::vector<Sample> train;
  std::vector<Sample> test;
  Anchor anchor;
  std::vector<GridAxis> grid;
  std::uint64_t seed = 0;
  std::vector<Eigen::VectorXd> skipped;  // targets that failed to solve
  std::string robot;
  std::vector<int> hidden_hint;  // the robot's surrogate widths, if any

  int num_rows() const { return num_effector_rows + num_actuators; }
};

struct CollectOptions {
  std::vector<GridAxis> grid;  // one axis per cable
  double test_fraction = 0.25;
  std::uint64_t seed = 42;
  int jobs = 1;
  NewtonOptions newton;
};

/// Anchor solve plus condensed samples over the pull-in grid and a uniformly
/// random test set (test_fraction of the grid size) in the same box.
/// Targets are imposed on unilateral cables, so the recorded pull-in is the
/// one reached at equilibrium. Failed points are skipped with a warning.
/// Results do not depend on `jobs`.
SampleSet collect(const RobotModel& robot, const CollectOptions& opts);

/// Condensed state at the equilibrium reached for one pull-in target.
Sample sample_at(FemSystem& sys, const Eigen::VectorXd& target, const NewtonOptions& opts = {});

Sample sample_from_state(const CondensedState& state);

/// Dataset files: `path` (training rows), `<stem>.test.csv`, `<stem>.meta.json`.
void save_samples(const SampleSet& set, const std::filesystem::path& path);
SampleSet load_samples(const std::filesystem::path& path);
std::filesystem::path sidecar_path(const std::filesystem::path& path, const std::string& suffix);

// ---------------------------------------------------------------------------

struct Prediction {
  Eigen::MatrixXd W;  // symmetric, [effector rows; actuator rows]
  Eigen::VectorXd delta_a_free;
};

/// MLP surrogate of the condensed state as a function of cable pull-in.
struct SurrogateModel {
  Mlp<double> net;
  Standardizer input, output;
  Anchor anchor;
  int num_actuators = 0;
  int num_effector_rows = 0;
  Eigen::VectorXd train_lo, train_hi;  // pull-in range seen in training

  // Provenance of the training run.
  std::uint64_t seed = 0;
  std::string optimizer = "adam";
  double learning_rate = 1e-3;
  int batch_size = 64;
  int epochs = 0;
  int best_epoch = 0;
  double best_test_loss = 0.0;

  int num_rows() const { return num_effector_rows + num_actuators; }
  Eigen::VectorXd make_input(const Eigen::VectorXd& delta_a) const;
  Prediction predict(const Eigen::VectorXd& delta_a) const;
  /// False when some coordinate of delta_a leaves the training range.
  bool in_training_range(const Eigen::VectorXd& delta_a, double slack = 1e-9) const;
};

struct TrainOptions {
  /// Empty: the dataset's hidden_hint when it has layers - 1 entries, else
  /// default_hidden(.., layers).
  std::vector<int> hidden;
  int layers = 3;
  double learning_rate = 1e-3;
  int epochs = 10000;
  int batch_size = 64;
  std::uint64_t seed = 42;
};

struct LossPoint {
  int epoch = 0;
  double train = 0.0;
  double test = 0.0;
};

struct TrainResult {
  SurrogateModel model;
  std::vector<LossPoint> curve;  // epoch 0 is the initial network
};

/// Equal hidden widths for a `layers`-layer network whose weight count is
/// close to `target`.
std::vector<int> default_hidden(int inputs, int outputs, int layers = 3, int target = 400);

/// Input and target columns of a sample list, unstandardized.
Eigen::MatrixXd input_matrix(const std::vector<Sample>& samples, const Anchor& anchor);
Eigen::MatrixXd target_matrix(const std::vector<Sample>& samples);

/// Mini-batch Adam on the per-element mean squared error of standardized
/// targets; keeps the parameters of the epoch with the lowest test loss.
TrainResult train(const SampleSet& set, const TrainOptions& opts);

/// Standardized per-element mean squared error of the model on `samples`.
double evaluate_loss(const SurrogateModel& model, const std::vector<Sample>& samples);

std::string model_to_json_text(const SurrogateModel& model);
SurrogateModel model_from_json_text(const std::string& text);
void save_model(const SurrogateModel& model, const std::filesystem::path& path);
SurrogateModel load_model(const std::filesystem::path& path);
void save_loss_curve(const std::vector<LossPoint>& curve, const std::filesystem::path& path);

}  // namespace compliant
