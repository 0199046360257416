#pragma once

// Residual MLP regressing surface curvature from a no-load feature vector.
//
//   stem:   affine(D->H) -> ReLU -> LayerNorm -> dropout
//   block:  h + affine(H->H)(dropout(ReLU(LayerNorm(affine(H->H)(h)))))   x blocks
//   head:   affine(H->1)
//
// Inputs are standardized with training-split statistics stored in the
// model; the target is trained in units of kappa / target_scale.
// All parameters live in one contiguous vector so the optimizer and the
// finite-difference checks can address them uniformly.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "curvecal/featurize.hpp"
#include "curvecal/sensor_sim.hpp"

namespace curvecal {

struct Architecture {
  int input_dim = kFeatureDim;
  int hidden = 128;
  int blocks = 3;
  double dropout = 0.1;
  double layer_norm_eps = 1e-5;

  void validate() const;
  bool operator==(const Architecture&) const = default;
};

struct TrainConfig {
  int epochs = 500;
  int batch_size = 32;
  double lr = 1e-3;
  double lr_min = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 1e-4;
  double huber_delta = 1.0;
  double mixup_alpha = 0.2;
  double label_jitter_sigma = 1.0;  // m^-1
  double train_fraction = 0.6;
  double val_fraction = 0.2;
  double test_fraction = 0.2;
  double target_scale = 80.0;
  std::uint64_t seed = 0;
  Architecture arch;

  void validate() const;
};

struct RegressionMetrics {
  double rmse = 0.0;
  double mae = 0.0;
  std::optional<double> r2;  // empty when the labels have zero variance
  std::size_t n = 0;
};

enum class Mode { train, eval };

struct TensorInfo {
  std::string name;
  int rows = 0;
  int cols = 0;
  Eigen::Index offset = 0;

  Eigen::Index size() const { return static_cast<Eigen::Index>(rows) * cols; }
};

class CurvNetModel {
 public:
  CurvNetModel() = default;
  explicit CurvNetModel(const Architecture& arch);

  /// Fan-in scaled uniform weights and biases; unit LayerNorm gains.
  static CurvNetModel initialize(const Architecture& arch, std::uint64_t seed);

  const Architecture& architecture() const { return arch_; }
  Eigen::VectorXd& parameters() { return params_; }
  const Eigen::VectorXd& parameters() const { return params_; }
  const std::vector<TensorInfo>& tensors() const { return tensors_; }
  const TensorInfo& tensor_info(const std::string& name) const;

  Eigen::Map<Eigen::MatrixXd> tensor(const TensorInfo& t) {
    return {params_.data() + t.offset, t.rows, t.cols};
  }
  Eigen::Map<const Eigen::MatrixXd> tensor(const TensorInfo& t) const {
    return {params_.data() + t.offset, t.rows, t.cols};
  }
  Eigen::Map<Eigen::MatrixXd> tensor(const std::string& name) { return tensor(tensor_info(name)); }
  Eigen::Map<const Eigen::MatrixXd> tensor(const std::string& name) const {
    return tensor(tensor_info(name));
  }

  Eigen::VectorXd input_mean;
  Eigen::VectorXd input_scale;
  double target_scale = 80.0;
  NormalizationSpec feature_norm;
  nlohmann::json metadata = nlohmann::json::object();

 private:
  Architecture arch_;
  Eigen::VectorXd params_;
  std::vector<TensorInfo> tensors_;
};

/// Columns are samples; targets are curvature in m^-1.
struct Batch {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;

  Eigen::Index size() const { return x.cols(); }
};

/// Network output in m^-1 for each column of `x`. In train mode dropout
/// masks are drawn from `rng`.
Eigen::VectorXd forward_batch(const CurvNetModel& model, const Eigen::MatrixXd& x, Mode mode,
                              Rng* rng = nullptr);

double forward(const CurvNetModel& model, const FeatureArray& x, Mode mode, Rng& rng);
double predict(const CurvNetModel& model, const FeatureVector& features);

/// Mean Huber loss (normalized target units) and, when `grad` is given, its
/// gradient with respect to every parameter. Dropout masks come from a
/// generator seeded with `dropout_seed`, so repeated calls see the same masks.
double loss_and_gradient(const CurvNetModel& model, const Batch& batch, Mode mode,
                         double huber_delta, std::uint64_t dropout_seed,
                         Eigen::VectorXd* grad);

double huber(double residual, double delta);

Batch mixup(const Batch& a, const Batch& b, double lambda);
double sample_mixup_lambda(double alpha, Rng& rng);
double label_jitter(double y, double sigma, Rng& rng);

double cosine_lr(int epoch, int epochs, double lr_max, double lr_min);

struct AdamW {
  explicit AdamW(const TrainConfig& cfg, Eigen::Index n);
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr);

  double beta1, beta2, eps, weight_decay;
  Eigen::VectorXd m, v;
  long long t = 0;
};

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

/// Grouped split stratified by curvature level; rows sharing a group id stay
/// in the same split.
SplitIndices stratified_split(const FeatureDataset& dataset, const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  CurvNetModel model;
  RegressionMetrics train_metrics;
  RegressionMetrics val_metrics;
  RegressionMetrics test_metrics;
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  SplitIndices split;
};

/// Rejects datasets with labels above the curvature training limit.
void validate_training_dataset(const FeatureDataset& dataset);

TrainResult train(const FeatureDataset& dataset, const TrainConfig& config);

RegressionMetrics regression_metrics(std::span<const double> predicted,
                                     std::span<const double> truth);
RegressionMetrics evaluate(const CurvNetModel& model, const FeatureDataset& dataset);
RegressionMetrics evaluate(const CurvNetModel& model, const FeatureDataset& dataset,
                           std::span<const std::size_t> rows);

Batch make_batch(const FeatureDataset& dataset, std::span<const std::size_t> rows);

nlohmann::json model_to_json(const CurvNetModel& model);
CurvNetModel model_from_json(const nlohmann::json& j);
void save_model(const std::string& path, const CurvNetModel& model);
CurvNetModel load_model(const std::string& path);

void to_json(nlohmann::json& j, const Architecture& a);
void from_json(const nlohmann::json& j, Architecture& a);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const RegressionMetrics& m);
void to_json(nlohmann::json& j, const EpochRecord& e);

}  // namespace curvecal
