#include "curvecal/curvnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "curvecal/csv.hpp"
#include "curvecal/errors.hpp"
#include "curvecal/forcecal.hpp"

namespace curvecal {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

namespace {

constexpr double kPi = 3.14159265358979323846;

struct LayerNormCache {
  MatrixXd xhat;
  RowVectorXd inv_std;
};

MatrixXd layer_norm(const MatrixXd& u, const Eigen::Ref<const VectorXd>& gain,
                    const Eigen::Ref<const VectorXd>& bias, double eps, LayerNormCache* cache) {
  const double h = static_cast<double>(u.rows());
  const RowVectorXd mu = u.colwise().sum() / h;
  MatrixXd centered = u.rowwise() - mu;
  const RowVectorXd var = centered.array().square().colwise().sum() / h;
  const RowVectorXd inv = (var.array() + eps).rsqrt();
  MatrixXd xhat = centered.array().rowwise() * inv.array();
  MatrixXd out = (xhat.array().colwise() * gain.array()).colwise() + bias.array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = inv;
  }
  return out;
}

// Returns d(loss)/d(input); accumulates gain/bias gradients.
MatrixXd layer_norm_backward(const MatrixXd& dy, const Eigen::Ref<const VectorXd>& gain,
                             const LayerNormCache& cache, Eigen::Ref<VectorXd> dgain,
                             Eigen::Ref<VectorXd> dbias) {
  const double h = static_cast<double>(dy.rows());
  dgain += (dy.array() * cache.xhat.array()).rowwise().sum().matrix();
  dbias += dy.rowwise().sum();
  const MatrixXd dxhat = dy.array().colwise() * gain.array();
  const RowVectorXd mean_dxhat = dxhat.colwise().sum() / h;
  const RowVectorXd mean_dxhat_xhat = (dxhat.array() * cache.xhat.array()).colwise().sum() / h;
  MatrixXd dx = dxhat.rowwise() - mean_dxhat;
  dx -= (cache.xhat.array().rowwise() * mean_dxhat_xhat.array()).matrix();
  return dx.array().rowwise() * cache.inv_std.array();
}

MatrixXd dropout_mask(Index rows, Index cols, double p, Rng& rng) {
  MatrixXd mask(rows, cols);
  const double keep_scale = 1.0 / (1.0 - p);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) mask(i, j) = u(rng) < p ? 0.0 : keep_scale;
  }
  return mask;
}

struct BlockCache {
  MatrixXd h_in;
  MatrixXd v;  // after LayerNorm, before ReLU
  LayerNormCache ln;
  MatrixXd mask;
  MatrixXd d;  // after ReLU and dropout
};

struct Cache {
  MatrixXd x;   // standardized inputs
  MatrixXd a0;  // stem pre-activation
  LayerNormCache ln0;
  MatrixXd mask0;
  std::vector<BlockCache> blocks;
  MatrixXd h;  // final hidden state
};

struct Names {
  static std::string block(int k, const char* leaf) {
    return "blocks." + std::to_string(k) + "." + leaf;
  }
};

MatrixXd standardize(const CurvNetModel& model, const MatrixXd& x) {
  const Index d = model.architecture().input_dim;
  if (x.rows() != d) throw UsageError("input has " + std::to_string(x.rows()) + " features, model expects " + std::to_string(d));
  if (!x.allFinite()) throw DomainError("non-finite model input");
  VectorXd mean = model.input_mean.size() == d ? model.input_mean : VectorXd::Zero(d);
  VectorXd scale = model.input_scale.size() == d ? model.input_scale : VectorXd::Ones(d);
  return (x.colwise() - mean).array().colwise() / scale.array();
}

// Output in normalized target units.
RowVectorXd run_forward(const CurvNetModel& model, const MatrixXd& x_raw, Mode mode, Rng* rng,
                        Cache* cache) {
  const Architecture& arch = model.architecture();
  const bool drop = mode == Mode::train && arch.dropout > 0.0;
  if (drop && rng == nullptr) throw UsageError("train-mode forward needs a dropout generator");
  const Index batch = x_raw.cols();

  MatrixXd x = standardize(model, x_raw);
  MatrixXd a0 = model.tensor("stem.weight") * x;
  a0.colwise() += VectorXd(model.tensor("stem.bias").col(0));
  LayerNormCache ln0;
  MatrixXd h = layer_norm(a0.cwiseMax(0.0), model.tensor("stem.ln.gain").col(0),
                          model.tensor("stem.ln.bias").col(0), arch.layer_norm_eps,
                          cache ? &ln0 : nullptr);
  MatrixXd mask0;
  if (drop) {
    mask0 = dropout_mask(h.rows(), batch, arch.dropout, *rng);
    h.array() *= mask0.array();
  }
  if (cache) {
    cache->x = std::move(x);
    cache->a0 = std::move(a0);
    cache->ln0 = std::move(ln0);
    cache->mask0 = std::move(mask0);
    cache->blocks.assign(arch.blocks, {});
  }

  for (int k = 0; k < arch.blocks; ++k) {
    MatrixXd u = model.tensor(Names::block(k, "fc1.weight")) * h;
    u.colwise() += VectorXd(model.tensor(Names::block(k, "fc1.bias")).col(0));
    LayerNormCache ln;
    MatrixXd v = layer_norm(u, model.tensor(Names::block(k, "ln.gain")).col(0),
                            model.tensor(Names::block(k, "ln.bias")).col(0), arch.layer_norm_eps,
                            cache ? &ln : nullptr);
    MatrixXd d = v.cwiseMax(0.0);
    MatrixXd mask;
    if (drop) {
      mask = dropout_mask(d.rows(), batch, arch.dropout, *rng);
      d.array() *= mask.array();
    }
    MatrixXd z = model.tensor(Names::block(k, "fc2.weight")) * d;
    z.colwise() += VectorXd(model.tensor(Names::block(k, "fc2.bias")).col(0));
    if (cache) {
      BlockCache& bc = cache->blocks[k];
      bc.h_in = h;
      bc.v = std::move(v);
      bc.ln = std::move(ln);
      bc.mask = std::move(mask);
      bc.d = std::move(d);
    }
    h += z;
  }

  RowVectorXd out = model.tensor("head.weight") * h;
  out.array() += model.tensor("head.bias")(0, 0);
  if (cache) cache->h = std::move(h);
  return out;
}

void backward(const CurvNetModel& model, const Cache& cache, const RowVectorXd& dout,
              VectorXd& grad_flat) {
  const Architecture& arch = model.architecture();
  grad_flat.setZero(model.parameters().size());
  auto g = [&](const std::string& name) {
    const TensorInfo& t = model.tensor_info(name);
    return Eigen::Map<MatrixXd>(grad_flat.data() + t.offset, t.rows, t.cols);
  };

  g("head.weight").noalias() += dout * cache.h.transpose();
  g("head.bias")(0, 0) += dout.sum();
  MatrixXd dh = model.tensor("head.weight").transpose() * dout;

  for (int k = arch.blocks - 1; k >= 0; --k) {
    const BlockCache& bc = cache.blocks[k];
    g(Names::block(k, "fc2.weight")).noalias() += dh * bc.d.transpose();
    g(Names::block(k, "fc2.bias")).col(0) += dh.rowwise().sum();
    MatrixXd dd = model.tensor(Names::block(k, "fc2.weight")).transpose() * dh;
    if (bc.mask.size() > 0) dd.array() *= bc.mask.array();
    dd.array() *= (bc.v.array() > 0.0).cast<double>();
    auto dgain = g(Names::block(k, "ln.gain"));
    auto dbias = g(Names::block(k, "ln.bias"));
    const MatrixXd du = layer_norm_backward(dd, model.tensor(Names::block(k, "ln.gain")).col(0),
                                            bc.ln, dgain.col(0), dbias.col(0));
    g(Names::block(k, "fc1.weight")).noalias() += du * bc.h_in.transpose();
    g(Names::block(k, "fc1.bias")).col(0) += du.rowwise().sum();
    dh.noalias() += model.tensor(Names::block(k, "fc1.weight")).transpose() * du;
  }

  if (cache.mask0.size() > 0) dh.array() *= cache.mask0.array();
  auto dgain0 = g("stem.ln.gain");
  auto dbias0 = g("stem.ln.bias");
  MatrixXd da0 = layer_norm_backward(dh, model.tensor("stem.ln.gain").col(0), cache.ln0,
                                     dgain0.col(0), dbias0.col(0));
  da0.array() *= (cache.a0.array() > 0.0).cast<double>();
  g("stem.weight").noalias() += da0 * cache.x.transpose();
  g("stem.bias").col(0) += da0.rowwise().sum();
}

}  // namespace

// ---- configuration -------------------------------------------------------

void Architecture::validate() const {
  if (input_dim < 1 || hidden < 1 || blocks < 0) throw ConfigError("invalid architecture dimensions");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  if (!(layer_norm_eps > 0.0)) throw ConfigError("layer_norm_eps must be > 0");
}

void TrainConfig::validate() const {
  arch.validate();
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0.0) || !(lr_min >= 0.0) || lr_min > lr) throw ConfigError("need 0 <= lr_min <= lr, lr > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(huber_delta > 0.0)) throw ConfigError("huber_delta must be > 0");
  if (!(mixup_alpha >= 0.0)) throw ConfigError("mixup_alpha must be >= 0");
  if (!(label_jitter_sigma >= 0.0)) throw ConfigError("label_jitter_sigma must be >= 0");
  if (!(target_scale > 0.0)) throw ConfigError("target_scale must be > 0");
  const double total = train_fraction + val_fraction + test_fraction;
  if (std::abs(total - 1.0) > 1e-9 || train_fraction <= 0.0 || val_fraction <= 0.0 ||
      test_fraction <= 0.0) {
    throw ConfigError("split fractions must be positive and sum to 1");
  }
}

// ---- model ---------------------------------------------------------------

CurvNetModel::CurvNetModel(const Architecture& arch) : arch_(arch) {
  arch.validate();
  Index offset = 0;
  auto add = [&](std::string name, int rows, int cols) {
    tensors_.push_back({std::move(name), rows, cols, offset});
    offset += static_cast<Index>(rows) * cols;
  };
  const int d = arch.input_dim;
  const int h = arch.hidden;
  add("stem.weight", h, d);
  add("stem.bias", h, 1);
  add("stem.ln.gain", h, 1);
  add("stem.ln.bias", h, 1);
  for (int k = 0; k < arch.blocks; ++k) {
    add(Names::block(k, "fc1.weight"), h, h);
    add(Names::block(k, "fc1.bias"), h, 1);
    add(Names::block(k, "ln.gain"), h, 1);
    add(Names::block(k, "ln.bias"), h, 1);
    add(Names::block(k, "fc2.weight"), h, h);
    add(Names::block(k, "fc2.bias"), h, 1);
  }
  add("head.weight", 1, h);
  add("head.bias", 1, 1);
  params_ = VectorXd::Zero(offset);
  input_mean = VectorXd::Zero(d);
  input_scale = VectorXd::Ones(d);
}

CurvNetModel CurvNetModel::initialize(const Architecture& arch, std::uint64_t seed) {
  CurvNetModel model(arch);
  Rng rng(seed);
  auto fill = [&](const std::string& name, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    auto t = model.tensor(name);
    for (Index j = 0; j < t.cols(); ++j) {
      for (Index i = 0; i < t.rows(); ++i) t(i, j) = u(rng);
    }
  };
  fill("stem.weight", arch.input_dim);
  fill("stem.bias", arch.input_dim);
  model.tensor("stem.ln.gain").setOnes();
  for (int k = 0; k < arch.blocks; ++k) {
    fill(Names::block(k, "fc1.weight"), arch.hidden);
    fill(Names::block(k, "fc1.bias"), arch.hidden);
    model.tensor(Names::block(k, "ln.gain")).setOnes();
    fill(Names::block(k, "fc2.weight"), arch.hidden);
    fill(Names::block(k, "fc2.bias"), arch.hidden);
  }
  fill("head.weight", arch.hidden);
  fill("head.bias", arch.hidden);
  return model;
}

const TensorInfo& CurvNetModel::tensor_info(const std::string& name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return t;
  }
  throw UsageError("no parameter tensor named " + name);
}

// ---- forward / loss ------------------------------------------------------

VectorXd forward_batch(const CurvNetModel& model, const MatrixXd& x, Mode mode, Rng* rng) {
  return run_forward(model, x, mode, rng, nullptr).transpose() * model.target_scale;
}

double forward(const CurvNetModel& model, const FeatureArray& x, Mode mode, Rng& rng) {
  MatrixXd col = Eigen::Map<const VectorXd>(x.data(), kFeatureDim);
  return forward_batch(model, col, mode, &rng)(0);
}

double predict(const CurvNetModel& model, const FeatureVector& features) {
  const FeatureArray x = features.as_array();
  MatrixXd col = Eigen::Map<const VectorXd>(x.data(), kFeatureDim);
  return forward_batch(model, col, Mode::eval)(0);
}

double huber(double residual, double delta) {
  const double a = std::abs(residual);
  return a <= delta ? 0.5 * residual * residual : delta * (a - 0.5 * delta);
}

double loss_and_gradient(const CurvNetModel& model, const Batch& batch, Mode mode,
                         double huber_delta, std::uint64_t dropout_seed, VectorXd* grad) {
  if (batch.size() == 0) throw UsageError("empty batch");
  Rng rng(dropout_seed);
  Cache cache;
  const RowVectorXd out = run_forward(model, batch.x, mode, &rng, grad ? &cache : nullptr);
  const double n = static_cast<double>(batch.size());
  RowVectorXd dout(out.size());
  double loss = 0.0;
  for (Index i = 0; i < out.size(); ++i) {
    const double r = out(i) - batch.y(i) / model.target_scale;
    loss += huber(r, huber_delta);
    dout(i) = std::clamp(r, -huber_delta, huber_delta) / n;
  }
  if (grad) backward(model, cache, dout, *grad);
  return loss / n;
}

// ---- augmentation --------------------------------------------------------

Batch mixup(const Batch& a, const Batch& b, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw DomainError("mixup lambda must be in [0, 1]");
  if (a.x.rows() != b.x.rows() || a.x.cols() != b.x.cols() || a.y.size() != b.y.size()) {
    throw UsageError("mixup batches must have equal shapes");
  }
  return {lambda * a.x + (1.0 - lambda) * b.x, lambda * a.y + (1.0 - lambda) * b.y};
}

double sample_mixup_lambda(double alpha, Rng& rng) {
  if (alpha <= 0.0) return 1.0;
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double x = gamma(rng);
  const double y = gamma(rng);
  return x + y > 0.0 ? x / (x + y) : 0.5;
}

double label_jitter(double y, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) throw DomainError("label jitter sigma must be >= 0");
  if (sigma == 0.0) return y;
  return y + std::normal_distribution<double>(0.0, sigma)(rng);
}

double cosine_lr(int epoch, int epochs, double lr_max, double lr_min) {
  if (epochs <= 1) return lr_max;
  const double progress = static_cast<double>(epoch) / static_cast<double>(epochs - 1);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(kPi * progress));
}

AdamW::AdamW(const TrainConfig& cfg, Index n)
    : beta1(cfg.beta1),
      beta2(cfg.beta2),
      eps(cfg.adam_eps),
      weight_decay(cfg.weight_decay),
      m(VectorXd::Zero(n)),
      v(VectorXd::Zero(n)) {}

void AdamW::step(VectorXd& params, const VectorXd& grad, double lr) {
  ++t;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  params *= (1.0 - lr * weight_decay);
  params.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

// ---- data handling -------------------------------------------------------

SplitIndices stratified_split(const FeatureDataset& dataset, const TrainConfig& cfg) {
  std::map<double, std::vector<long long>> groups_by_level;
  std::map<long long, std::vector<std::size_t>> rows_by_group;
  std::map<long long, double> level_of_group;
  for (std::size_t i = 0; i < dataset.rows.size(); ++i) {
    const auto& row = dataset.rows[i];
    auto [it, inserted] = level_of_group.emplace(row.group, row.kappa_true);
    if (!inserted && it->second != row.kappa_true) {
      throw UsageError("group " + std::to_string(row.group) + " mixes curvature labels");
    }
    if (inserted) groups_by_level[row.kappa_true].push_back(row.group);
    rows_by_group[row.group].push_back(i);
  }

  Rng rng(mix_seed(cfg.seed, 0x5EED));
  SplitIndices split;
  for (auto& [level, groups] : groups_by_level) {
    std::shuffle(groups.begin(), groups.end(), rng);
    const auto n = static_cast<long long>(groups.size());
    long long n_train = std::llround(cfg.train_fraction * n);
    long long n_val = std::llround(cfg.val_fraction * n);
    if (n >= 3) {
      n_train = std::clamp<long long>(n_train, 1, n - 2);
      n_val = std::clamp<long long>(n_val, 1, n - n_train - 1);
    } else {
      n_train = std::min<long long>(n_train, n);
      n_val = std::min<long long>(n_val, n - n_train);
    }
    for (long long g = 0; g < n; ++g) {
      auto& dst = g < n_train ? split.train : (g < n_train + n_val ? split.val : split.test);
      const auto& rows = rows_by_group[groups[g]];
      dst.insert(dst.end(), rows.begin(), rows.end());
    }
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

Batch make_batch(const FeatureDataset& dataset, std::span<const std::size_t> rows) {
  Batch b{MatrixXd(kFeatureDim, static_cast<Index>(rows.size())),
          VectorXd(static_cast<Index>(rows.size()))};
  for (std::size_t j = 0; j < rows.size(); ++j) {
    const auto& r = dataset.rows.at(rows[j]);
    for (int i = 0; i < kFeatureDim; ++i) b.x(i, static_cast<Index>(j)) = r.features[i];
    b.y(static_cast<Index>(j)) = r.kappa_true;
  }
  return b;
}

void validate_training_dataset(const FeatureDataset& dataset) {
  std::set<double> levels;
  for (const auto& row : dataset.rows) {
    if (!std::isfinite(row.kappa_true) || row.kappa_true < 0.0) {
      throw DataRejectedError("curvature labels must be finite and >= 0");
    }
    if (row.kappa_true > kMaxTrainingCurvature) {
      throw DataRejectedError(
          "curvature label " + format_double(row.kappa_true) +
          " m^-1 rejected: curvature training is restricted to 0-80 m^-1 because the sensor "
          "response above that range (the 100 m^-1 fixture) is unreliable");
    }
    for (double f : row.features) {
      if (!std::isfinite(f)) throw DataRejectedError("non-finite feature value");
    }
    levels.insert(row.kappa_true);
  }
  if (dataset.rows.size() < 50) {
    throw DataRejectedError("curvature training needs at least 50 samples, got " +
                            std::to_string(dataset.rows.size()));
  }
  if (levels.size() < 3) {
    throw DataRejectedError("curvature training needs at least 3 distinct curvatures, got " +
                            std::to_string(levels.size()));
  }
}

RegressionMetrics regression_metrics(std::span<const double> predicted,
                                     std::span<const double> truth) {
  if (predicted.size() != truth.size()) throw UsageError("metrics: size mismatch");
  if (truth.empty()) throw UsageError("metrics need a non-empty dataset");
  const double n = static_cast<double>(truth.size());
  double se = 0.0;
  double ae = 0.0;
  double mean = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double e = predicted[i] - truth[i];
    se += e * e;
    ae += std::abs(e);
    mean += truth[i];
  }
  mean /= n;
  double ss_tot = 0.0;
  for (double y : truth) ss_tot += (y - mean) * (y - mean);
  RegressionMetrics m;
  m.rmse = std::sqrt(se / n);
  m.mae = ae / n;
  if (ss_tot > 0.0) m.r2 = 1.0 - se / ss_tot;
  m.n = truth.size();
  return m;
}

RegressionMetrics evaluate(const CurvNetModel& model, const FeatureDataset& dataset,
                           std::span<const std::size_t> rows) {
  const Batch b = make_batch(dataset, rows);
  const VectorXd pred = forward_batch(model, b.x, Mode::eval);
  return regression_metrics({pred.data(), static_cast<std::size_t>(pred.size())},
                            {b.y.data(), static_cast<std::size_t>(b.y.size())});
}

RegressionMetrics evaluate(const CurvNetModel& model, const FeatureDataset& dataset) {
  std::vector<std::size_t> all(dataset.rows.size());
  std::iota(all.begin(), all.end(), 0);
  return evaluate(model, dataset, all);
}

// ---- training ------------------------------------------------------------

TrainResult train(const FeatureDataset& dataset, const TrainConfig& config) {
  config.validate();
  validate_training_dataset(dataset);
  if (config.arch.input_dim != kFeatureDim) throw ConfigError("architecture input_dim must be 24");

  TrainResult result;
  result.split = stratified_split(dataset, config);
  if (result.split.train.empty() || result.split.val.empty() || result.split.test.empty()) {
    throw DataRejectedError("dataset too small for a train/val/test split");
  }

  CurvNetModel model = CurvNetModel::initialize(config.arch, mix_seed(config.seed, 1));
  model.target_scale = config.target_scale;
  model.feature_norm = dataset.norm;

  const Batch train_all = make_batch(dataset, result.split.train);
  model.input_mean = train_all.x.rowwise().mean();
  const VectorXd var =
      (train_all.x.colwise() - model.input_mean).array().square().rowwise().mean();
  model.input_scale = var.cwiseSqrt();  // constant features pass through unscaled
  for (Index i = 0; i < model.input_scale.size(); ++i) {
    if (model.input_scale(i) <= 1e-12) model.input_scale(i) = 1.0;
  }
  const Batch val_all = make_batch(dataset, result.split.val);

  AdamW opt(config, model.parameters().size());
  Rng rng(mix_seed(config.seed, 2));
  std::vector<std::size_t> order(result.split.train.size());
  std::iota(order.begin(), order.end(), 0);

  VectorXd grad;
  VectorXd best_params = model.parameters();
  double best_val = std::numeric_limits<double>::infinity();

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, config.epochs, config.lr, config.lr_min);
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const Index bsz = static_cast<Index>(end - start);
      Batch batch{MatrixXd(kFeatureDim, bsz), VectorXd(bsz)};
      for (Index j = 0; j < bsz; ++j) {
        const std::size_t idx = order[start + static_cast<std::size_t>(j)];
        batch.x.col(j) = train_all.x.col(static_cast<Index>(idx));
        batch.y(j) = label_jitter(train_all.y(static_cast<Index>(idx)), config.label_jitter_sigma, rng);
      }
      if (config.mixup_alpha > 0.0 && bsz > 1) {
        std::vector<Index> perm(static_cast<std::size_t>(bsz));
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        Batch partner{MatrixXd(kFeatureDim, bsz), VectorXd(bsz)};
        for (Index j = 0; j < bsz; ++j) {
          partner.x.col(j) = batch.x.col(perm[static_cast<std::size_t>(j)]);
          partner.y(j) = batch.y(perm[static_cast<std::size_t>(j)]);
        }
        batch = mixup(batch, partner, sample_mixup_lambda(config.mixup_alpha, rng));
      }
      const double loss = loss_and_gradient(model, batch, Mode::train, config.huber_delta, rng(), &grad);
      opt.step(model.parameters(), grad, lr);
      epoch_loss += loss * static_cast<double>(bsz);
      seen += static_cast<std::size_t>(bsz);
    }
    const double val_loss = loss_and_gradient(model, val_all, Mode::eval, config.huber_delta, 0, nullptr);
    result.history.push_back({epoch, lr, epoch_loss / static_cast<double>(seen), val_loss});
    if (val_loss < best_val) {
      best_val = val_loss;
      best_params = model.parameters();
      result.best_epoch = epoch;
    }
  }

  model.parameters() = best_params;
  result.train_metrics = evaluate(model, dataset, result.split.train);
  result.val_metrics = evaluate(model, dataset, result.split.val);
  result.test_metrics = evaluate(model, dataset, result.split.test);
  model.metadata["train_config"] = config;
  model.metadata["best_epoch"] = result.best_epoch;
  model.metadata["metrics"] = {{"train", result.train_metrics},
                               {"val", result.val_metrics},
                               {"test", result.test_metrics}};
  result.model = std::move(model);
  return result;
}

// ---- persistence ---------------------------------------------------------

void to_json(nlohmann::json& j, const Architecture& a) {
  j = {{"input_dim", a.input_dim},
       {"hidden", a.hidden},
       {"blocks", a.blocks},
       {"dropout", a.dropout},
       {"layer_norm_eps", a.layer_norm_eps},
       {"activation", "relu"},
       {"normalization", "layer_norm"}};
}

void from_json(const nlohmann::json& j, Architecture& a) {
  Architecture d;
  a.input_dim = j.value("input_dim", d.input_dim);
  a.hidden = j.value("hidden", d.hidden);
  a.blocks = j.value("blocks", d.blocks);
  a.dropout = j.value("dropout", d.dropout);
  a.layer_norm_eps = j.value("layer_norm_eps", d.layer_norm_eps);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"optimizer",
        {{"name", "adamw"},
         {"lr", c.lr},
         {"betas", {c.beta1, c.beta2}},
         {"eps", c.adam_eps},
         {"weight_decay", c.weight_decay}}},
       {"schedule", {{"name", "cosine"}, {"lr_min", c.lr_min}}},
       {"loss", {{"name", "huber"}, {"delta", c.huber_delta}}},
       {"mixup_alpha", c.mixup_alpha},
       {"label_jitter_sigma", c.label_jitter_sigma},
       {"split", {{"train", c.train_fraction}, {"val", c.val_fraction}, {"test", c.test_fraction}}},
       {"target_scale", c.target_scale},
       {"seed", c.seed},
       {"architecture", c.arch}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c = d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  if (j.contains("optimizer")) {
    const auto& o = j["optimizer"];
    c.lr = o.value("lr", d.lr);
    if (o.contains("betas")) {
      c.beta1 = o["betas"].at(0).get<double>();
      c.beta2 = o["betas"].at(1).get<double>();
    }
    c.adam_eps = o.value("eps", d.adam_eps);
    c.weight_decay = o.value("weight_decay", d.weight_decay);
  }
  if (j.contains("schedule")) c.lr_min = j["schedule"].value("lr_min", d.lr_min);
  if (j.contains("loss")) c.huber_delta = j["loss"].value("delta", d.huber_delta);
  c.mixup_alpha = j.value("mixup_alpha", d.mixup_alpha);
  c.label_jitter_sigma = j.value("label_jitter_sigma", d.label_jitter_sigma);
  if (j.contains("split")) {
    c.train_fraction = j["split"].value("train", d.train_fraction);
    c.val_fraction = j["split"].value("val", d.val_fraction);
    c.test_fraction = j["split"].value("test", d.test_fraction);
  }
  c.target_scale = j.value("target_scale", d.target_scale);
  c.seed = j.value("seed", d.seed);
  c.arch = j.value("architecture", d.arch);
}

void to_json(nlohmann::json& j, const RegressionMetrics& m) {
  j = {{"rmse", m.rmse},
       {"mae", m.mae},
       {"r2", m.r2 ? nlohmann::json(*m.r2) : nlohmann::json(nullptr)},
       {"r2_defined", m.r2.has_value()},
       {"n", m.n}};
}

void to_json(nlohmann::json& j, const EpochRecord& e) {
  j = {{"epoch", e.epoch}, {"lr", e.lr}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}};
}

nlohmann::json model_to_json(const CurvNetModel& model) {
  nlohmann::json params = nlohmann::json::object();
  for (const auto& t : model.tensors()) {
    const auto m = model.tensor(t);
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(t.size()));
    for (Index i = 0; i < m.rows(); ++i) {
      for (Index k = 0; k < m.cols(); ++k) data.push_back(m(i, k));
    }
    params[t.name] = {{"shape", {t.rows, t.cols}}, {"data", data}};
  }
  auto vec = [](const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return {{"format", "curvecal.curvnet"},
          {"version", 1},
          {"architecture", model.architecture()},
          {"parameter_order", "row-major"},
          {"parameters", params},
          {"input_standardization", {{"mean", vec(model.input_mean)}, {"scale", vec(model.input_scale)}}},
          {"target_scale", model.target_scale},
          {"feature_norm", model.feature_norm},
          {"metadata", model.metadata}};
}

CurvNetModel model_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", "") != "curvecal.curvnet") throw FormatError("not a curvature model document");
    CurvNetModel model(j.at("architecture").get<Architecture>());
    const auto& params = j.at("parameters");
    for (const auto& t : model.tensors()) {
      const auto& entry = params.at(t.name);
      const auto shape = entry.at("shape").get<std::vector<int>>();
      if (shape.size() != 2 || shape[0] != t.rows || shape[1] != t.cols) {
        throw FormatError("parameter " + t.name + " has wrong shape");
      }
      const auto data = entry.at("data").get<std::vector<double>>();
      if (static_cast<Index>(data.size()) != t.size()) throw FormatError("parameter " + t.name + " has wrong size");
      auto m = model.tensor(t);
      std::size_t p = 0;
      for (Index i = 0; i < m.rows(); ++i) {
        for (Index k = 0; k < m.cols(); ++k) m(i, k) = data[p++];
      }
    }
    const auto mean = j.at("input_standardization").at("mean").get<std::vector<double>>();
    const auto scale = j.at("input_standardization").at("scale").get<std::vector<double>>();
    if (static_cast<int>(mean.size()) != model.architecture().input_dim ||
        mean.size() != scale.size()) {
      throw FormatError("input standardization has wrong size");
    }
    model.input_mean = Eigen::Map<const VectorXd>(mean.data(), static_cast<Index>(mean.size()));
    model.input_scale = Eigen::Map<const VectorXd>(scale.data(), static_cast<Index>(scale.size()));
    model.target_scale = j.at("target_scale").get<double>();
    model.feature_norm = j.at("feature_norm").get<NormalizationSpec>();
    model.metadata = j.value("metadata", nlohmann::json::object());
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("curvature model: ") + e.what());
  }
}

void save_model(const std::string& path, const CurvNetModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out << model_to_json(model).dump() << '\n';
}

CurvNetModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  return model_from_json(j);
}

}  // namespace curvecal
