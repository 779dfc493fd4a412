#include "rte/neural.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace rte {

MlpModel MlpModel::xavier(const std::vector<int>& sizes, Rng& rng) {
  if (sizes.size() < 2) throw std::invalid_argument("MlpModel: need at least two layer sizes");
  for (int n : sizes)
    if (n <= 0) throw std::invalid_argument("MlpModel: layer sizes must be positive");
  MlpModel m;
  m.layer_sizes = sizes;
  for (size_t l = 0; l + 1 < sizes.size(); ++l) {
    const int fan_in = sizes[l], fan_out = sizes[l + 1];
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    MatrixXd w(fan_out, fan_in);
    for (int r = 0; r < fan_out; ++r)
      for (int c = 0; c < fan_in; ++c) w(r, c) = rng.uniform(-bound, bound);
    m.weights.push_back(std::move(w));
    m.biases.push_back(VectorXd::Zero(fan_out));
  }
  return m;
}

long MlpModel::param_count() const {
  long n = 0;
  for (size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
  return n;
}

MatrixXd MlpModel::forward(const Eigen::Ref<const MatrixXd>& x) const {
  if (x.rows() != input_dim()) {
    std::ostringstream os;
    os << "MlpModel::forward: input dim " << x.rows() << " != expected " << input_dim();
    throw std::invalid_argument(os.str());
  }
  MatrixXd a = x;
  for (size_t l = 0; l < weights.size(); ++l) {
    a = (weights[l] * a).colwise() + biases[l];
    if (l + 1 < weights.size()) a = a.cwiseMax(0.0);
  }
  return a;
}

VectorXd MlpModel::forward1(const Eigen::Ref<const VectorXd>& x) const {
  return forward(x).col(0);
}

VectorXd MlpModel::flatten() const {
  VectorXd v(param_count());
  long pos = 0;
  for (size_t l = 0; l < weights.size(); ++l) {
    for (int r = 0; r < weights[l].rows(); ++r)
      for (int c = 0; c < weights[l].cols(); ++c) v[pos++] = weights[l](r, c);
    for (int r = 0; r < biases[l].size(); ++r) v[pos++] = biases[l][r];
  }
  return v;
}

void MlpModel::unflatten(const Eigen::Ref<const VectorXd>& v) {
  if (v.size() != param_count()) throw std::invalid_argument("unflatten: size mismatch");
  long pos = 0;
  for (size_t l = 0; l < weights.size(); ++l) {
    for (int r = 0; r < weights[l].rows(); ++r)
      for (int c = 0; c < weights[l].cols(); ++c) weights[l](r, c) = v[pos++];
    for (int r = 0; r < biases[l].size(); ++r) biases[l][r] = v[pos++];
  }
}

Gradients Gradients::zeros_like(const MlpModel& m) {
  Gradients g;
  for (size_t l = 0; l < m.weights.size(); ++l) {
    g.weights.push_back(MatrixXd::Zero(m.weights[l].rows(), m.weights[l].cols()));
    g.biases.push_back(VectorXd::Zero(m.biases[l].size()));
  }
  return g;
}

VectorXd Gradients::flatten() const {
  long n = 0;
  for (size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
  VectorXd v(n);
  long pos = 0;
  for (size_t l = 0; l < weights.size(); ++l) {
    for (int r = 0; r < weights[l].rows(); ++r)
      for (int c = 0; c < weights[l].cols(); ++c) v[pos++] = weights[l](r, c);
    for (int r = 0; r < biases[l].size(); ++r) v[pos++] = biases[l][r];
  }
  return v;
}

double loss_value(Loss loss, const Eigen::Ref<const MatrixXd>& output,
                  const Eigen::Ref<const MatrixXd>& targets) {
  if (output.rows() != targets.rows() || output.cols() != targets.cols())
    throw std::invalid_argument("loss_value: output/target shape mismatch");
  const double n = static_cast<double>(output.size());
  if (loss == Loss::Mse) {
    return (output - targets).squaredNorm() / n;
  }
  // Numerically stable binary cross-entropy on logits:
  //   l(z, y) = max(z, 0) - z*y + log(1 + exp(-|z|))
  double total = 0.0;
  for (int c = 0; c < output.cols(); ++c)
    for (int r = 0; r < output.rows(); ++r) {
      const double z = output(r, c), y = targets(r, c);
      total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
  return total / n;
}

Gradients backward(const MlpModel& model, const Eigen::Ref<const MatrixXd>& inputs,
                   const Eigen::Ref<const MatrixXd>& targets, Loss loss, double* loss_out) {
  if (inputs.cols() == 0) throw std::invalid_argument("backward: empty batch");
  if (inputs.rows() != model.input_dim())
    throw std::invalid_argument("backward: input dim mismatch");
  if (targets.rows() != model.output_dim() || targets.cols() != inputs.cols())
    throw std::invalid_argument("backward: target shape mismatch");

  const size_t nl = model.weights.size();
  // Forward pass keeping pre-activations' ReLU masks via the activations.
  std::vector<MatrixXd> acts(nl + 1);
  acts[0] = inputs;
  for (size_t l = 0; l < nl; ++l) {
    acts[l + 1] = (model.weights[l] * acts[l]).colwise() + model.biases[l];
    if (l + 1 < nl) acts[l + 1] = acts[l + 1].cwiseMax(0.0);
  }
  const MatrixXd& out = acts[nl];
  if (loss_out) *loss_out = loss_value(loss, out, targets);

  const double n = static_cast<double>(out.size());
  MatrixXd delta;
  if (loss == Loss::Mse) {
    delta = 2.0 * (out - targets) / n;
  } else {
    delta = (out.unaryExpr([](double z) { return sigmoid(z); }) - targets) / n;
  }

  Gradients g = Gradients::zeros_like(model);
  for (size_t l = nl; l-- > 0;) {
    g.weights[l] = delta * acts[l].transpose();
    g.biases[l] = delta.rowwise().sum();
    if (l > 0) {
      delta = model.weights[l].transpose() * delta;
      // ReLU derivative: activations are zero exactly where the unit was clamped.
      delta = (acts[l].array() > 0.0).cast<double>() * delta.array();
    }
  }
  return g;
}

OptimState OptimState::init(const MlpModel& model, const AdamConfig& cfg) {
  OptimState s;
  s.cfg = cfg;
  for (size_t l = 0; l < model.weights.size(); ++l) {
    s.m_w.push_back(MatrixXd::Zero(model.weights[l].rows(), model.weights[l].cols()));
    s.v_w.push_back(MatrixXd::Zero(model.weights[l].rows(), model.weights[l].cols()));
    s.m_b.push_back(VectorXd::Zero(model.biases[l].size()));
    s.v_b.push_back(VectorXd::Zero(model.biases[l].size()));
  }
  return s;
}

void adam_step(MlpModel& model, const Gradients& grads, OptimState& state) {
  if (grads.weights.size() != model.weights.size())
    throw std::invalid_argument("adam_step: gradient/model layer mismatch");
  for (size_t l = 0; l < model.weights.size(); ++l) {
    if (!grads.weights[l].allFinite() || !grads.biases[l].allFinite()) {
      std::ostringstream os;
      os << "adam_step: non-finite gradient in layer " << l << " (weights "
         << grads.weights[l].rows() << "x" << grads.weights[l].cols() << ")";
      throw std::runtime_error(os.str());
    }
  }
  state.step += 1;
  const AdamConfig& c = state.cfg;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (size_t l = 0; l < model.weights.size(); ++l) {
    state.m_w[l] = c.beta1 * state.m_w[l] + (1.0 - c.beta1) * grads.weights[l];
    state.v_w[l] = c.beta2 * state.v_w[l] +
                   (1.0 - c.beta2) * grads.weights[l].cwiseProduct(grads.weights[l]);
    state.m_b[l] = c.beta1 * state.m_b[l] + (1.0 - c.beta1) * grads.biases[l];
    state.v_b[l] =
        c.beta2 * state.v_b[l] + (1.0 - c.beta2) * grads.biases[l].cwiseProduct(grads.biases[l]);

    model.weights[l].array() -=
        c.lr * (state.m_w[l].array() / bc1) / ((state.v_w[l].array() / bc2).sqrt() + c.eps);
    model.biases[l].array() -=
        c.lr * (state.m_b[l].array() / bc1) / ((state.v_b[l].array() / bc2).sqrt() + c.eps);
    if (c.weight_decay > 0.0) {
      model.weights[l] -= c.lr * c.weight_decay * model.weights[l];
      // Decay applies to weights only; biases are left alone.
    }
  }
}

TrainResult train(MlpModel& model, const Eigen::Ref<const MatrixXd>& inputs,
                  const Eigen::Ref<const MatrixXd>& targets, const TrainConfig& cfg) {
  if (cfg.batch_size <= 0 || cfg.lr <= 0.0 || cfg.epochs < 0)
    throw std::invalid_argument("train: config values must be positive");
  if (inputs.cols() != targets.cols()) throw std::invalid_argument("train: example count mismatch");
  if (inputs.cols() == 0) throw std::invalid_argument("train: empty dataset");

  AdamConfig ac;
  ac.lr = cfg.lr;
  ac.weight_decay = cfg.weight_decay;
  OptimState state = OptimState::init(model, ac);
  Rng rng(cfg.seed);

  const long n = inputs.cols();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    long seen = 0;
    for (long start = 0; start < n; start += cfg.batch_size) {
      const long b = std::min<long>(cfg.batch_size, n - start);
      MatrixXd xb(inputs.rows(), b), yb(targets.rows(), b);
      for (long i = 0; i < b; ++i) {
        xb.col(i) = inputs.col(order[start + i]);
        yb.col(i) = targets.col(order[start + i]);
      }
      double batch_loss = 0.0;
      Gradients g = backward(model, xb, yb, cfg.loss, &batch_loss);
      if (!std::isfinite(batch_loss)) {
        std::ostringstream os;
        os << "train: diverged at epoch " << epoch << " (non-finite loss); trace size "
           << result.epoch_loss.size();
        throw std::runtime_error(os.str());
      }
      adam_step(model, g, state);
      epoch_loss += batch_loss * static_cast<double>(b);
      seen += b;
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(seen));
  }
  return result;
}

}  // namespace rte
