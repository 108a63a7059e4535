#include "cmcdrop/nn.hpp"

#include <cmath>
#include <string>

#include "cmcdrop/errors.hpp"

namespace cmcdrop {

namespace {

constexpr double kLossEps = 1e-12;

void validate_specs(const std::vector<LayerSpec>& specs) {
  if (specs.empty()) throw ConfigError("network needs at least one layer");
  for (std::size_t l = 0; l < specs.size(); ++l) {
    const auto& s = specs[l];
    if (s.input_dim < 1 || s.output_dim < 1) {
      throw ConfigError("layer " + std::to_string(l) + " has non-positive dimensions");
    }
    if (l > 0 && specs[l - 1].output_dim != s.input_dim) {
      throw ConfigError("layer " + std::to_string(l) + " input dim " +
                        std::to_string(s.input_dim) + " does not chain with previous output " +
                        std::to_string(specs[l - 1].output_dim));
    }
    if (s.activation == Activation::softmax && l + 1 != specs.size()) {
      throw ConfigError("softmax is only valid on the final layer");
    }
    if (s.dropout) {
      if (l + 1 == specs.size()) {
        throw ConfigError("dropout on the final layer output would break the "
                          "probability semantics of the network head");
      }
      const auto& d = *s.dropout;
      if (!(d.p >= 0.0 && d.p < 1.0)) {
        throw ConfigError("layer " + std::to_string(l) + " dropout rate out of [0, 1)");
      }
      if (d.kind == DropoutKind::controlled) {
        if (!d.bank) {
          throw ConfigError("layer " + std::to_string(l) +
                            " controlled dropout has no mask bank");
        }
        if (d.bank->layer_size != static_cast<std::size_t>(s.output_dim)) {
          throw ConfigError("layer " + std::to_string(l) + " mask bank size " +
                            std::to_string(d.bank->layer_size) +
                            " does not match the layer output dim");
        }
        if (d.bank->dropout_rate != d.p) {
          throw ConfigError("layer " + std::to_string(l) +
                            " mask bank rate differs from the attachment rate");
        }
      }
    }
  }
}

Matrix activate(const Matrix& u, Activation act) {
  switch (act) {
    case Activation::identity:
      return u;
    case Activation::relu:
      return u.cwiseMax(0.0);
    case Activation::sigmoid: {
      Matrix y(u.rows(), u.cols());
      for (Index i = 0; i < u.rows(); ++i) {
        for (Index j = 0; j < u.cols(); ++j) {
          const double x = u(i, j);
          y(i, j) = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                             : std::exp(x) / (1.0 + std::exp(x));
        }
      }
      return y;
    }
    case Activation::softmax: {
      Matrix y(u.rows(), u.cols());
      for (Index i = 0; i < u.rows(); ++i) {
        const double m = u.row(i).maxCoeff();
        double sum = 0.0;
        for (Index j = 0; j < u.cols(); ++j) {
          y(i, j) = std::exp(u(i, j) - m);
          sum += y(i, j);
        }
        y.row(i) /= sum;
      }
      return y;
    }
  }
  throw ConfigError("unknown activation");
}

// df/du expressed through u and y = f(u); elementwise.
Matrix activation_grad(const Matrix& u, const Matrix& y, Activation act) {
  switch (act) {
    case Activation::identity:
      return Matrix::Ones(u.rows(), u.cols());
    case Activation::relu:
      return (u.array() > 0.0).cast<double>();
    case Activation::sigmoid:
      return (y.array() * (1.0 - y.array())).matrix();
    case Activation::softmax:
      throw ConfigError("softmax gradient is fused into the loss");
  }
  throw ConfigError("unknown activation");
}

// One mask row per draw: a single broadcast row (per_batch) or one row per
// batch example (per_example).
Matrix draw_mask_rows(const DropoutAttachment& att, Index rows, Index cols, Rng& rng) {
  Matrix mask(rows, cols);
  if (att.kind == DropoutKind::traditional) {
    const double keep_prob = 1.0 - att.p;
    const double scale = 1.0 / keep_prob;
    for (Index i = 0; i < rows; ++i) {
      for (Index j = 0; j < cols; ++j) {
        mask(i, j) = rng.bernoulli(keep_prob) ? scale : 0.0;
      }
    }
  } else {
    for (Index i = 0; i < rows; ++i) {
      const DropoutMask& m = sample_mask(*att.bank, rng);
      for (Index j = 0; j < cols; ++j) {
        mask(i, j) = m.entries[static_cast<std::size_t>(j)];
      }
    }
  }
  return mask;
}

Matrix apply_mask_rows(const Matrix& y, const Matrix& mask) {
  if (mask.rows() == 1) {
    return y.array().rowwise() * mask.row(0).array();
  }
  return y.cwiseProduct(mask);
}

void check_labels_binary(const std::vector<int>& labels) {
  for (int v : labels) {
    if (v != 0 && v != 1) throw ConfigError("binary labels must be 0 or 1");
  }
}

}  // namespace

NetworkParams init_network(const std::vector<LayerSpec>& specs, std::uint64_t seed) {
  validate_specs(specs);
  NetworkParams params;
  params.layers.reserve(specs.size());
  Rng rng(seed);
  for (const auto& spec : specs) {
    Layer layer;
    layer.spec = spec;
    const double bound = std::sqrt(6.0 / static_cast<double>(spec.input_dim));
    layer.weight.resize(spec.output_dim, spec.input_dim);
    for (Index i = 0; i < spec.output_dim; ++i) {
      for (Index j = 0; j < spec.input_dim; ++j) {
        layer.weight(i, j) = (2.0 * rng.uniform01() - 1.0) * bound;
      }
    }
    layer.bias = Vector::Zero(spec.output_dim);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

ForwardTrace forward(const NetworkParams& params, const Matrix& batch, ForwardMode mode,
                     Rng& rng, MaskMode mask_mode) {
  if (params.layers.empty()) throw ConfigError("forward on an empty network");
  if (batch.cols() != params.input_dim()) {
    throw ConfigError("batch feature dim " + std::to_string(batch.cols()) +
                      " does not match network input dim " +
                      std::to_string(params.input_dim()));
  }

  ForwardTrace trace;
  trace.input = batch;
  const std::size_t n_layers = params.layers.size();
  trace.pre_activations.reserve(n_layers);
  trace.post_activations.reserve(n_layers);
  trace.dropped_outputs.reserve(n_layers);
  trace.masks.reserve(n_layers);

  const Matrix* cur = &trace.input;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const Layer& layer = params.layers[l];
    Matrix u = (*cur) * layer.weight.transpose();
    u.rowwise() += layer.bias.transpose();
    if (!all_finite(u)) {
      throw NumericError("non-finite pre-activation at layer " + std::to_string(l));
    }
    Matrix y = activate(u, layer.spec.activation);
    if (!all_finite(y)) {
      throw NumericError("non-finite activation at layer " + std::to_string(l));
    }

    trace.pre_activations.push_back(std::move(u));
    trace.post_activations.push_back(std::move(y));
    const Matrix& post = trace.post_activations.back();

    if (layer.spec.dropout && is_stochastic(mode)) {
      const Index mask_rows = mask_mode == MaskMode::per_example ? batch.rows() : 1;
      Matrix mask = draw_mask_rows(*layer.spec.dropout, mask_rows, post.cols(), rng);
      trace.dropped_outputs.push_back(apply_mask_rows(post, mask));
      trace.masks.emplace_back(std::move(mask));
    } else {
      trace.dropped_outputs.push_back(post);
      trace.masks.emplace_back(std::nullopt);
    }
    cur = &trace.dropped_outputs.back();
  }
  return trace;
}

double loss_bce(const Vector& probs, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(probs.size()) != labels.size()) {
    throw ConfigError("bce: probability and label lengths differ");
  }
  if (probs.size() == 0) throw ConfigError("bce: empty batch");
  check_labels_binary(labels);
  double total = 0.0;
  for (Index i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], kLossEps, 1.0 - kLossEps);
    const double y = static_cast<double>(labels[static_cast<std::size_t>(i)]);
    total += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
  }
  return total / static_cast<double>(probs.size());
}

double loss_nll(const Matrix& probabilities, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(probabilities.rows()) != labels.size()) {
    throw ConfigError("nll: probability rows and label count differ");
  }
  if (probabilities.rows() == 0) throw ConfigError("nll: empty batch");
  double total = 0.0;
  for (Index i = 0; i < probabilities.rows(); ++i) {
    const double row_sum = probabilities.row(i).sum();
    if (std::abs(row_sum - 1.0) > 1e-9) {
      throw NumericError("nll: row " + std::to_string(i) + " sums to " +
                         std::to_string(row_sum) + ", not 1");
    }
    const int label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= probabilities.cols()) {
      throw ConfigError("nll: label " + std::to_string(label) + " outside class range");
    }
    total += -std::log(std::max(probabilities(i, label), kLossEps));
  }
  return total / static_cast<double>(probabilities.rows());
}

GradientSet backward(const ForwardTrace& trace, const NetworkParams& params,
                     const std::vector<int>& labels, LossKind loss_kind) {
  const std::size_t n_layers = params.layers.size();
  if (trace.pre_activations.size() != n_layers || trace.masks.size() != n_layers) {
    throw ConfigError("trace does not match the network layer count");
  }
  const Index batch = trace.input.rows();
  if (static_cast<std::size_t>(batch) != labels.size()) {
    throw ConfigError("label count does not match the traced batch");
  }
  for (std::size_t l = 0; l < n_layers; ++l) {
    if (trace.pre_activations[l].cols() != params.layers[l].spec.output_dim) {
      throw ConfigError("trace layer " + std::to_string(l) + " does not match params");
    }
  }

  const Layer& head = params.layers.back();
  const Matrix& output = trace.output();
  const double inv_batch = 1.0 / static_cast<double>(batch);

  // Loss gradient wrt the head pre-activation, fused with the head
  // activation (sigmoid+bce or softmax+nll).
  Matrix du(batch, head.spec.output_dim);
  if (loss_kind == LossKind::bce) {
    if (head.spec.activation != Activation::sigmoid || head.spec.output_dim != 1) {
      throw ConfigError("bce expects a single-unit sigmoid head");
    }
    check_labels_binary(labels);
    for (Index i = 0; i < batch; ++i) {
      du(i, 0) =
          (output(i, 0) - static_cast<double>(labels[static_cast<std::size_t>(i)])) * inv_batch;
    }
  } else {
    if (head.spec.activation != Activation::softmax) {
      throw ConfigError("nll expects a softmax head");
    }
    du = output * inv_batch;
    for (Index i = 0; i < batch; ++i) {
      const int label = labels[static_cast<std::size_t>(i)];
      if (label < 0 || label >= head.spec.output_dim) {
        throw ConfigError("label outside class range");
      }
      du(i, label) -= inv_batch;
    }
  }

  GradientSet grads;
  grads.weight_grads.resize(n_layers);
  grads.bias_grads.resize(n_layers);

  for (std::size_t l = n_layers; l-- > 0;) {
    const Layer& layer = params.layers[l];
    const Matrix& layer_input = l == 0 ? trace.input : trace.dropped_outputs[l - 1];
    grads.weight_grads[l].noalias() = du.transpose() * layer_input;
    grads.bias_grads[l] = du.colwise().sum().transpose();

    if (l == 0) break;
    Matrix d_dropped = du * layer.weight;  // grad wrt the previous dropped output
    const Matrix d_post = trace.masks[l - 1]
                              ? apply_mask_rows(d_dropped, *trace.masks[l - 1])
                              : std::move(d_dropped);
    du = d_post.cwiseProduct(activation_grad(trace.pre_activations[l - 1],
                                             trace.post_activations[l - 1],
                                             params.layers[l - 1].spec.activation));
  }
  return grads;
}

OptimizerState make_optimizer(const NetworkParams& params, double learning_rate,
                              double momentum) {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  OptimizerState state;
  state.learning_rate = learning_rate;
  state.momentum = momentum;
  for (const auto& layer : params.layers) {
    state.weight_velocity.push_back(Matrix::Zero(layer.weight.rows(), layer.weight.cols()));
    state.bias_velocity.push_back(Vector::Zero(layer.bias.size()));
  }
  return state;
}

void sgd_step(NetworkParams& params, const GradientSet& grads, OptimizerState& state) {
  const std::size_t n = params.layers.size();
  if (grads.weight_grads.size() != n || state.weight_velocity.size() != n) {
    throw ConfigError("optimizer state or gradients do not match the network");
  }
  for (std::size_t l = 0; l < n; ++l) {
    auto& layer = params.layers[l];
    if (grads.weight_grads[l].rows() != layer.weight.rows() ||
        grads.weight_grads[l].cols() != layer.weight.cols() ||
        grads.bias_grads[l].size() != layer.bias.size()) {
      throw ConfigError("gradient shape mismatch at layer " + std::to_string(l));
    }
    state.weight_velocity[l] = state.momentum * state.weight_velocity[l] + grads.weight_grads[l];
    state.bias_velocity[l] = state.momentum * state.bias_velocity[l] + grads.bias_grads[l];
    layer.weight -= state.learning_rate * state.weight_velocity[l];
    layer.bias -= state.learning_rate * state.bias_velocity[l];
  }
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::softmax: return "softmax";
    case Activation::identity: return "identity";
  }
  return "unknown";
}

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "softmax") return Activation::softmax;
  if (s == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + s + "'");
}

}  // namespace cmcdrop
