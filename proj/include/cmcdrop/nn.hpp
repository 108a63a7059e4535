#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cmcdrop/dropout.hpp"
#include "cmcdrop/matrix.hpp"
#include "cmcdrop/rng.hpp"

namespace cmcdrop {

enum class Activation { relu, sigmoid, softmax, identity };
enum class LossKind { bce, nll };

// Masks are drawn once per forward call (shared by the whole batch) or
// independently per batch row.
enum class MaskMode { per_batch, per_example };

struct LayerSpec {
  Index input_dim = 0;
  Index output_dim = 0;
  Activation activation = Activation::relu;
  // Applied to this layer's post-activation output.
  std::optional<DropoutAttachment> dropout;
};

struct Layer {
  Matrix weight;  // output_dim x input_dim
  Vector bias;    // output_dim
  LayerSpec spec;
};

struct NetworkParams {
  std::vector<Layer> layers;

  Index input_dim() const { return layers.front().spec.input_dim; }
  Index output_dim() const { return layers.back().spec.output_dim; }
};

struct ForwardTrace {
  Matrix input;
  std::vector<Matrix> pre_activations;   // u_l, batch x out
  std::vector<Matrix> post_activations;  // y_l = f(u_l), before dropout
  std::vector<Matrix> dropped_outputs;   // y_l after dropout; == y_l when identity
  // Mask actually applied to layer l's output: one row (per_batch),
  // batch rows (per_example), or absent (identity).
  std::vector<std::optional<Matrix>> masks;

  const Matrix& output() const { return dropped_outputs.back(); }
};

struct GradientSet {
  std::vector<Matrix> weight_grads;
  std::vector<Vector> bias_grads;
};

struct OptimizerState {
  double learning_rate = 0.0;
  double momentum = 0.0;
  std::vector<Matrix> weight_velocity;
  std::vector<Vector> bias_velocity;
};

// Uniform init on [-sqrt(6/fan_in), +sqrt(6/fan_in)], zero biases.
// Validates that consecutive layer dims chain and softmax is final-only.
NetworkParams init_network(const std::vector<LayerSpec>& specs, std::uint64_t seed);

ForwardTrace forward(const NetworkParams& params, const Matrix& batch, ForwardMode mode,
                     Rng& rng, MaskMode mask_mode = MaskMode::per_batch);

double loss_bce(const Vector& probs, const std::vector<int>& labels);
double loss_nll(const Matrix& probabilities, const std::vector<int>& labels);

// Exact gradients through the recorded masks. The final layer must be
// sigmoid (bce) or softmax (nll).
GradientSet backward(const ForwardTrace& trace, const NetworkParams& params,
                     const std::vector<int>& labels, LossKind loss_kind);

OptimizerState make_optimizer(const NetworkParams& params, double learning_rate,
                              double momentum);

// Classical momentum: v <- momentum*v + g; w <- w - lr*v.
void sgd_step(NetworkParams& params, const GradientSet& grads, OptimizerState& state);

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

}  // namespace cmcdrop
