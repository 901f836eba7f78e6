#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "pnmcts/types.hpp"

namespace pnmcts {

struct NetConfig {
  int input_dim = 272;
  int hidden_layers = 10;
  int hidden_width = 512;
  int action_dim = 320;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double clip_epsilon = 0.1;  // gradient 2-norm clipped to 1 + clip_epsilon
  double entropy_beta = 0.01;
  int batch_size = 64;
  int accumulation_steps = 4;
};

struct LayerParams {
  MatX w;      // width x fan_in
  VecX b;      // width
  VecX gamma;  // normalization gain
  VecX beta;   // normalization bias
};

struct LayerStats {
  VecX running_mean;
  VecX running_var;
};

/// Trunk of fully connected layers, each followed by per-neuron batch
/// normalization and ELU, splitting into a policy head (masked softmax over
/// the action grid) and a tanh value head.
struct NetParams {
  NetConfig config;
  std::vector<LayerParams> layers;
  std::vector<LayerStats> stats;
  MatX policy_w;  // action_dim x width
  VecX policy_b;
  MatX value_w;  // 1 x width
  VecX value_b;  // 1
};

NetParams init_random(const NetConfig& cfg, std::uint64_t seed);

struct PolicyValue {
  VecX policy;   // zeros on masked actions, sums to 1 over legal ones
  double value;  // in (-1, 1)
};

/// Single-state inference with frozen (running) normalization statistics.
/// Returns nullopt when the mask has no legal action.
std::optional<PolicyValue> forward(const NetParams& net, const VecX& features, const MaskX& mask);

struct Batch {
  MatX features;       // input_dim x B
  std::vector<MaskX> masks;   // B masks of length action_dim
  MatX target_policy;  // action_dim x B, zero on masked actions
  VecX target_value;   // B
  int size() const { return static_cast<int>(target_value.size()); }
};

struct NetGradients {
  std::vector<LayerParams> layers;
  MatX policy_w;
  VecX policy_b;
  MatX value_w;
  VecX value_b;
  // batch statistics recorded for the running-average update at step time
  std::vector<VecX> batch_mean;
  std::vector<VecX> batch_var;
};

struct LossResult {
  double value = 0.0;
  NetGradients grads;
};

/// Batch objective: policy cross-entropy + value MSE - beta * policy entropy,
/// averaged over the batch, with analytic gradients for every parameter.
/// Normalization uses batch statistics (training mode); `net` is not mutated.
LossResult loss(const NetParams& net, const Batch& batch, const TrainConfig& cfg);

struct AdamState {
  std::vector<VecX> m;
  std::vector<VecX> v;
  long step = 0;
};

/// Averages the gradient batches, clips the global 2-norm to 1+epsilon,
/// applies one adaptive-moment update and folds the recorded batch statistics
/// into the running averages. Non-finite gradient batches are discarded with
/// a warning on stderr.
void accumulate_and_step(NetParams& net, AdamState& adam, std::span<const NetGradients> grads,
                         const TrainConfig& cfg);

double global_grad_norm(const NetGradients& g);

/// Rescales the gradient in place so its global 2-norm is at most max_norm;
/// returns the scale that was applied.
double clip_global_norm(NetGradients& g, double max_norm);

struct Checkpoint {
  NetParams params;
  std::optional<AdamState> adam;
  std::uint64_t iteration = 0;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pnmcts
