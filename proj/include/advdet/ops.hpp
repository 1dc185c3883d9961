#pragma once

#include <span>
#include <utility>
#include <vector>

#include "advdet/tape.hpp"

// Primitive differentiable operations. Image tensors are laid out as
// (batch, channels, height, width); feature tensors as (batch, features).
namespace advdet::ops {

enum class Reduction { kSum, kMean };

// y = x W^T + b with W of shape (out, in). Inputs of rank > 2 are flattened
// past the batch axis.
NodeId dense(Tape& tape, NodeId x, NodeId weight, NodeId bias);

// Zero-padded ("same" for stride 1) square convolution. Weight shape is
// (out, in, k, k) with odd k; bias shape (out).
NodeId conv2d(Tape& tape, NodeId x, NodeId weight, NodeId bias, std::size_t stride = 1);

// 2x2 window, stride 2, floor on odd extents. Backward routes the gradient to
// the first maximal element in scan order.
NodeId max_pool2(Tape& tape, NodeId x);

// (N, C, H, W) -> (N, C)
NodeId global_avg_pool(Tape& tape, NodeId x);

NodeId relu(Tape& tape, NodeId x);
NodeId tanh(Tape& tape, NodeId x);
NodeId sigmoid(Tape& tape, NodeId x);
// Row-wise softmax over the last axis of a (N, K) tensor.
NodeId softmax(Tape& tape, NodeId x);
NodeId add(Tape& tape, NodeId a, NodeId b);
NodeId scale(Tape& tape, NodeId x, double factor);
// factor * x + shift
NodeId affine(Tape& tape, NodeId x, double factor, double shift);

// Per-channel (rank 4) or per-feature (rank 2) normalization using the
// statistics of the current batch.
NodeId batch_norm_train(Tape& tape, NodeId x, NodeId gamma, NodeId beta, double eps);
// Same, using fixed running statistics.
NodeId batch_norm_eval(Tape& tape, NodeId x, NodeId gamma, NodeId beta,
                       std::vector<double> running_mean, std::vector<double> running_var,
                       double eps);
// Batch mean and biased variance computed by a batch_norm_train node.
std::pair<std::vector<double>, std::vector<double>> batch_norm_stats(const Tape& tape,
                                                                     NodeId node);

// Scalar reductions.
NodeId sum(Tape& tape, NodeId x);
NodeId half_squared_norm(Tape& tape, NodeId x);
// Sum over the batch of column `column` of a (N, K) tensor.
NodeId column_sum(Tape& tape, NodeId x, std::size_t column);

// -sum_n log p[n, label_n] on probabilities, optionally divided by N.
NodeId cross_entropy(Tape& tape, NodeId probs, std::span<const int> labels,
                     Reduction reduction = Reduction::kMean);
// Numerically stable softmax followed by cross_entropy.
NodeId softmax_cross_entropy(Tape& tape, NodeId logits, std::span<const int> labels,
                             Reduction reduction = Reduction::kMean);
// Binary cross-entropy of sigmoid(logit) against labels in {0, 1}; logits
// have shape (N, 1).
NodeId sigmoid_binary_cross_entropy(Tape& tape, NodeId logits, std::span<const int> labels,
                                    Reduction reduction = Reduction::kMean);

}  // namespace advdet::ops
