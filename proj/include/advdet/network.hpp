#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advdet/tape.hpp"
#include "advdet/tensor.hpp"

namespace advdet {

enum class LayerKind {
  kIdentity,
  kDense,
  kConv,
  kMaxPool,
  kGlobalAvgPool,
  kRelu,
  kTanh,
  kSigmoid,
  kSoftmax,
  kBatchNorm,
  // conv-bn-relu-conv-bn plus shortcut (1x1 conv when the shape changes), then relu
  kResidual,
  // (x - center) / spread with fixed constants; no parameters
  kNormalize,
};

const char* layer_kind_name(LayerKind kind);
LayerKind layer_kind_from_name(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::kIdentity;
  std::size_t units = 0;   // dense outputs, conv / residual output channels
  std::size_t kernel = 3;  // conv only
  std::size_t stride = 1;  // conv / residual
  double center = 0.0;     // normalize only
  double spread = 1.0;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// Layer shorthands.
LayerSpec conv(std::size_t channels, std::size_t kernel = 3, std::size_t stride = 1);
LayerSpec dense(std::size_t units);
LayerSpec residual(std::size_t channels, std::size_t stride = 1);
LayerSpec layer(LayerKind kind);
LayerSpec normalize(double center, double spread);

/// Named detector attachment point AD(index), located `position` layers into
/// the network (position 0 is the raw input).
struct AttachPoint {
  int index = 0;
  std::size_t position = 0;

  friend bool operator==(const AttachPoint&, const AttachPoint&) = default;
};

/// Sequential layer graph over per-example tensors of `input_shape`.
struct NetworkSpec {
  Shape input_shape;
  std::vector<LayerSpec> layers;
  std::vector<AttachPoint> attach_points;

  // Throws ConfigError on an empty layer list, duplicate or out-of-range
  // attachment points, a missing AD(0) at position 0, or layers whose input
  // shapes do not propagate.
  void validate() const;
  // Per-example activation shape at every position 0..layers.size().
  std::vector<Shape> activation_shapes() const;
  std::size_t position_of(int ad_index) const;  // throws ConfigError if unknown
  bool has_attach_point(int ad_index) const;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

nlohmann::json to_json(const NetworkSpec& spec);
NetworkSpec network_spec_from_json(const nlohmann::json& j);

/// Ordered, keyed parameter tensors. Keys look like "3.weight" or
/// "5.bn1.running_var". Running statistics are stored but not trainable.
class ParameterSet {
 public:
  void add(std::string key, Tensor value, bool trainable);
  bool contains(const std::string& key) const { return index_.count(key) != 0; }
  const Tensor& get(const std::string& key) const;
  Tensor& get(const std::string& key);
  std::size_t size() const { return keys_.size(); }
  const std::string& key(std::size_t i) const { return keys_[i]; }
  const Tensor& value(std::size_t i) const { return values_[i]; }
  Tensor& value(std::size_t i) { return values_[i]; }
  bool trainable(std::size_t i) const { return trainable_[i]; }
  std::size_t trainable_count() const;  // scalar count over trainable tensors

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    return a.keys_ == b.keys_ && a.values_ == b.values_ && a.trainable_ == b.trainable_;
  }

 private:
  std::vector<std::string> keys_;
  std::vector<Tensor> values_;
  std::vector<bool> trainable_;
  std::map<std::string, std::size_t> index_;
};

// He-style fan-in initialization for conv/dense weights; zero biases;
// identity batch-norm affine terms with zero-mean/unit-variance running stats.
ParameterSet init_parameters(const NetworkSpec& spec, std::uint64_t seed);

enum class Mode { kEval, kTrain };

struct ForwardOptions {
  Mode mode = Mode::kEval;
  bool param_grads = false;  // record parameters as differentiable leaves
  std::optional<std::size_t> stop_at;  // stop after this many layers
};

struct ForwardTrace {
  NodeId output = 0;
  std::vector<NodeId> activations;  // node at each position reached
  // Training-mode batch-norm nodes, with the parameter-key prefix they feed.
  std::vector<std::pair<std::string, NodeId>> batch_norms;
};

// Appends the network to `tape`, reading the batch (N, input_shape...) from
// `input`.
ForwardTrace forward(Tape& tape, const NetworkSpec& spec, const ParameterSet& params,
                     NodeId input, const ForwardOptions& options = {});

// Standalone pass: records a fresh tape with `input` as its input leaf.
struct ForwardResult {
  Tensor output;
  Tape tape;
  NodeId input = 0;
  ForwardTrace trace;
};
ForwardResult run_forward(const NetworkSpec& spec, const ParameterSet& params, Tensor input,
                          const ForwardOptions& options = {});

// Batch-norm running statistics update after a training-mode pass:
// running = (1 - momentum) * running + momentum * batch.
void update_running_stats(const Tape& tape, const ForwardTrace& trace, ParameterSet& params,
                          double momentum = 0.1);

}  // namespace advdet
