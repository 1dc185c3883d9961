#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advdet/tensor.hpp"

namespace advdet {

using NodeId = std::size_t;

/// A differentiable primitive. Instances are owned by exactly one tape node
/// and may cache intermediate results of their forward call for use in
/// backward.
class Op {
 public:
  virtual ~Op() = default;
  virtual const char* name() const = 0;
  virtual Tensor forward(std::span<const Tensor* const> inputs) = 0;
  // Accumulates d(loss)/d(input_i) into grad_inputs[i]. Entries are null for
  // inputs that do not require a gradient; non-null entries are pre-shaped.
  virtual void backward(std::span<const Tensor* const> inputs, const Tensor& output,
                        const Tensor& grad_output,
                        std::span<Tensor* const> grad_inputs) const = 0;
};

enum class LeafKind { kInput, kParameter, kConstant };

/// Result of one reverse sweep. Holds gradients for every node that lies on
/// a path between a differentiable leaf and the loss.
class Gradients {
 public:
  bool has(NodeId id) const { return id < grads_.size() && grads_[id].has_value(); }
  // Throws if `id` was not reached by the sweep.
  const Tensor& of(NodeId id) const;

 private:
  friend class Tape;
  std::vector<std::optional<Tensor>> grads_;
};

/// Linear record of a forward pass. Nodes are appended in execution order, so
/// index order is a topological order of the graph.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  NodeId input(Tensor value);
  NodeId parameter(Tensor value, std::string key);
  NodeId constant(Tensor value);
  // Runs op forward on the input values and records the result. Throws
  // NumericError if the output is not finite.
  NodeId apply(std::unique_ptr<Op> op, std::vector<NodeId> inputs);

  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(NodeId id) const;
  bool requires_grad(NodeId id) const;
  LeafKind leaf_kind(NodeId id) const;  // throws for non-leaf nodes
  bool is_leaf(NodeId id) const;
  const Op* op(NodeId id) const;
  std::span<const NodeId> inputs_of(NodeId id) const;
  const std::string& parameter_key(NodeId id) const;
  std::vector<NodeId> parameter_nodes() const;

  // Reverse sweep from a scalar node. If `visit_order` is non-null, the ids of
  // nodes whose backward ran are appended in the order visited.
  Gradients backward(NodeId loss, std::vector<NodeId>* visit_order = nullptr) const;

  // Re-executes every op from the recorded leaf values and returns the
  // recomputed value of each node.
  std::vector<Tensor> replay();

 private:
  struct Node {
    Tensor value;
    std::unique_ptr<Op> op;  // null for leaves
    std::vector<NodeId> inputs;
    LeafKind kind = LeafKind::kConstant;
    std::string key;
    bool requires_grad = false;
  };

  void check_id(NodeId id) const;

  std::vector<Node> nodes_;
};

using ParameterGradients = std::map<std::string, Tensor>;

// d(loss)/d(input) for an input leaf.
Tensor grad_input(const Tape& tape, NodeId loss, NodeId input);
// d(loss)/d(param) for every parameter leaf, keyed by parameter key.
ParameterGradients grad_params(const Tape& tape, NodeId loss);

}  // namespace advdet
