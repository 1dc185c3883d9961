#include "advdet/tape.hpp"

#include "advdet/error.hpp"

namespace advdet {

const Tensor& Gradients::of(NodeId id) const {
  if (!has(id)) throw Error("no gradient recorded for node " + std::to_string(id));
  return *grads_[id];
}

void Tape::check_id(NodeId id) const {
  if (id >= nodes_.size()) {
    throw Error("node " + std::to_string(id) + " is not on the tape (size " +
                std::to_string(nodes_.size()) + ")");
  }
}

NodeId Tape::input(Tensor value) {
  value.check_finite("input");
  nodes_.push_back(Node{std::move(value), nullptr, {}, LeafKind::kInput, {}, true});
  return nodes_.size() - 1;
}

NodeId Tape::parameter(Tensor value, std::string key) {
  nodes_.push_back(
      Node{std::move(value), nullptr, {}, LeafKind::kParameter, std::move(key), true});
  return nodes_.size() - 1;
}

NodeId Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), nullptr, {}, LeafKind::kConstant, {}, false});
  return nodes_.size() - 1;
}

NodeId Tape::apply(std::unique_ptr<Op> op, std::vector<NodeId> inputs) {
  std::vector<const Tensor*> in;
  in.reserve(inputs.size());
  bool needs = false;
  for (auto id : inputs) {
    check_id(id);
    in.push_back(&nodes_[id].value);
    needs = needs || nodes_[id].requires_grad;
  }
  Tensor out = op->forward(in);
  out.check_finite(std::string("output of ") + op->name());
  nodes_.push_back(Node{std::move(out), std::move(op), std::move(inputs),
                        LeafKind::kConstant, {}, needs});
  return nodes_.size() - 1;
}

const Tensor& Tape::value(NodeId id) const {
  check_id(id);
  return nodes_[id].value;
}

bool Tape::requires_grad(NodeId id) const {
  check_id(id);
  return nodes_[id].requires_grad;
}

bool Tape::is_leaf(NodeId id) const {
  check_id(id);
  return nodes_[id].op == nullptr;
}

LeafKind Tape::leaf_kind(NodeId id) const {
  if (!is_leaf(id)) throw Error("node " + std::to_string(id) + " is not a leaf");
  return nodes_[id].kind;
}

const Op* Tape::op(NodeId id) const {
  check_id(id);
  return nodes_[id].op.get();
}

std::span<const NodeId> Tape::inputs_of(NodeId id) const {
  check_id(id);
  return nodes_[id].inputs;
}

const std::string& Tape::parameter_key(NodeId id) const {
  if (leaf_kind(id) != LeafKind::kParameter) {
    throw Error("node " + std::to_string(id) + " is not a parameter");
  }
  return nodes_[id].key;
}

std::vector<NodeId> Tape::parameter_nodes() const {
  std::vector<NodeId> out;
  for (NodeId i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].op && nodes_[i].kind == LeafKind::kParameter) out.push_back(i);
  }
  return out;
}

Gradients Tape::backward(NodeId loss, std::vector<NodeId>* visit_order) const {
  check_id(loss);
  if (nodes_[loss].value.size() != 1) {
    throw ShapeError("backward needs a scalar loss, node " + std::to_string(loss) +
                     " has shape " + shape_str(nodes_[loss].value.shape()));
  }
  Gradients g;
  g.grads_.resize(nodes_.size());
  g.grads_[loss] = Tensor(nodes_[loss].value.shape(), 1.0);

  std::vector<const Tensor*> in;
  std::vector<Tensor*> grad_in;
  for (NodeId id = loss + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (!node.op || !g.grads_[id] || !node.requires_grad) continue;
    in.clear();
    grad_in.clear();
    bool any = false;
    for (auto src : node.inputs) {
      in.push_back(&nodes_[src].value);
      if (nodes_[src].requires_grad) {
        if (!g.grads_[src]) g.grads_[src] = Tensor(nodes_[src].value.shape(), 0.0);
        grad_in.push_back(&*g.grads_[src]);
        any = true;
      } else {
        grad_in.push_back(nullptr);
      }
    }
    if (!any) continue;
    node.op->backward(in, node.value, *g.grads_[id], grad_in);
    if (visit_order) visit_order->push_back(id);
  }
  return g;
}

std::vector<Tensor> Tape::replay() {
  std::vector<Tensor> values;
  values.reserve(nodes_.size());
  std::vector<const Tensor*> in;
  for (auto& node : nodes_) {
    if (!node.op) {
      values.push_back(node.value);
      continue;
    }
    in.clear();
    for (auto src : node.inputs) in.push_back(&values[src]);
    values.push_back(node.op->forward(in));
  }
  return values;
}

Tensor grad_input(const Tape& tape, NodeId loss, NodeId input) {
  if (!tape.is_leaf(input) || tape.leaf_kind(input) != LeafKind::kInput) {
    throw Error("node " + std::to_string(input) + " is not an input leaf");
  }
  auto g = tape.backward(loss);
  if (g.has(input)) return g.of(input);
  return Tensor(tape.value(input).shape(), 0.0);
}

ParameterGradients grad_params(const Tape& tape, NodeId loss) {
  auto g = tape.backward(loss);
  ParameterGradients out;
  for (auto id : tape.parameter_nodes()) {
    out.emplace(tape.parameter_key(id),
                g.has(id) ? g.of(id) : Tensor(tape.value(id).shape(), 0.0));
  }
  return out;
}

}  // namespace advdet
