#include "xbt/tape.hpp"

#include "xbt/error.hpp"

namespace xbt {

GradTape::NodeId GradTape::leaf(Tensor value) {
  Node n;
  n.op = "leaf";
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

GradTape::NodeId GradTape::borrowed_leaf(const Tensor& value) {
  Node n;
  n.op = "leaf";
  n.borrowed = &value;
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

std::vector<const Tensor*> GradTape::gather(const Node& node) const {
  std::vector<const Tensor*> in;
  in.reserve(node.inputs.size());
  for (NodeId i : node.inputs) in.push_back(&value(i));
  return in;
}

GradTape::NodeId GradTape::record(std::string op, std::vector<NodeId> inputs, ForwardFn forward,
                                  BackwardFn backward) {
  if (output_) throw Error("tape already finalized");
  for (NodeId i : inputs)
    if (i >= nodes_.size()) throw Error("tape input " + std::to_string(i) + " does not exist");
  Node n;
  n.op = std::move(op);
  n.inputs = std::move(inputs);
  n.forward = std::move(forward);
  n.backward = std::move(backward);
  const auto in = gather(n);
  n.owned = n.forward(in);
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

const Tensor& GradTape::value(NodeId id) const {
  const Node& n = nodes_.at(id);
  return n.borrowed ? *n.borrowed : *n.owned;
}

void GradTape::finalize(NodeId output) {
  if (output >= nodes_.size()) throw Error("tape output does not exist");
  output_ = output;
}

GradTape::NodeId GradTape::output() const {
  if (!output_) throw Error("tape not finalized");
  return *output_;
}

std::vector<std::optional<Tensor>> GradTape::backward(const Tensor& upstream) const {
  const NodeId out = output();
  if (upstream.size() != value(out).size())
    throw ShapeError("upstream gradient " + shape_str(upstream.shape()) +
                     " does not match tape output " + shape_str(value(out).shape()));
  std::vector<std::optional<Tensor>> grads(nodes_.size());
  grads[out] = upstream.reshaped(value(out).shape());
  for (NodeId id = out + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (!grads[id] || n.inputs.empty()) continue;
    const auto in = gather(n);
    auto local = n.backward(*grads[id], in, value(id));
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      auto& slot = grads[n.inputs[k]];
      if (!slot) {
        slot = std::move(local[k]);
      } else {
        for (std::size_t e = 0; e < slot->size(); ++e) (*slot)[e] += local[k][e];
      }
    }
  }
  return grads;
}

Tensor GradTape::replay() const {
  const NodeId out = output();
  std::vector<std::optional<Tensor>> fresh(nodes_.size());
  for (NodeId id = 0; id <= out; ++id) {
    const Node& n = nodes_[id];
    if (n.inputs.empty() && !n.forward) {
      fresh[id] = value(id);
      continue;
    }
    std::vector<const Tensor*> in;
    for (NodeId i : n.inputs) in.push_back(&*fresh[i]);
    fresh[id] = n.forward(in);
  }
  return *fresh[out];
}

Tensor backward_to_input(const GradTape& tape, const Tensor& upstream) {
  if (tape.size() == 0) throw Error("empty tape");
  auto grads = tape.backward(upstream);
  if (!grads[0]) return Tensor(tape.value(0).shape());
  return std::move(*grads[0]);
}

}  // namespace xbt
