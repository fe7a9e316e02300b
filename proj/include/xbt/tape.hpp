#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xbt/tensor.hpp"

namespace xbt {

/// Record of a forward computation, kept for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order. Leaves either own their tensor or borrow one (model
/// parameters), in which case the borrowed tensor must outlive the tape.
/// Node 0 is the network input by convention. Single-threaded.
class GradTape {
 public:
  using NodeId = std::size_t;
  using Inputs = std::span<const Tensor* const>;
  using ForwardFn = std::function<Tensor(Inputs)>;
  /// Returns one gradient per input, in input order.
  using BackwardFn =
      std::function<std::vector<Tensor>(const Tensor& grad_out, Inputs inputs, const Tensor& out)>;

  NodeId leaf(Tensor value);
  NodeId borrowed_leaf(const Tensor& value);

  /// Evaluates `forward` on the values of `inputs`, caches the result and records the node.
  NodeId record(std::string op, std::vector<NodeId> inputs, ForwardFn forward,
                BackwardFn backward);

  const Tensor& value(NodeId id) const;
  const std::string& op(NodeId id) const { return nodes_.at(id).op; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Marks `output` as the value the reverse pass starts from.
  void finalize(NodeId output);
  bool finalized() const noexcept { return output_.has_value(); }
  NodeId output() const;

  /// Gradient of <upstream, output> with respect to every node; nodes the
  /// output does not depend on get std::nullopt.
  std::vector<std::optional<Tensor>> backward(const Tensor& upstream) const;

  /// Re-evaluates every recorded node from the leaves and returns the new output value.
  Tensor replay() const;

 private:
  struct Node {
    std::string op;
    std::vector<NodeId> inputs;
    std::optional<Tensor> owned;
    const Tensor* borrowed = nullptr;
    ForwardFn forward;
    BackwardFn backward;
  };

  std::vector<const Tensor*> gather(const Node& node) const;

  std::vector<Node> nodes_;
  std::optional<NodeId> output_;
};

/// dLoss/dInput (node 0) seeded with `upstream` at the tape's output.
Tensor backward_to_input(const GradTape& tape, const Tensor& upstream);

}  // namespace xbt
