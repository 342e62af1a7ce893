#pragma once

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "mimlab/tensor.hpp"

namespace mimlab {

// Reverse-mode gradient tape. Ops append one node per produced tensor; each
// node owns a closure that reads the output gradient and accumulates into the
// gradients of the node inputs. Ops record only when at least one input is
// tracked (a watched leaf or the output of an earlier node), so inference
// with a null tape pays nothing.
class Tape {
 public:
  using BackFn = std::function<void(const Tensor& grad_out, Tape& tape)>;

  // Marks a leaf whose gradient should be produced by backward().
  void watch(const Tensor& t);
  bool tracked(uint64_t vid) const;
  // True if the op consuming these inputs must record a node. Inputs with
  // requires_grad set are watched as leaves on first use.
  bool should_record(std::initializer_list<const Tensor*> inputs);
  void record(const Tensor& out, BackFn fn);

  // Runs all recorded closures in reverse order, seeding d(loss)/d(loss) = 1.
  // The loss must be a scalar produced under this tape.
  void backward(const Tensor& loss);

  void accum(const Tensor& target, const Tensor& g);
  bool has_grad(const Tensor& t) const;
  // Gradient of a watched leaf (or any recorded value). Zeros if backward
  // never reached it.
  Tensor grad(const Tensor& t) const;

  size_t node_count() const { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    uint64_t out_vid;
    BackFn fn;
  };
  std::vector<Node> nodes_;
  std::unordered_map<uint64_t, Tensor> grads_;
  std::unordered_map<uint64_t, bool> tracked_;
};

}  // namespace mimlab
