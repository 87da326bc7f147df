#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "latt/tensor.hpp"

namespace latt {

class Tape;

/// Handle to a node on a tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;
    bool valid() const { return tape != nullptr; }
};

/// Record of executed differentiable operations in topological order,
/// enabling reverse-mode gradient accumulation. Construction is
/// single-threaded per tape; independent tapes may run concurrently.
class Tape {
public:
    /// Vector-Jacobian product: grads w.r.t. each input, aligned with the
    /// input list. An empty Tensor means "no gradient computed" (allowed for
    /// inputs that do not require grad).
    using Vjp = std::function<std::vector<Tensor>(const Tensor& grad_out)>;

    /// Differentiable parameter. Names must be unique per tape.
    Var leaf(Tensor value, std::string name);
    /// Non-differentiable input.
    Var constant(Tensor value);
    /// Appends an op node. Inputs must already live on this tape (a forward
    /// reference is reported as a cycle). `vjp` may be null for
    /// non-differentiable ops; backward then fails if a gradient reaches it.
    Var record(std::string op, std::vector<Var> inputs, Tensor value, Vjp vjp);

    const Tensor& value(Var v) const;
    std::size_t size() const { return nodes_.size(); }
    bool needs_grad(Var v) const;
    const std::vector<std::string>& leaf_names() const { return leaf_names_; }

    /// Gradients of the seeded output w.r.t. every leaf, keyed by leaf name.
    /// Leaves unused by the graph map to zero tensors. Does not mutate the
    /// tape; repeated calls yield identical results.
    std::map<std::string, Tensor> backward(Var output, const Tensor& seed) const;

private:
    struct Node {
        std::string op;
        std::vector<std::size_t> inputs;
        Tensor value;
        Vjp vjp;
        bool needs_grad = false;
        int leaf_index = -1;
    };

    void check_var(Var v) const;

    std::vector<Node> nodes_;
    std::vector<std::string> leaf_names_;
    std::vector<std::size_t> leaf_ids_;
};

/// Tape-recorded operations. Forward values come from the eager kernels in
/// ops.hpp / window_ops.hpp; each records the matching vjp.
namespace ag {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var sum(Var a);
Var reshape(Var a, std::vector<std::size_t> dims);
Var gelu(Var x);
Var spow(Var o, double lam);

Var softmax_over(Var x, int axis);
Var filter_normalize(Var x, int axis, double eps);

Var unfold(Var x, int kernel_size);
Var contract_channel(Var x, Var table);
Var contract_unfolded(Var xu, Var table);
Var head_dot(Var q, Var ku, std::size_t groups);
Var head_contract(Var x, Var tbl);
Var head_contract_unfolded(Var ku, Var tbl);
Var add_bias_gt(Var x, Var bias);
Var apply_neighbor(Var attn, Var vu);
Var expand_heads(Var h, std::size_t channels);
Var mul_table_ct(Var x, Var m);
Var add_table_ct(Var x, Var s);

Var conv2d(Var x, Var w, Var bias, std::size_t groups);  // bias may be invalid Var
Var layer_norm_channels(Var x, Var gamma, Var beta, double eps);
Var space_to_depth(Var x, int patch);
Var mean_hw(Var x);
Var linear(Var x, Var w, Var bias);  // bias may be invalid Var
Var cross_entropy(Var logits, std::vector<int> labels);

Var window_partition(Var x, int window_size);
Var window_merge(Var xw, int window_size, std::size_t height, std::size_t width);
Var win_qk(Var qw, Var kw, std::size_t groups);
Var win_q_table(Var qw, Var tbl, int window_size);
Var win_table_k(Var kw, Var tbl, int window_size);
Var add_bias_window(Var x, Var bias, int window_size);
Var win_apply(Var attn, Var vw);

}  // namespace ag

}  // namespace latt
