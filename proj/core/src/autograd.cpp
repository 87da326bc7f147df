#include "latt/autograd.hpp"

#include <algorithm>
#include <stdexcept>

#include "latt/ops.hpp"
#include "latt/window_ops.hpp"

namespace latt {

Var Tape::leaf(Tensor value, std::string name) {
    if (std::find(leaf_names_.begin(), leaf_names_.end(), name) != leaf_names_.end())
        throw std::invalid_argument("Tape::leaf: duplicate leaf name: " + name);
    Node n;
    n.op = "leaf";
    n.value = std::move(value);
    n.needs_grad = true;
    n.leaf_index = static_cast<int>(leaf_names_.size());
    leaf_names_.push_back(std::move(name));
    leaf_ids_.push_back(nodes_.size());
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
    Node n;
    n.op = "constant";
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Tape::record(std::string op, std::vector<Var> inputs, Tensor value, Vjp vjp) {
    Node n;
    n.op = std::move(op);
    n.inputs.reserve(inputs.size());
    for (Var v : inputs) {
        if (v.tape != this) throw std::invalid_argument("Tape::record: input from another tape");
        if (v.id >= nodes_.size())
            throw std::invalid_argument("Tape::record: cycle detected (forward reference)");
        n.inputs.push_back(v.id);
        n.needs_grad = n.needs_grad || nodes_[v.id].needs_grad;
    }
    n.value = std::move(value);
    n.vjp = std::move(vjp);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

const Tensor& Tape::value(Var v) const {
    check_var(v);
    return nodes_[v.id].value;
}

bool Tape::needs_grad(Var v) const {
    check_var(v);
    return nodes_[v.id].needs_grad;
}

void Tape::check_var(Var v) const {
    if (v.tape != this || v.id >= nodes_.size())
        throw std::invalid_argument("Tape: variable does not belong to this tape");
}

std::map<std::string, Tensor> Tape::backward(Var output, const Tensor& seed) const {
    check_var(output);
    const Node& out_node = nodes_[output.id];
    if (seed.dims() != out_node.value.dims() || seed.dtype() != out_node.value.dtype())
        throw std::invalid_argument("Tape::backward: seed shape must match the output");

    std::vector<Tensor> grads(nodes_.size());
    grads[output.id] = seed;
    for (std::size_t idx = output.id + 1; idx-- > 0;) {
        const Node& node = nodes_[idx];
        if (grads[idx].empty() || !node.needs_grad) continue;
        if (node.leaf_index >= 0) continue;
        if (node.inputs.empty()) continue;  // constants absorb nothing
        if (!node.vjp)
            throw std::runtime_error("Tape::backward: missing vjp for op '" + node.op + "'");
        std::vector<Tensor> input_grads = node.vjp(grads[idx]);
        if (input_grads.size() != node.inputs.size())
            throw std::runtime_error("Tape::backward: vjp arity mismatch for op '" + node.op + "'");
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
            if (input_grads[k].empty()) continue;
            const std::size_t in_id = node.inputs[k];
            if (!nodes_[in_id].needs_grad) continue;
            if (grads[in_id].empty())
                grads[in_id] = std::move(input_grads[k]);
            else
                add_inplace(grads[in_id], input_grads[k]);
        }
        grads[idx] = Tensor();  // adjoint no longer needed
    }

    std::map<std::string, Tensor> result;
    for (std::size_t li = 0; li < leaf_ids_.size(); ++li) {
        const std::size_t id = leaf_ids_[li];
        if (grads[id].empty())
            result[leaf_names_[li]] = Tensor::zeros(nodes_[id].value.dims(), nodes_[id].value.dtype());
        else
            result[leaf_names_[li]] = std::move(grads[id]);
    }
    return result;
}

namespace ag {

namespace {

Tape& tape_of(Var v) {
    if (!v.valid()) throw std::invalid_argument("ag: invalid variable");
    return *v.tape;
}

const Tensor& val(Var v) { return v.tape->value(v); }

}  // namespace

Var add(Var a, Var b) {
    Tape& t = tape_of(a);
    return t.record("add", {a, b}, latt::add(val(a), val(b)),
                    [](const Tensor& g) { return std::vector<Tensor>{g, g}; });
}

Var sub(Var a, Var b) {
    Tape& t = tape_of(a);
    return t.record("sub", {a, b}, latt::sub(val(a), val(b)), [](const Tensor& g) {
        return std::vector<Tensor>{g, latt::scale(g, -1.0)};
    });
}

Var mul(Var a, Var b) {
    Tape& t = tape_of(a);
    Tensor av = val(a), bv = val(b);
    const bool na = t.needs_grad(a), nb = t.needs_grad(b);
    return t.record("mul", {a, b}, latt::mul(av, bv), [av, bv, na, nb](const Tensor& g) {
        std::vector<Tensor> out(2);
        if (na) out[0] = latt::mul(g, bv);
        if (nb) out[1] = latt::mul(g, av);
        return out;
    });
}

Var scale(Var a, double c) {
    Tape& t = tape_of(a);
    return t.record("scale", {a}, latt::scale(val(a), c),
                    [c](const Tensor& g) { return std::vector<Tensor>{latt::scale(g, c)}; });
}

Var sum(Var a) {
    Tape& t = tape_of(a);
    const auto dims = val(a).dims();
    const DType dt = val(a).dtype();
    return t.record("sum", {a}, latt::sum_all(val(a)), [dims, dt](const Tensor& g) {
        return std::vector<Tensor>{Tensor::full(dims, g.item(0), dt)};
    });
}

Var reshape(Var a, std::vector<std::size_t> dims) {
    Tape& t = tape_of(a);
    const auto old_dims = val(a).dims();
    return t.record("reshape", {a}, val(a).reshaped(dims), [old_dims](const Tensor& g) {
        return std::vector<Tensor>{g.reshaped(old_dims)};
    });
}

Var gelu(Var x) {
    Tape& t = tape_of(x);
    Tensor xv = val(x);
    return t.record("gelu", {x}, latt::gelu(xv), [xv](const Tensor& g) {
        return std::vector<Tensor>{latt::gelu_vjp(xv, g)};
    });
}

Var spow(Var o, double lam) {
    Tape& t = tape_of(o);
    Tensor ov = val(o);
    return t.record("spow", {o}, latt::spow(ov, lam), [ov, lam](const Tensor& g) {
        return std::vector<Tensor>{latt::spow_vjp(ov, lam, g)};
    });
}

Var softmax_over(Var x, int axis) {
    Tape& t = tape_of(x);
    Tensor y = latt::softmax_over(val(x), axis);
    return t.record("softmax_over", {x}, y, [y, axis](const Tensor& g) {
        return std::vector<Tensor>{latt::softmax_vjp(y, g, axis)};
    });
}

Var filter_normalize(Var x, int axis, double eps) {
    Tape& t = tape_of(x);
    Tensor xv = val(x);
    return t.record("filter_normalize", {x}, latt::filter_normalize(xv, axis, eps),
                    [xv, axis, eps](const Tensor& g) {
                        return std::vector<Tensor>{latt::filter_normalize_vjp(xv, axis, eps, g)};
                    });
}

Var unfold(Var x, int kernel_size) {
    Tape& t = tape_of(x);
    const std::size_t H = val(x).dim(2), W = val(x).dim(3);
    return t.record("unfold", {x}, latt::unfold(val(x), kernel_size),
                    [kernel_size, H, W](const Tensor& g) {
                        return std::vector<Tensor>{latt::fold_add(g, kernel_size, H, W)};
                    });
}

Var contract_channel(Var x, Var table) {
    Tape& t = tape_of(x);
    Tensor xv = val(x), tv = val(table);
    const bool nx = t.needs_grad(x), nt = t.needs_grad(table);
    const std::size_t C = xv.dim(1);
    return t.record("contract_channel", {x, table}, latt::contract_channel(xv, tv),
                    [xv, tv, nx, nt, C](const Tensor& g) {
                        std::vector<Tensor> out(2);
                        if (nx) out[0] = latt::contract_channel_vjp_x(g, tv, C);
                        if (nt) out[1] = latt::contract_channel_vjp_table(g, xv);
                        return out;
                    });
}

Var contract_unfolded(Var xu, Var table) {
    Tape& t = tape_of(xu);
    Tensor xv = val(xu), tv = val(table);
    const bool nx = t.needs_grad(xu), nt = t.needs_grad(table);
    const std::size_t C = xv.dim(1);
    return t.record("contract_unfolded", {xu, table}, latt::contract_unfolded(xv, tv),
                    [xv, tv, nx, nt, C](const Tensor& g) {
                        std::vector<Tensor> out(2);
                        if (nx) out[0] = latt::contract_unfolded_vjp_x(g, tv, C);
                        if (nt) out[1] = latt::contract_unfolded_vjp_table(g, xv);
                        return out;
                    });
}

Var head_dot(Var q, Var ku, std::size_t groups) {
    Tape& t = tape_of(q);
    Tensor qv = val(q), kv = val(ku);
    const bool nq = t.needs_grad(q), nk = t.needs_grad(ku);
    const std::size_t H = qv.dim(2), W = qv.dim(3);
    return t.record("head_dot", {q, ku}, latt::head_dot(qv, kv, groups),
                    [qv, kv, groups, nq, nk, H, W](const Tensor& g) {
                        std::vector<Tensor> out(2);
                        if (nq) out[0] = latt::head_dot_vjp_q(g, kv, groups, H, W);
                        if (nk) out[1] = latt::head_dot_vjp_ku(g, qv, groups);
                        return out;
                    });
}

Var head_contract(Var x, Var tbl) {
    Tape& t = tape_of(x);
    Tensor xv = val(x), tv = val(tbl);
    const bool nx = t.needs_grad(x), nt = t.needs_grad(tbl);
    const std::size_t H = xv.dim(2), W = xv.dim(3);
    return t.record("head_contract", {x, tbl}, latt::head_contract(xv, tv),
                    [xv, tv, nx, nt, H, W](const Tensor& g) {
                        std::vector<Tensor> out(2);
                        if (nx) out[0] = latt::head_contract_vjp_x(g, tv, H, W);
                        if (nt) out[1] = latt::head_contract_vjp_tbl(g, xv);
                        return out;
                    });
}

Var head_contract_unfolded(Var ku, Var tbl) {
    Tape& t = tape_of(ku);
    Tensor kv = val(ku), tv = val(tbl);
    const bool nk = t.needs_grad(ku), nt = t.needs_grad(tbl);
    const std::size_t C = kv.dim(1);
    return t.record("head_contract_unfolded", {ku, tbl}, latt::head_contract_unfolded(kv, tv),
                    [kv, tv, nk, nt, C](const Tensor& g) {
                        std::vector<Tensor> out(2);
                        if (nk) out[0] = latt::head_contract_unfolded_vjp_ku(g, tv, C);
                        if (nt) out[1] = latt::head_contract_unfolded_vjp_tbl(g, kv);
                        return out;
                    });
}

Var add_bias_gt(Var x, Var bias) {
    Tape& t = tape_of(x);
    const bool nb = t.needs_grad(bias);
    return t.record("add_bias_gt", {x, bias}, latt::add_bias_gt(val(x), val(bias)),
                    [nb](const Tensor& g) {
                        std::vector<Tensor> out(2);
                        out[0] = g;
                        if (nb) out[1] = latt::add_bias_gt_vjp_bias(g);
                        return out;
                    });
}

Var apply_neighbor(Var attn, Var vu) {
    Tape& t = tape_of(attn);
    Tensor av = val(attn), vv = val(vu);
    const bool na = t.needs_grad(attn), nv = t.needs_grad(vu);
    const std::size_t G = av.dim(1);
    return t.record("apply_neighbor", {attn, vu}, latt::apply_neighbor(av, vv),
                    [av, vv, na, nv, G](const Tensor& g) {
                        std::vector<Tensor> out(2);
                        if (na) out[0] = latt::apply_neighbor_vjp_attn(g, vv, G);
                        if (nv) out[1] = latt::apply_neighbor_vjp_vu(g, av);
                        return out;
                    });
}

Var expand_heads(Var h, std::size_t channels) {
    Tape& t = tape_of(h);
    const std::size_t G = val(h).dim(1);
    return t.record("expand_heads", {h}, latt::expand_heads(val(h), channels),
                    [G](const Tensor& g) {
                        return std::vector<Tensor>{latt::expand_heads_vjp(g, G)};
                    });
}

Var mul_table_ct(Var x, Var m) {
    Tape& t = tape_of(x);
    Tensor xv = val(x), mv = val(m);
    const bool nx = t.needs_grad(x), nm = t.needs_grad(m);
    return t.record("mul_table_ct", {x, m}, latt::mul_table_ct(xv, mv),
                    [xv, mv, nx, nm](const Tensor& g) {
                        std::vector<Tensor> out(2);
                        if (nx) out[0] = latt::mul_table_ct_vjp_x(g, mv);
                        if (nm) out[1] = latt::mul_table_ct_vjp_m(g, xv);
                        return out;
                    });
}

Var add_table_ct(Var x, Var s) {
    Tape& t = tape_of(x);
    const bool ns = t.needs_grad(s);
    return t.record("add_table_ct", {x, s}, latt::add_table_ct(val(x), val(s)),
                    [ns](const Tensor& g) {
                        std::vector<Tensor> out(2);
                        out[0] = g;
                        if (ns) out[1] = latt::add_table_ct_vjp_s(g);
                        return out;
                    });
}

Var conv2d(Var x, Var w, Var bias, std::size_t groups) {
    Tape& t = tape_of(x);
    Tensor xv = val(x), wv = val(w);
    const bool has_bias = bias.valid();
    Tensor out = latt::conv2d_grouped(xv, wv, has_bias ? &val(bias) : nullptr, groups);
    const bool nx = t.needs_grad(x), nw = t.needs_grad(w);
    const bool nb = has_bias && t.needs_grad(bias);
    const std::size_t Ci = xv.dim(1), Kh = wv.dim(2), Kw = wv.dim(3);
    std::vector<Var> inputs = has_bias ? std::vector<Var>{x, w, bias} : std::vector<Var>{x, w};
    return t.record("conv2d", std::move(inputs), std::move(out),
                    [xv, wv, groups, nx, nw, nb, has_bias, Ci, Kh, Kw](const Tensor& g) {
                        std::vector<Tensor> out_g(has_bias ? 3 : 2);
                        if (nx) out_g[0] = latt::conv2d_vjp_x(g, wv, groups, Ci);
                        if (nw) out_g[1] = latt::conv2d_vjp_w(g, xv, groups, Kh, Kw);
                        if (nb) out_g[2] = latt::conv2d_vjp_bias(g);
                        return out_g;
                    });
}

Var layer_norm_channels(Var x, Var gamma, Var beta, double eps) {
    Tape& t = tape_of(x);
    Tensor xv = val(x), gv = val(gamma);
    return t.record("layer_norm_channels", {x, gamma, beta},
                    latt::layer_norm_channels(xv, gv, val(beta), eps),
                    [xv, gv, eps](const Tensor& g) {
                        std::vector<Tensor> out(3);
                        latt::layer_norm_channels_vjp(xv, gv, eps, g, out[0], out[1], out[2]);
                        return out;
                    });
}

Var space_to_depth(Var x, int patch) {
    Tape& t = tape_of(x);
    return t.record("space_to_depth", {x}, latt::space_to_depth(val(x), patch),
                    [patch](const Tensor& g) {
                        return std::vector<Tensor>{latt::depth_to_space(g, patch)};
                    });
}

Var mean_hw(Var x) {
    Tape& t = tape_of(x);
    const std::size_t H = val(x).dim(2), W = val(x).dim(3);
    return t.record("mean_hw", {x}, latt::mean_hw(val(x)), [H, W](const Tensor& g) {
        return std::vector<Tensor>{latt::mean_hw_vjp(g, H, W)};
    });
}

Var linear(Var x, Var w, Var bias) {
    Tape& t = tape_of(x);
    Tensor xv = val(x), wv = val(w);
    const bool has_bias = bias.valid();
    Tensor out = latt::linear(xv, wv, has_bias ? &val(bias) : nullptr);
    const bool nx = t.needs_grad(x), nw = t.needs_grad(w);
    const bool nb = has_bias && t.needs_grad(bias);
    std::vector<Var> inputs = has_bias ? std::vector<Var>{x, w, bias} : std::vector<Var>{x, w};
    return t.record("linear", std::move(inputs), std::move(out),
                    [xv, wv, nx, nw, nb, has_bias](const Tensor& g) {
                        std::vector<Tensor> out_g(has_bias ? 3 : 2);
                        if (nx) out_g[0] = latt::linear_vjp_x(g, wv);
                        if (nw) out_g[1] = latt::linear_vjp_w(g, xv);
                        if (nb) out_g[2] = latt::linear_vjp_bias(g);
                        return out_g;
                    });
}

Var cross_entropy(Var logits, std::vector<int> labels) {
    Tape& t = tape_of(logits);
    Tensor lv = val(logits);
    Tensor loss = latt::cross_entropy(lv, labels, nullptr);
    return t.record("cross_entropy", {logits}, std::move(loss),
                    [lv, labels = std::move(labels)](const Tensor& g) {
                        return std::vector<Tensor>{latt::cross_entropy_vjp(lv, labels, g)};
                    });
}

Var window_partition(Var x, int window_size) {
    Tape& t = tape_of(x);
    const std::size_t H = val(x).dim(2), W = val(x).dim(3);
    return t.record("window_partition", {x}, latt::window_partition(val(x), window_size),
                    [window_size, H, W](const Tensor& g) {
                        return std::vector<Tensor>{latt::window_merge(g, window_size, H, W)};
                    });
}

Var window_merge(Var xw, int window_size, std::size_t height, std::size_t width) {
    Tape& t = tape_of(xw);
    return t.record("window_merge", {xw}, latt::window_merge(val(xw), window_size, height, width),
                    [window_size](const Tensor& g) {
                        return std::vector<Tensor>{latt::window_partition(g, window_size)};
                    });
}

Var win_qk(Var qw, Var kw, std::size_t groups) {
    Tape& t = tape_of(qw);
    Tensor qv = val(qw), kv = val(kw);
    const bool nq = t.needs_grad(qw), nk = t.needs_grad(kw);
    return t.record("win_qk", {qw, kw}, latt::win_qk(qv, kv, groups),
                    [qv, kv, groups, nq, nk](const Tensor& g) {
                        std::vector<Tensor> out(2);
                        if (nq) out[0] = latt::win_qk_vjp_q(g, kv, groups);
                        if (nk) out[1] = latt::win_qk_vjp_k(g, qv, groups);
                        return out;
                    });
}

Var win_q_table(Var qw, Var tbl, int window_size) {
    Tape& t = tape_of(qw);
    Tensor qv = val(qw), tv = val(tbl);
    const bool nq = t.needs_grad(qw), nt = t.needs_grad(tbl);
    const std::size_t rows = tv.dim(2);
    return t.record("win_q_table", {qw, tbl}, latt::win_q_table(qv, tv, window_size),
                    [qv, tv, window_size, nq, nt, rows](const Tensor& g) {
                        std::vector<Tensor> out(2);
                        if (nq) out[0] = latt::win_q_table_vjp_q(g, tv, window_size);
                        if (nt) out[1] = latt::win_q_table_vjp_tbl(g, qv, window_size, rows);
                        return out;
                    });
}

Var win_table_k(Var kw, Var tbl, int window_size) {
    Tape& t = tape_of(kw);
    Tensor kv = val(kw), tv = val(tbl);
    const bool nk = t.needs_grad(kw), nt = t.needs_grad(tbl);
    const std::size_t rows = tv.dim(2);
    return t.record("win_table_k", {kw, tbl}, latt::win_table_k(kv, tv, window_size),
                    [kv, tv, window_size, nk, nt, rows](const Tensor& g) {
                        std::vector<Tensor> out(2);
                        if (nk) out[0] = latt::win_table_k_vjp_k(g, tv, window_size);
                        if (nt) out[1] = latt::win_table_k_vjp_tbl(g, kv, window_size, rows);
                        return out;
                    });
}

Var add_bias_window(Var x, Var bias, int window_size) {
    Tape& t = tape_of(x);
    const bool nb = t.needs_grad(bias);
    const std::size_t rows = val(bias).dim(1);
    return t.record("add_bias_window", {x, bias},
                    latt::add_bias_window(val(x), val(bias), window_size),
                    [window_size, nb, rows](const Tensor& g) {
                        std::vector<Tensor> out(2);
                        out[0] = g;
                        if (nb) out[1] = latt::add_bias_window_vjp_bias(g, window_size, rows);
                        return out;
                    });
}

Var win_apply(Var attn, Var vw) {
    Tape& t = tape_of(attn);
    Tensor av = val(attn), vv = val(vw);
    const bool na = t.needs_grad(attn), nv = t.needs_grad(vw);
    const std::size_t G = av.dim(2);
    return t.record("win_apply", {attn, vw}, latt::win_apply(av, vv),
                    [av, vv, na, nv, G](const Tensor& g) {
                        std::vector<Tensor> out(2);
                        if (na) out[0] = latt::win_apply_vjp_attn(g, vv, G);
                        if (nv) out[1] = latt::win_apply_vjp_v(g, av);
                        return out;
                    });
}

}  // namespace ag

}  // namespace latt
