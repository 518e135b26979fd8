#pragma once

#include <set>
#include <string>
#include <vector>

#include "cmsnet/graph.hpp"

namespace cmsnet {

struct PassReport {
    std::string pass;
    std::size_t nodes_before = 0, nodes_after = 0;
    std::size_t bytes_before = 0, bytes_after = 0;
    std::vector<std::string> warnings;

    bool changed() const {
        return nodes_before != nodes_after || bytes_before != bytes_after;
    }
};

inline std::size_t weight_bytes(const Graph& g) {
    std::size_t total = 0;
    for (const auto& [name, t] : g.weights) total += t.size() * sizeof(float);
    return total;
}

namespace detail {

inline std::vector<int> consumer_counts(const Graph& g) {
    std::vector<int> counts(g.nodes.size(), 0);
    for (const Node& nd : g.nodes)
        for (int in : nd.inputs) ++counts[in];
    for (int out : g.outputs) ++counts[out];
    return counts;
}

// Drops nodes marked removed; `alias[id]` names the surviving node a removed
// node's consumers should read from instead.
inline void compact(Graph& g, const std::vector<bool>& removed,
                    const std::vector<int>& alias) {
    auto resolve = [&](int id) {
        while (removed[id]) id = alias[id];
        return id;
    };
    std::vector<int> new_id(g.nodes.size(), -1);
    std::vector<Node> kept;
    kept.reserve(g.nodes.size());
    for (const Node& nd : g.nodes) {
        if (removed[nd.id]) continue;
        Node copy = nd;
        copy.id = static_cast<int>(kept.size());
        for (int& in : copy.inputs) in = new_id[resolve(in)];
        new_id[nd.id] = copy.id;
        kept.push_back(std::move(copy));
    }
    for (int& out : g.outputs) out = new_id[resolve(out)];
    g.nodes = std::move(kept);
}

inline void drop_unreferenced_weights(Graph& g) {
    std::set<std::string> used;
    for (const Node& nd : g.nodes) {
        if (!nd.weight_name.empty()) used.insert(nd.weight_name);
        if (!nd.bias_name.empty()) used.insert(nd.bias_name);
        if (!nd.scale_name.empty()) used.insert(nd.scale_name);
        if (!nd.bn_prefix.empty())
            for (const char* s : {".gamma", ".beta", ".mean", ".var"})
                used.insert(nd.bn_prefix + s);
    }
    for (auto it = g.weights.begin(); it != g.weights.end();)
        it = used.count(it->first) ? std::next(it) : g.weights.erase(it);
}

}  // namespace detail

// Absorbs batch-norm affine parameters into the preceding convolution.
inline PassReport fold_bn(Graph& g) {
    PassReport rep{"fold_bn", g.nodes.size(), 0, weight_bytes(g), 0, {}};
    auto consumers = detail::consumer_counts(g);
    std::vector<bool> removed(g.nodes.size(), false);
    std::vector<int> alias(g.nodes.size(), -1);

    for (Node& nd : g.nodes) {
        if (nd.kind != OpKind::BatchNorm) continue;
        Node& producer = g.nodes[nd.inputs[0]];
        if (producer.kind != OpKind::Conv || consumers[producer.id] != 1) {
            rep.warnings.push_back("batch_norm node " + std::to_string(nd.id) +
                                   " left in place (input is not an exclusive conv)");
            continue;
        }
        BatchNormParams p = g.bn_params(nd);
        const Tensor& w = g.weight(producer.weight_name);
        const int cout = w.c;
        // The fold becomes a per-channel epilogue scale + bias on the conv,
        // computed in double exactly like inference-mode batch_norm; the conv
        // weights themselves are untouched, so the optimized graph reproduces
        // the reference to the float rounding of scale and bias alone.
        std::vector<double> scale(cout);
        for (int co = 0; co < cout; ++co)
            scale[co] = static_cast<double>(p.gamma[co]) /
                        std::sqrt(static_cast<double>(p.running_var[co]) + p.epsilon);
        std::string base = producer.weight_name;
        if (base.size() > 7 && base.ends_with(".weight"))
            base.resize(base.size() - 7);
        if (producer.bias_name.empty()) {
            producer.bias_name = base + ".bias";
            g.weights.emplace(producer.bias_name, Tensor(1, 1, 1, cout, 0.0f));
        }
        producer.scale_name = base + ".fold_scale";
        Tensor st(1, 1, 1, cout);
        for (int co = 0; co < cout; ++co)
            st.data[co] = static_cast<float>(scale[co]);
        g.weights.insert_or_assign(producer.scale_name, std::move(st));
        Tensor& b = g.weight(producer.bias_name);
        for (int co = 0; co < cout; ++co)
            b.data[co] = static_cast<float>(
                (b.data[co] - static_cast<double>(p.running_mean[co])) * scale[co] +
                p.beta[co]);
        for (const char* s : {".gamma", ".beta", ".mean", ".var"})
            g.weights.erase(nd.bn_prefix + s);
        removed[nd.id] = true;
        alias[nd.id] = producer.id;
    }
    detail::compact(g, removed, alias);
    rep.nodes_after = g.nodes.size();
    rep.bytes_after = weight_bytes(g);
    return rep;
}

// Absorbs relu6 into the epilogue of its producing conv where safe.
inline PassReport fuse_activation(Graph& g) {
    PassReport rep{"fuse_activation", g.nodes.size(), 0, weight_bytes(g), 0, {}};
    auto consumers = detail::consumer_counts(g);
    std::vector<bool> removed(g.nodes.size(), false);
    std::vector<int> alias(g.nodes.size(), -1);

    for (Node& nd : g.nodes) {
        if (nd.kind != OpKind::Relu6) continue;
        Node& producer = g.nodes[nd.inputs[0]];
        if (producer.kind != OpKind::Conv || producer.fused_relu6 ||
            consumers[producer.id] != 1)
            continue;
        producer.fused_relu6 = true;
        removed[nd.id] = true;
        alias[nd.id] = producer.id;
    }
    detail::compact(g, removed, alias);
    rep.nodes_after = g.nodes.size();
    rep.bytes_after = weight_bytes(g);
    return rep;
}

// Removes nodes unreachable from the outputs and identity resizes.
inline PassReport eliminate_dead(Graph& g) {
    PassReport rep{"eliminate_dead", g.nodes.size(), 0, weight_bytes(g), 0, {}};
    std::vector<bool> removed(g.nodes.size(), false);
    std::vector<int> alias(g.nodes.size(), -1);

    auto shapes = infer_shapes(g, g.input_dims);
    for (Node& nd : g.nodes) {
        if (nd.kind != OpKind::Resize) continue;
        Dims4 in = shapes[nd.inputs[0]];
        if (in.h == nd.target_h && in.w == nd.target_w) {
            removed[nd.id] = true;
            alias[nd.id] = nd.inputs[0];
        }
    }

    std::vector<bool> live(g.nodes.size(), false);
    auto resolve = [&](int id) {
        while (removed[id]) id = alias[id];
        return id;
    };
    std::vector<int> stack;
    for (int out : g.outputs) stack.push_back(resolve(out));
    while (!stack.empty()) {
        int id = stack.back();
        stack.pop_back();
        if (live[id]) continue;
        live[id] = true;
        for (int in : g.nodes[id].inputs) stack.push_back(resolve(in));
    }
    for (const Node& nd : g.nodes)
        if (!live[nd.id] && !removed[nd.id]) {
            removed[nd.id] = true;
            alias[nd.id] = nd.inputs.empty() ? nd.id : nd.inputs[0];
        }

    detail::compact(g, removed, alias);
    detail::drop_unreferenced_weights(g);
    rep.nodes_after = g.nodes.size();
    rep.bytes_after = weight_bytes(g);
    return rep;
}

// Full pipeline; reports only the passes that changed something.
inline std::vector<PassReport> optimize(Graph& g) {
    std::vector<PassReport> reports;
    for (PassReport rep : {fold_bn(g), fuse_activation(g), eliminate_dead(g)})
        if (rep.changed()) reports.push_back(std::move(rep));
    return reports;
}

inline bool structurally_equal(const Graph& a, const Graph& b) {
    if (a.nodes.size() != b.nodes.size() || a.outputs != b.outputs) return false;
    for (std::size_t i = 0; i < a.nodes.size(); ++i) {
        const Node& x = a.nodes[i];
        const Node& y = b.nodes[i];
        if (x.kind != y.kind || x.inputs != y.inputs ||
            x.weight_name != y.weight_name || x.bias_name != y.bias_name ||
            x.scale_name != y.scale_name || x.bn_prefix != y.bn_prefix ||
            x.fused_relu6 != y.fused_relu6 ||
            x.target_h != y.target_h || x.target_w != y.target_w)
            return false;
    }
    if (a.weights.size() != b.weights.size()) return false;
    auto it = b.weights.begin();
    for (const auto& [name, t] : a.weights) {
        if (name != it->first || !t.same_dims(it->second)) return false;
        ++it;
    }
    return true;
}

}  // namespace cmsnet
