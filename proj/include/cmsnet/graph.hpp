#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "cmsnet/ops.hpp"

namespace cmsnet {

enum class OpKind { Input, Conv, BatchNorm, Relu6, AvgPool, Resize, Concat, Add };

inline const char* op_kind_name(OpKind k) {
    switch (k) {
        case OpKind::Input: return "input";
        case OpKind::Conv: return "conv";
        case OpKind::BatchNorm: return "batch_norm";
        case OpKind::Relu6: return "relu6";
        case OpKind::AvgPool: return "avg_pool";
        case OpKind::Resize: return "resize";
        case OpKind::Concat: return "concat";
        case OpKind::Add: return "add";
    }
    return "?";
}

struct Node {
    int id = -1;
    OpKind kind = OpKind::Input;
    std::vector<int> inputs;

    // Conv attrs. scale_name points at a per-channel epilogue scale left
    // behind by batch-norm folding (empty on freshly built graphs).
    ConvSpec conv;
    std::string weight_name, bias_name, scale_name;
    bool fused_relu6 = false;

    // BatchNorm attrs; parameters live in the weights map under
    // bn_prefix + {".gamma",".beta",".mean",".var"}.
    std::string bn_prefix;
    float bn_eps = 1e-3f;

    // AvgPool (adaptive target) / Resize output dims
    int target_h = 0, target_w = 0;
};

struct Dims4 {
    int n = 0, h = 0, w = 0, c = 0;
    bool operator==(const Dims4&) const = default;
};

struct Graph {
    std::vector<Node> nodes;  // topological order: inputs precede consumers
    std::map<std::string, Tensor> weights;
    std::vector<int> outputs;
    Dims4 input_dims;  // dims the graph was built for (n is per-call)

    int add_node(Node nd) {
        nd.id = static_cast<int>(nodes.size());
        for (int in : nd.inputs)
            if (in < 0 || in >= nd.id)
                throw internal_error("graph node input out of order");
        nodes.push_back(std::move(nd));
        return nodes.back().id;
    }

    const Tensor& weight(const std::string& name) const {
        auto it = weights.find(name);
        if (it == weights.end())
            throw internal_error("missing weight: " + name);
        return it->second;
    }
    Tensor& weight(const std::string& name) {
        auto it = weights.find(name);
        if (it == weights.end())
            throw internal_error("missing weight: " + name);
        return it->second;
    }

    BatchNormParams bn_params(const Node& nd) const {
        BatchNormParams p;
        auto vec = [&](const char* suffix) {
            const Tensor& t = weight(nd.bn_prefix + suffix);
            return std::vector<float>(t.data.begin(), t.data.end());
        };
        p.gamma = vec(".gamma");
        p.beta = vec(".beta");
        p.running_mean = vec(".mean");
        p.running_var = vec(".var");
        p.epsilon = nd.bn_eps;
        return p;
    }

    void store_bn_params(const Node& nd, const BatchNormParams& p) {
        auto put = [&](const char* suffix, const std::vector<float>& v) {
            Tensor& t = weight(nd.bn_prefix + suffix);
            std::copy(v.begin(), v.end(), t.data.begin());
        };
        put(".gamma", p.gamma);
        put(".beta", p.beta);
        put(".mean", p.running_mean);
        put(".var", p.running_var);
    }
};

inline std::size_t count_params(const Graph& g) {
    std::size_t total = 0;
    for (const auto& [name, t] : g.weights) total += t.size();
    return total;
}

// ---------------------------------------------------------------------------
// Static shape propagation (SAME/ceil rule)

inline std::vector<Dims4> infer_shapes(const Graph& g, Dims4 input) {
    std::vector<Dims4> shapes(g.nodes.size());
    for (const Node& nd : g.nodes) {
        switch (nd.kind) {
            case OpKind::Input:
                shapes[nd.id] = input;
                break;
            case OpKind::Conv: {
                Dims4 in = shapes[nd.inputs.at(0)];
                nd.conv.validate(in.c);
                shapes[nd.id] = {in.n, ceil_div(in.h, nd.conv.stride),
                                 ceil_div(in.w, nd.conv.stride), nd.conv.out_channels};
                break;
            }
            case OpKind::BatchNorm:
            case OpKind::Relu6:
                shapes[nd.id] = shapes[nd.inputs.at(0)];
                break;
            case OpKind::AvgPool: {
                Dims4 in = shapes[nd.inputs.at(0)];
                shapes[nd.id] = {in.n, nd.target_h, nd.target_w, in.c};
                break;
            }
            case OpKind::Resize: {
                Dims4 in = shapes[nd.inputs.at(0)];
                shapes[nd.id] = {in.n, nd.target_h, nd.target_w, in.c};
                break;
            }
            case OpKind::Concat: {
                Dims4 first = shapes[nd.inputs.at(0)];
                int total_c = 0;
                for (int in_id : nd.inputs) {
                    Dims4 d = shapes[in_id];
                    if (d.n != first.n || d.h != first.h || d.w != first.w)
                        throw config_error("infer_shapes: concat spatial mismatch");
                    total_c += d.c;
                }
                shapes[nd.id] = {first.n, first.h, first.w, total_c};
                break;
            }
            case OpKind::Add: {
                Dims4 a = shapes[nd.inputs.at(0)];
                Dims4 b = shapes[nd.inputs.at(1)];
                if (!(a == b)) throw config_error("infer_shapes: add dims mismatch");
                shapes[nd.id] = a;
                break;
            }
        }
    }
    return shapes;
}

// ---------------------------------------------------------------------------
// Interpreter

struct Execution {
    std::vector<Tensor> values;           // per node output
    std::vector<BNCache> bn_caches;       // per node, training mode only
    bool training = false;
};

inline void execute(Graph& g, const Tensor& input, Execution& ex) {
    ex.values.assign(g.nodes.size(), Tensor());
    if (ex.training) ex.bn_caches.assign(g.nodes.size(), BNCache());
    for (Node& nd : g.nodes) {
        switch (nd.kind) {
            case OpKind::Input:
                ex.values[nd.id] = input;
                break;
            case OpKind::Conv: {
                const Tensor& in = ex.values[nd.inputs[0]];
                const Tensor& w = g.weight(nd.weight_name);
                std::span<const float> bias, scale;
                if (!nd.bias_name.empty()) {
                    const Tensor& b = g.weight(nd.bias_name);
                    bias = std::span<const float>(b.data.data(), b.data.size());
                }
                if (!nd.scale_name.empty()) {
                    const Tensor& s = g.weight(nd.scale_name);
                    scale = std::span<const float>(s.data.data(), s.data.size());
                }
                ex.values[nd.id] =
                    conv2d(in, w, bias, nd.conv, nd.fused_relu6, scale);
                break;
            }
            case OpKind::BatchNorm: {
                BatchNormParams p = g.bn_params(nd);
                BNCache* cache = ex.training ? &ex.bn_caches[nd.id] : nullptr;
                ex.values[nd.id] =
                    batch_norm(ex.values[nd.inputs[0]], p, ex.training, cache);
                if (ex.training) g.store_bn_params(nd, p);
                break;
            }
            case OpKind::Relu6:
                ex.values[nd.id] = relu6(ex.values[nd.inputs[0]]);
                break;
            case OpKind::AvgPool:
                ex.values[nd.id] =
                    adaptive_avg_pool(ex.values[nd.inputs[0]], nd.target_h, nd.target_w);
                break;
            case OpKind::Resize:
                ex.values[nd.id] =
                    bilinear_resize(ex.values[nd.inputs[0]], nd.target_h, nd.target_w);
                break;
            case OpKind::Concat: {
                std::vector<const Tensor*> parts;
                parts.reserve(nd.inputs.size());
                for (int in_id : nd.inputs) parts.push_back(&ex.values[in_id]);
                ex.values[nd.id] = concat_channels(
                    std::span<const Tensor* const>(parts.data(), parts.size()));
                break;
            }
            case OpKind::Add:
                ex.values[nd.id] =
                    add(ex.values[nd.inputs[0]], ex.values[nd.inputs[1]]);
                break;
        }
    }
}

inline Tensor forward(Graph& g, const Tensor& input) {
    Execution ex;
    execute(g, input, ex);
    if (g.outputs.empty()) throw internal_error("graph has no outputs");
    return ex.values[g.outputs[0]];
}

// Per-pixel argmax of the logits; ties break toward the lowest class id.
inline std::vector<std::int32_t> predict_from_logits(const Tensor& logits) {
    const std::size_t pixels =
        static_cast<std::size_t>(logits.n) * logits.h * logits.w;
    std::vector<std::int32_t> mask(pixels);
    for (std::size_t p = 0; p < pixels; ++p) {
        const float* row = logits.data.data() + p * logits.c;
        int best = 0;
        for (int c = 1; c < logits.c; ++c)
            if (row[c] > row[best]) best = c;
        mask[p] = best;
    }
    return mask;
}

inline std::vector<std::int32_t> predict(Graph& g, const Tensor& input) {
    return predict_from_logits(forward(g, input));
}

// ---------------------------------------------------------------------------
// Backward pass; accumulates weight gradients into `weight_grads`.

inline void backward(Graph& g, Execution& ex, const Tensor& grad_output,
                     std::map<std::string, Tensor>& weight_grads) {
    std::vector<Tensor> grads(g.nodes.size());
    auto accum = [](Tensor& dst, const Tensor& src) {
        if (dst.size() == 0) {
            dst = src;
            return;
        }
        for (std::size_t i = 0; i < dst.data.size(); ++i)
            dst.data[i] += src.data[i];
    };
    auto wgrad = [&](const std::string& name) -> Tensor& {
        auto it = weight_grads.find(name);
        if (it == weight_grads.end()) {
            const Tensor& w = g.weight(name);
            it = weight_grads.emplace(name, Tensor(w.n, w.h, w.w, w.c)).first;
        }
        return it->second;
    };

    grads[g.outputs[0]] = grad_output;
    for (auto it = g.nodes.rbegin(); it != g.nodes.rend(); ++it) {
        const Node& nd = *it;
        Tensor& go = grads[nd.id];
        if (go.size() == 0) continue;  // node not on the loss path
        switch (nd.kind) {
            case OpKind::Input:
                break;
            case OpKind::Conv: {
                if (nd.fused_relu6 || !nd.scale_name.empty())
                    throw internal_error("backward through fused conv unsupported");
                const Tensor& in = ex.values[nd.inputs[0]];
                const Tensor& w = g.weight(nd.weight_name);
                ConvGrads cg = conv2d_backward(go, in, w, nd.conv);
                accum(grads[nd.inputs[0]], cg.grad_input);
                Tensor& gw = wgrad(nd.weight_name);
                for (std::size_t i = 0; i < gw.data.size(); ++i)
                    gw.data[i] += cg.grad_weights.data[i];
                if (!nd.bias_name.empty()) {
                    Tensor& gb = wgrad(nd.bias_name);
                    for (std::size_t i = 0; i < gb.data.size(); ++i)
                        gb.data[i] += cg.grad_bias[i];
                }
                break;
            }
            case OpKind::BatchNorm: {
                BatchNormParams p = g.bn_params(nd);
                if (ex.training) {
                    BNGrads bg = batch_norm_backward(go, ex.values[nd.inputs[0]], p,
                                                     ex.bn_caches[nd.id]);
                    accum(grads[nd.inputs[0]], bg.grad_input);
                    Tensor& gg = wgrad(nd.bn_prefix + ".gamma");
                    Tensor& gb = wgrad(nd.bn_prefix + ".beta");
                    for (std::size_t i = 0; i < gg.data.size(); ++i) {
                        gg.data[i] += bg.grad_gamma[i];
                        gb.data[i] += bg.grad_beta[i];
                    }
                } else {
                    accum(grads[nd.inputs[0]], batch_norm_backward_inference(go, p));
                }
                break;
            }
            case OpKind::Relu6:
                accum(grads[nd.inputs[0]],
                      relu6_backward(go, ex.values[nd.inputs[0]]));
                break;
            case OpKind::AvgPool: {
                const Tensor& in = ex.values[nd.inputs[0]];
                accum(grads[nd.inputs[0]],
                      adaptive_avg_pool_backward(go, in.h, in.w));
                break;
            }
            case OpKind::Resize: {
                const Tensor& in = ex.values[nd.inputs[0]];
                accum(grads[nd.inputs[0]],
                      bilinear_resize_backward(go, in.h, in.w));
                break;
            }
            case OpKind::Concat: {
                std::vector<int> counts;
                counts.reserve(nd.inputs.size());
                for (int in_id : nd.inputs) counts.push_back(ex.values[in_id].c);
                auto split = concat_channels_backward(go, counts);
                for (std::size_t i = 0; i < nd.inputs.size(); ++i)
                    accum(grads[nd.inputs[i]], split[i]);
                break;
            }
            case OpKind::Add:
                accum(grads[nd.inputs[0]], go);
                accum(grads[nd.inputs[1]], go);
                break;
        }
        if (nd.kind != OpKind::Input) go = Tensor();  // free as we go
    }
}

// ---------------------------------------------------------------------------
// Weights file: magic "CMSW", u32 version=1, u32 count; per tensor
// u16 name length, name bytes, u8 rank, rank x u32 dims, raw f32 data.

inline void save_weights(const Graph& g, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw data_error("cannot open for writing: " + path);
    os.write("CMSW", 4);
    std::uint32_t version = 1;
    os.write(reinterpret_cast<const char*>(&version), 4);
    std::uint32_t count = static_cast<std::uint32_t>(g.weights.size());
    os.write(reinterpret_cast<const char*>(&count), 4);
    for (const auto& [name, t] : g.weights) {
        std::uint16_t len = static_cast<std::uint16_t>(name.size());
        os.write(reinterpret_cast<const char*>(&len), 2);
        os.write(name.data(), len);
        std::uint8_t rank = 4;
        os.write(reinterpret_cast<const char*>(&rank), 1);
        std::uint32_t d[4] = {static_cast<std::uint32_t>(t.n), static_cast<std::uint32_t>(t.h),
                              static_cast<std::uint32_t>(t.w), static_cast<std::uint32_t>(t.c)};
        os.write(reinterpret_cast<const char*>(d), 16);
        os.write(reinterpret_cast<const char*>(t.data.data()),
                 static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    }
}

inline std::map<std::string, Tensor> load_weights(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw data_error("cannot open weights file: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "CMSW", 4) != 0)
        throw data_error("bad weights magic (expected CMSW): " + path);
    std::uint32_t version = 0, count = 0;
    is.read(reinterpret_cast<char*>(&version), 4);
    is.read(reinterpret_cast<char*>(&count), 4);
    if (version != 1) throw data_error("unsupported weights version");
    std::map<std::string, Tensor> weights;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint16_t len = 0;
        is.read(reinterpret_cast<char*>(&len), 2);
        std::string name(len, '\0');
        is.read(name.data(), len);
        std::uint8_t rank = 0;
        is.read(reinterpret_cast<char*>(&rank), 1);
        std::vector<std::uint32_t> dims(rank, 1);
        is.read(reinterpret_cast<char*>(dims.data()), rank * 4);
        // ranks below 4 are padded with leading singleton dims
        std::uint32_t d[4] = {1, 1, 1, 1};
        for (int j = 0; j < rank && j < 4; ++j) d[4 - rank + j] = dims[j];
        Tensor t(static_cast<int>(d[0]), static_cast<int>(d[1]),
                 static_cast<int>(d[2]), static_cast<int>(d[3]));
        is.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        if (!is) throw data_error("truncated weights file: " + path);
        weights.emplace(std::move(name), std::move(t));
    }
    return weights;
}

}  // namespace cmsnet
