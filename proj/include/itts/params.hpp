#pragma once

// Named parameter tensors with paired gradient buffers, Adam, the
// finite-difference gradient checker, and the versioned checkpoint format.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "itts/autograd.hpp"
#include "itts/common.hpp"
#include "itts/tensor.hpp"

namespace itts {

struct ParamEntry {
    Tensor value;
    Tensor grad;
    bool trainable = true;
    bool grad_populated = false;
};

class ParameterStore {
public:
    void add(const std::string& name, Tensor value, bool trainable = true) {
        if (entries_.count(name)) throw ConfigError("duplicate parameter " + name);
        ParamEntry e;
        e.grad = Tensor(value.shape());
        e.value = std::move(value);
        e.trainable = trainable;
        entries_.emplace(name, std::move(e));
    }

    bool has(const std::string& name) const { return entries_.count(name) != 0; }

    ParamEntry& entry(const std::string& name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ConfigError("unknown parameter " + name);
        return it->second;
    }
    const ParamEntry& entry(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ConfigError("unknown parameter " + name);
        return it->second;
    }

    Tensor& value(const std::string& name) { return entry(name).value; }
    const Tensor& value(const std::string& name) const { return entry(name).value; }

    void set_trainable(const std::string& name, bool t) { entry(name).trainable = t; }

    void zero_grads() {
        for (auto& [name, e] : entries_) {
            e.grad.fill(0.0);
            e.grad_populated = false;
        }
    }

    void accumulate_grad(const std::string& name, const Tensor& g) {
        ParamEntry& e = entry(name);
        require_same_shape(e.value, g, name.c_str(), "gradient");
        add_inplace(e.grad, g);
        e.grad_populated = true;
    }

    /// std::map keeps iteration order stable, which keeps updates deterministic.
    const std::map<std::string, ParamEntry>& entries() const { return entries_; }
    std::map<std::string, ParamEntry>& entries() { return entries_; }

    std::size_t total_parameters(bool trainable_only = false) const {
        std::size_t n = 0;
        for (const auto& [name, e] : entries_)
            if (!trainable_only || e.trainable) n += e.value.size();
        return n;
    }

private:
    std::map<std::string, ParamEntry> entries_;
};

// ----------------------------- initialization -----------------------------

/// Dense layers: uniform +-sqrt(6/(fan_in+fan_out)).
inline Tensor glorot_init(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t(fan_in, fan_out);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

/// Recurrent weights: uniform +-0.08.
inline Tensor recurrent_init(Rng& rng, std::size_t rows, std::size_t cols) {
    Tensor t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-0.08, 0.08);
    return t;
}

inline Tensor uniform_init(Rng& rng, std::size_t rows, std::size_t cols, double bound) {
    Tensor t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

// ----------------------------- graph binding -----------------------------

/// Per-forward-pass view of a ParameterStore. Binding the same name twice
/// returns the same leaf, so gradients from repeated use accumulate on one
/// node before being flushed back into the store.
class ModelGraph {
public:
    explicit ModelGraph(ParameterStore& store) : store_(&store) {}

    Var p(const std::string& name) {
        auto it = bound_.find(name);
        if (it != bound_.end()) return it->second;
        ParamEntry& e = store_->entry(name);
        Var v = leaf(e.value, e.trainable);
        bound_.emplace(name, v);
        return v;
    }

    /// Backward from a scalar loss, then flush leaf gradients into the store.
    /// Marks every trainable entry populated: a full model step has run.
    void backward_and_accumulate(const Var& loss) {
        backward(loss);
        for (auto& [name, var] : bound_) {
            ParamEntry& e = store_->entry(name);
            if (e.trainable && var->grad.size() == var->value.size()) add_inplace(e.grad, var->grad);
        }
        for (auto& [name, e] : store_->entries())
            if (e.trainable) e.grad_populated = true;
    }

private:
    ParameterStore* store_;
    std::map<std::string, Var> bound_;
};

/// Uniform way for forward builders to obtain parameter nodes, whether bound
/// to a store for training or frozen as constants for inference.
using ParamBinder = std::function<Var(const std::string&)>;

inline ParamBinder graph_binder(ModelGraph& g) {
    return [&g](const std::string& name) { return g.p(name); };
}

/// Constant leaves copied out of a store once; reuse across many inference
/// calls so parameter copying does not pollute latency measurements.
class ConstBinding {
public:
    explicit ConstBinding(const ParameterStore& store) {
        for (const auto& [name, e] : store.entries()) vars_.emplace(name, leaf(e.value, false));
    }

    ParamBinder binder() const {
        return [this](const std::string& name) {
            auto it = vars_.find(name);
            if (it == vars_.end()) throw ConfigError("unknown parameter " + name);
            return it->second;
        };
    }

private:
    std::map<std::string, Var> vars_;
};

// ----------------------------- Adam -----------------------------

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-6;
    long step = 0;
    std::map<std::string, std::pair<Tensor, Tensor>> moments;  // first, second
};

/// Bias-corrected Adam over all trainable entries; frozen entries untouched.
inline void adam_step(ParameterStore& store, AdamState& state) {
    for (const auto& [name, e] : store.entries())
        if (e.trainable && !e.grad_populated)
            throw TrainingError("incomplete backward: no gradient for " + name);

    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (auto& [name, e] : store.entries()) {
        if (!e.trainable) continue;
        auto it = state.moments.find(name);
        if (it == state.moments.end())
            it = state.moments.emplace(name, std::make_pair(Tensor(e.value.shape()), Tensor(e.value.shape()))).first;
        Tensor& m = it->second.first;
        Tensor& v = it->second.second;
        require_same_shape(m, e.value, name.c_str(), "adam moment");
        for (std::size_t i = 0; i < e.value.size(); ++i) {
            const double g = e.grad[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            e.value[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

// ----------------------------- gradient checking -----------------------------

struct GradCheckOptions {
    double step = 1e-5;                    // central-difference half step
    std::size_t max_coords_per_param = 24;  // deterministic strided subset for big tensors
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t coords_checked = 0;
};

/// Compares analytic gradients of `build` (a closure assembling a scalar loss
/// from store parameters) against central finite differences. Report-only.
inline GradCheckReport grad_check(ParameterStore& store, const std::function<Var(ModelGraph&)>& build,
                                  const GradCheckOptions& opt = {}) {
    store.zero_grads();
    {
        ModelGraph g(store);
        Var loss = build(g);
        g.backward_and_accumulate(loss);
    }
    std::map<std::string, Tensor> analytic;
    for (const auto& [name, e] : store.entries())
        if (e.trainable) analytic.emplace(name, e.grad);

    auto eval = [&]() {
        ModelGraph g(store);
        return build(g)->value[0];
    };

    GradCheckReport report;
    for (auto& [name, e] : store.entries()) {
        if (!e.trainable) continue;
        const Tensor& a = analytic.at(name);
        const std::size_t n = e.value.size();
        const std::size_t stride = n <= opt.max_coords_per_param ? 1 : n / opt.max_coords_per_param;
        for (std::size_t i = 0; i < n; i += stride) {
            const double saved = e.value[i];
            e.value[i] = saved + opt.step;
            const double up = eval();
            e.value[i] = saved - opt.step;
            const double down = eval();
            e.value[i] = saved;
            const double numeric = (up - down) / (2.0 * opt.step);
            const double denom = std::max({1.0, std::abs(a[i]), std::abs(numeric)});
            const double err = std::abs(a[i] - numeric) / denom;
            ++report.coords_checked;
            if (err > report.max_rel_err) {
                report.max_rel_err = err;
                report.worst_param = name;
            }
        }
    }
    return report;
}

// ----------------------------- checkpoints -----------------------------

// Binary layout, version 1 (all integers little-endian):
//   "ITTSCKPT" | u32 version | u32 meta_count | {u32 klen, key, u32 vlen, val}*
//   | u32 param_count | {u32 nlen, name, u8 trainable, u32 ndim, u64 dims[], f64 data[]}*
// Doubles are written raw, so save/load round-trips are bit-exact.

namespace detail {

template <typename T>
void write_raw(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("truncated checkpoint");
    return v;
}

inline void write_str(std::ostream& os, const std::string& s) {
    write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_str(std::istream& is) {
    const auto n = read_raw<std::uint32_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw IoError("truncated checkpoint string");
    return s;
}

}  // namespace detail

inline void save_checkpoint(const ParameterStore& store, const std::filesystem::path& path,
                            const std::map<std::string, std::string>& metadata = {}) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint " + path.string());
    os.write("ITTSCKPT", 8);
    detail::write_raw<std::uint32_t>(os, 1u);
    detail::write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(metadata.size()));
    for (const auto& [k, v] : metadata) {
        detail::write_str(os, k);
        detail::write_str(os, v);
    }
    detail::write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(store.entries().size()));
    for (const auto& [name, e] : store.entries()) {
        detail::write_str(os, name);
        detail::write_raw<std::uint8_t>(os, e.trainable ? 1 : 0);
        detail::write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(e.value.shape().size()));
        for (std::size_t d : e.value.shape()) detail::write_raw<std::uint64_t>(os, d);
        os.write(reinterpret_cast<const char*>(e.value.data()),
                 static_cast<std::streamsize>(e.value.size() * sizeof(double)));
    }
    if (!os) throw IoError("failed writing checkpoint " + path.string());
}

struct Checkpoint {
    ParameterStore store;
    std::map<std::string, std::string> metadata;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path.string());
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, "ITTSCKPT", 8) != 0)
        throw IoError("bad checkpoint magic in " + path.string());
    const auto version = detail::read_raw<std::uint32_t>(is);
    if (version != 1u) throw IoError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ck;
    const auto meta_count = detail::read_raw<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < meta_count; ++i) {
        std::string k = detail::read_str(is);
        std::string v = detail::read_str(is);
        ck.metadata.emplace(std::move(k), std::move(v));
    }
    const auto param_count = detail::read_raw<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < param_count; ++i) {
        std::string name = detail::read_str(is);
        const bool trainable = detail::read_raw<std::uint8_t>(is) != 0;
        const auto ndim = detail::read_raw<std::uint32_t>(is);
        std::vector<std::size_t> shape(ndim);
        for (auto& d : shape) d = static_cast<std::size_t>(detail::read_raw<std::uint64_t>(is));
        Tensor t(shape);
        is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!is) throw IoError("truncated checkpoint data in " + path.string());
        ck.store.add(name, std::move(t), trainable);
    }
    return ck;
}

inline std::uint64_t file_hash(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot hash missing file " + path.string());
    std::uint64_t h = 1469598103934665603ull;
    char buf[4096];
    while (is.read(buf, sizeof(buf)) || is.gcount() > 0)
        h = fnv1a64_bytes(buf, static_cast<std::size_t>(is.gcount()), h);
    return h;
}

}  // namespace itts
