#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "oad/model_spec.hpp"
#include "oad/tensor.hpp"

namespace oad {

struct ParamDef {
    std::string name;
    Shape shape;
    bool is_bias = false;
};

// The full parameter inventory of a model, in canonical (definition) order.
// Pure function of the model spec.
std::vector<ParamDef> param_defs(const ModelSpec& spec);

// Named trainable tensors with per-parameter momentum, kept in definition
// order for deterministic iteration and serialization.
template <class S>
class ParamStore {
  public:
    Storage<S>& define(const ParamDef& def) {
        if (index_.count(def.name)) throw ContractError("duplicate parameter '" + def.name + "'");
        entries_.push_back(std::make_unique<Storage<S>>(def.name, def.shape, def.is_bias));
        index_.emplace(def.name, entries_.size() - 1);
        return *entries_.back();
    }

    Storage<S>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
        return *entries_[it->second];
    }
    const Storage<S>& at(const std::string& name) const {
        return const_cast<ParamStore*>(this)->at(name);
    }
    bool has(const std::string& name) const { return index_.count(name) != 0; }

    std::vector<Storage<S>*> entries() {
        std::vector<Storage<S>*> out;
        out.reserve(entries_.size());
        for (auto& e : entries_) out.push_back(e.get());
        return out;
    }
    std::vector<const Storage<S>*> entries() const {
        std::vector<const Storage<S>*> out;
        out.reserve(entries_.size());
        for (auto& e : entries_) out.push_back(e.get());
        return out;
    }

    std::size_t size() const { return entries_.size(); }

    std::size_t total_values() const {
        std::size_t n = 0;
        for (auto& e : entries_) n += e->numel();
        return n;
    }

    void zero_all_grads() {
        for (auto& e : entries_) e->zero_grad();
    }

  private:
    std::vector<std::unique_ptr<Storage<S>>> entries_;
    std::map<std::string, std::size_t> index_;
};

// Xavier-uniform weights, zero biases; per-name seeding makes the result
// independent of definition order.
template <class S>
ParamStore<S> init_params(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    ParamStore<S> store;
    for (const ParamDef& def : param_defs(spec)) {
        Storage<S>& st = store.define(def);
        if (def.is_bias) continue;
        const double fan_in = st.shape.at(0);
        const double fan_out = st.shape.size() > 1 ? st.shape.at(1) : 1;
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        Rng rng(derive_seed(seed, def.name));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& v : st.value) v = static_cast<S>(dist(rng));
    }
    return store;
}

// ---------------------------------------------------------------------------
// Checkpoint file: magic "OADP", u32 version, u64 spec fingerprint,
// u64 manifest id, u32 count, then per parameter: u32 name length, name
// bytes, u32 rank, u32 dims..., float64 little-endian values.
// ---------------------------------------------------------------------------

struct CheckpointParam {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

struct Checkpoint {
    std::uint32_t version = 1;
    std::uint64_t fingerprint = 0;
    std::uint64_t manifest_id = 0;
    std::vector<CheckpointParam> params;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);
void save_checkpoint_raw(const std::filesystem::path& path, const Checkpoint& ckpt);

template <class S>
void save_checkpoint(const std::filesystem::path& path, const ParamStore<S>& store,
                     std::uint64_t fingerprint, std::uint64_t manifest_id = 0) {
    Checkpoint ckpt;
    ckpt.fingerprint = fingerprint;
    ckpt.manifest_id = manifest_id;
    for (const Storage<S>* st : store.entries()) {
        CheckpointParam p;
        p.name = st->name;
        p.shape = st->shape;
        p.values.assign(st->value.begin(), st->value.end());
        ckpt.params.push_back(std::move(p));
    }
    save_checkpoint_raw(path, ckpt);
}

template <class S>
void apply_checkpoint(ParamStore<S>& store, const Checkpoint& ckpt, std::uint64_t expected_fingerprint) {
    if (ckpt.fingerprint != expected_fingerprint)
        throw ValidationError("checkpoint fingerprint " + hex64(ckpt.fingerprint) +
                              " does not match model spec fingerprint " + hex64(expected_fingerprint));
    if (ckpt.params.size() != store.size())
        throw ValidationError("checkpoint has " + std::to_string(ckpt.params.size()) + " parameters, model has " +
                              std::to_string(store.size()));
    for (const CheckpointParam& p : ckpt.params) {
        if (!store.has(p.name)) throw ValidationError("checkpoint parameter '" + p.name + "' unknown to model");
        Storage<S>& st = store.at(p.name);
        if (st.shape != p.shape)
            throw ValidationError("checkpoint parameter '" + p.name + "' shape " + shape_str(p.shape) +
                                  " does not match model shape " + shape_str(st.shape));
        for (std::size_t i = 0; i < st.value.size(); ++i) st.value[i] = static_cast<S>(p.values[i]);
    }
}

}  // namespace oad
