#ifndef XMM_STORE_HPP
#define XMM_STORE_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xmm/tensor.hpp"

namespace xmm {

enum class GroupKind {
    CORE_TRANSFORMER,
    TEXT_EMBEDDING,
    LANGUAGE_ADAPTER,
    TASK_ADAPTER_TEXT,
    TASK_ADAPTER_IMAGE,
    ALIGNMENT_ADAPTER,
    IMAGE_PROJECTION,
    PREDICTION_HEAD,
    MLM_HEAD,
};

std::string group_kind_name(GroupKind kind);
GroupKind group_kind_from_name(const std::string& name);

// Group tag for a named parameter. The language code is present exactly for
// the per-language groups (embeddings and language adapters).
struct ParameterGroupTag {
    GroupKind kind;
    std::optional<std::string> language;

    ParameterGroupTag(GroupKind k, std::optional<std::string> lang = std::nullopt);

    bool operator==(const ParameterGroupTag& other) const {
        return kind == other.kind && language == other.language;
    }
};

struct ParameterEntry {
    Tensor tensor;
    ParameterGroupTag group;
    bool trainable = false;
};

// Named, group-tagged, freeze-maskable model parameters. Iteration order is
// name order, so enumeration and serialization are deterministic.
class ParameterStore {
public:
    void add(const std::string& name, Tensor tensor, ParameterGroupTag group, bool trainable);
    bool contains(const std::string& name) const { return entries_.count(name) > 0; }
    ParameterEntry& at(const std::string& name);
    const ParameterEntry& at(const std::string& name) const;
    Tensor tensor(const std::string& name) const { return at(name).tensor; }

    // Replaces the tensor value of an existing entry (shape may change) and
    // optionally retags its language. Used by language hot-swap.
    void replace_values(const std::string& name, const Tensor& source,
                        std::optional<std::string> new_language = std::nullopt);

    std::size_t size() const { return entries_.size(); }
    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    std::vector<std::string> names() const;
    std::vector<std::string> trainable_names() const;
    std::vector<std::string> names_matching(const std::function<bool(const ParameterGroupTag&)>& pred) const;

    // Deep copy: tensors cloned, flags preserved.
    ParameterStore clone() const;

    // Language whose parameters currently occupy the active slots.
    const std::string& active_language() const { return active_language_; }
    void set_active_language(std::string lang) { active_language_ = std::move(lang); }

    // Languages that have an archived group of the given kind.
    std::vector<std::string> archived_languages(GroupKind kind) const;

private:
    std::map<std::string, ParameterEntry> entries_;
    std::string active_language_;
};

// Sets trainable (and requires_grad) for every entry whose tag matches the
// predicate; returns the number of affected parameters.
std::size_t set_trainable(ParameterStore& store,
                          const std::function<bool(const ParameterGroupTag&)>& selector, bool flag);

// Byte-level comparison helpers used by freeze/swap tests and phases.
std::string store_fingerprint(const ParameterStore& store);
std::vector<std::string> names_with_different_bytes(const ParameterStore& before,
                                                    const ParameterStore& after);

// ---- checkpoint I/O ---------------------------------------------------------
// A checkpoint directory holds manifest.json plus one binary file per
// parameter: 8-byte magic "XMMTENSR", u32 rank, u64 dims, then little-endian
// 8-byte floats in row-major order.

inline constexpr char kTensorMagic[8] = {'X', 'M', 'M', 'T', 'E', 'N', 'S', 'R'};

void write_tensor_file(const std::string& path, const Tensor& t);
Tensor read_tensor_file(const std::string& path);

void save_store(const ParameterStore& store, const std::string& dir,
                const std::string& model_config_json, const std::map<std::string, std::string>& extra_files = {});
// Returns the store plus the model config JSON text stored in the manifest.
std::pair<ParameterStore, std::string> load_store(const std::string& dir);

}  // namespace xmm

#endif
