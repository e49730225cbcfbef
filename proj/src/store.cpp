#include "xmm/store.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>

#include <json.hpp>

#include "xmm/errors.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace xmm {

std::string group_kind_name(GroupKind kind) {
    switch (kind) {
        case GroupKind::CORE_TRANSFORMER: return "CORE_TRANSFORMER";
        case GroupKind::TEXT_EMBEDDING: return "TEXT_EMBEDDING";
        case GroupKind::LANGUAGE_ADAPTER: return "LANGUAGE_ADAPTER";
        case GroupKind::TASK_ADAPTER_TEXT: return "TASK_ADAPTER_TEXT";
        case GroupKind::TASK_ADAPTER_IMAGE: return "TASK_ADAPTER_IMAGE";
        case GroupKind::ALIGNMENT_ADAPTER: return "ALIGNMENT_ADAPTER";
        case GroupKind::IMAGE_PROJECTION: return "IMAGE_PROJECTION";
        case GroupKind::PREDICTION_HEAD: return "PREDICTION_HEAD";
        case GroupKind::MLM_HEAD: return "MLM_HEAD";
    }
    throw ContractError("unknown group kind");
}

GroupKind group_kind_from_name(const std::string& name) {
    static const std::map<std::string, GroupKind> table = {
        {"CORE_TRANSFORMER", GroupKind::CORE_TRANSFORMER},
        {"TEXT_EMBEDDING", GroupKind::TEXT_EMBEDDING},
        {"LANGUAGE_ADAPTER", GroupKind::LANGUAGE_ADAPTER},
        {"TASK_ADAPTER_TEXT", GroupKind::TASK_ADAPTER_TEXT},
        {"TASK_ADAPTER_IMAGE", GroupKind::TASK_ADAPTER_IMAGE},
        {"ALIGNMENT_ADAPTER", GroupKind::ALIGNMENT_ADAPTER},
        {"IMAGE_PROJECTION", GroupKind::IMAGE_PROJECTION},
        {"PREDICTION_HEAD", GroupKind::PREDICTION_HEAD},
        {"MLM_HEAD", GroupKind::MLM_HEAD},
    };
    auto it = table.find(name);
    if (it == table.end()) throw ParseError("unknown group kind '" + name + "'");
    return it->second;
}

ParameterGroupTag::ParameterGroupTag(GroupKind k, std::optional<std::string> lang)
    : kind(k), language(std::move(lang)) {
    const bool needs_lang = kind == GroupKind::TEXT_EMBEDDING || kind == GroupKind::LANGUAGE_ADAPTER;
    if (needs_lang && !language)
        throw ContractError("group " + group_kind_name(kind) + " requires a language code");
    if (!needs_lang && language)
        throw ContractError("group " + group_kind_name(kind) + " must not carry a language code");
}

void ParameterStore::add(const std::string& name, Tensor tensor, ParameterGroupTag group,
                         bool trainable) {
    if (entries_.count(name)) throw ContractError("parameter '" + name + "' already exists");
    tensor.set_requires_grad(trainable);
    entries_.emplace(name, ParameterEntry{std::move(tensor), std::move(group), trainable});
}

ParameterEntry& ParameterStore::at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("no parameter named '" + name + "'");
    return it->second;
}

const ParameterEntry& ParameterStore::at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("no parameter named '" + name + "'");
    return it->second;
}

void ParameterStore::replace_values(const std::string& name, const Tensor& source,
                                    std::optional<std::string> new_language) {
    auto& entry = at(name);
    entry.tensor.node().shape = source.shape();
    entry.tensor.node().values = source.values();
    entry.tensor.node().grad.clear();
    if (new_language) entry.group = ParameterGroupTag(entry.group.kind, std::move(new_language));
}

std::vector<std::string> ParameterStore::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, _] : entries_) out.push_back(name);
    return out;
}

std::vector<std::string> ParameterStore::trainable_names() const {
    std::vector<std::string> out;
    for (const auto& [name, entry] : entries_)
        if (entry.trainable) out.push_back(name);
    return out;
}

std::vector<std::string> ParameterStore::names_matching(
    const std::function<bool(const ParameterGroupTag&)>& pred) const {
    std::vector<std::string> out;
    for (const auto& [name, entry] : entries_)
        if (pred(entry.group)) out.push_back(name);
    return out;
}

ParameterStore ParameterStore::clone() const {
    ParameterStore copy;
    for (const auto& [name, entry] : entries_)
        copy.add(name, entry.tensor.clone(), entry.group, entry.trainable);
    copy.active_language_ = active_language_;
    return copy;
}

std::vector<std::string> ParameterStore::archived_languages(GroupKind kind) const {
    std::vector<std::string> out;
    for (const auto& [name, entry] : entries_) {
        if (entry.group.kind != kind || !entry.group.language) continue;
        const std::string& lang = *entry.group.language;
        if (name.find(".active.") != std::string::npos) continue;
        if (out.empty() || out.back() != lang) {
            if (std::find(out.begin(), out.end(), lang) == out.end()) out.push_back(lang);
        }
    }
    return out;
}

std::size_t set_trainable(ParameterStore& store,
                          const std::function<bool(const ParameterGroupTag&)>& selector, bool flag) {
    std::size_t count = 0;
    for (auto& [name, entry] : store) {
        if (!selector(entry.group)) continue;
        entry.trainable = flag;
        entry.tensor.set_requires_grad(flag);
        ++count;
    }
    return count;
}

std::string store_fingerprint(const ParameterStore& store) {
    // FNV-1a over names, tags and raw value bytes; order is name order.
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* data, std::size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= p[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& [name, entry] : store) {
        mix(name.data(), name.size());
        const std::string kind = group_kind_name(entry.group.kind);
        mix(kind.data(), kind.size());
        if (entry.group.language) mix(entry.group.language->data(), entry.group.language->size());
        mix(entry.tensor.values().data(), entry.tensor.values().size() * sizeof(double));
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

std::vector<std::string> names_with_different_bytes(const ParameterStore& before,
                                                    const ParameterStore& after) {
    std::vector<std::string> out;
    for (const auto& [name, entry] : before) {
        if (!after.contains(name)) {
            out.push_back(name);
            continue;
        }
        const auto& other = after.at(name);
        const auto& a = entry.tensor.values();
        const auto& b = other.tensor.values();
        if (entry.tensor.shape() != other.tensor.shape() ||
            std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) != 0)
            out.push_back(name);
    }
    for (const auto& [name, entry] : after)
        if (!before.contains(name)) out.push_back(name);
    return out;
}

// ---- checkpoint I/O ----------------------------------------------------------

namespace {

template <typename T>
void write_raw(std::ofstream& os, const T& value) {
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& is, const std::string& path) {
    T value;
    is.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!is) throw IoError("truncated tensor file " + path);
    return value;
}

}  // namespace

void write_tensor_file(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + path);
    os.write(kTensorMagic, sizeof(kTensorMagic));
    write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape().size()));
    for (std::size_t d : t.shape()) write_raw<std::uint64_t>(os, static_cast<std::uint64_t>(d));
    os.write(reinterpret_cast<const char*>(t.values().data()),
             static_cast<std::streamsize>(t.values().size() * sizeof(double)));
    if (!os) throw IoError("failed writing " + path);
}

Tensor read_tensor_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kTensorMagic, sizeof(magic)) != 0)
        throw ParseError("bad tensor magic in " + path);
    const auto rank = read_raw<std::uint32_t>(is, path);
    if (rank == 0 || rank > 2) throw ParseError("unsupported tensor rank in " + path);
    std::vector<std::size_t> shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
        d = static_cast<std::size_t>(read_raw<std::uint64_t>(is, path));
        numel *= d;
    }
    std::vector<double> values(numel);
    is.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(numel * sizeof(double)));
    if (!is) throw IoError("truncated tensor payload in " + path);
    return Tensor::from_values(std::move(shape), std::move(values));
}

void save_store(const ParameterStore& store, const std::string& dir,
                const std::string& model_config_json,
                const std::map<std::string, std::string>& extra_files) {
    fs::create_directories(dir);
    json manifest;
    manifest["format"] = "xmm-checkpoint-v1";
    manifest["model_config"] = json::parse(model_config_json);
    manifest["active_language"] = store.active_language();
    json entries = json::array();
    for (const auto& [name, entry] : store) {
        json e;
        e["name"] = name;
        e["shape"] = entry.tensor.shape();
        e["group"] = group_kind_name(entry.group.kind);
        if (entry.group.language) e["language"] = *entry.group.language;
        e["trainable"] = entry.trainable;
        entries.push_back(e);
        write_tensor_file((fs::path(dir) / (name + ".bin")).string(), entry.tensor);
    }
    manifest["entries"] = entries;
    json files = json::object();
    for (const auto& [key, path] : extra_files) files[key] = path;
    manifest["files"] = files;
    std::ofstream os(fs::path(dir) / "manifest.json");
    if (!os) throw IoError("cannot write manifest in " + dir);
    os << manifest.dump(2) << "\n";
}

std::pair<ParameterStore, std::string> load_store(const std::string& dir) {
    std::ifstream is(fs::path(dir) / "manifest.json");
    if (!is) throw IoError("cannot read manifest in " + dir);
    json manifest;
    try {
        is >> manifest;
    } catch (const json::exception& e) {
        throw ParseError(std::string("manifest.json: ") + e.what());
    }
    ParameterStore store;
    for (const auto& e : manifest.at("entries")) {
        const std::string name = e.at("name").get<std::string>();
        Tensor t = read_tensor_file((fs::path(dir) / (name + ".bin")).string());
        const auto expect = e.at("shape").get<std::vector<std::size_t>>();
        if (t.shape() != expect)
            throw ParseError("tensor " + name + " has shape " + shape_to_string(t.shape()) +
                             ", manifest says " + shape_to_string(expect));
        std::optional<std::string> lang;
        if (e.contains("language")) lang = e.at("language").get<std::string>();
        ParameterGroupTag tag(group_kind_from_name(e.at("group").get<std::string>()), lang);
        store.add(name, std::move(t), std::move(tag), e.at("trainable").get<bool>());
    }
    store.set_active_language(manifest.value("active_language", std::string()));
    return {std::move(store), manifest.at("model_config").dump()};
}

}  // namespace xmm
