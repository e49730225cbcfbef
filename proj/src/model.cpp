#include "xmm/model.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "xmm/errors.hpp"

using json = nlohmann::json;

namespace xmm {

namespace {
constexpr double kLayerNormEps = 1e-5;

// Xavier-style scale; Linear layers in a 64-dim model need a much larger
// init than the 0.02 used by full-scale BERT-family checkpoints.
double init_std(std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
}
}  // namespace

std::string arch_setting_name(ArchSetting s) {
    switch (s) {
        case ArchSetting::S1: return "S1";
        case ArchSetting::S2: return "S2";
        case ArchSetting::S3: return "S3";
        case ArchSetting::S4: return "S4";
        case ArchSetting::S5: return "S5";
    }
    throw ContractError("unknown arch setting");
}

ArchSetting arch_setting_from_name(const std::string& name) {
    if (name == "S1") return ArchSetting::S1;
    if (name == "S2") return ArchSetting::S2;
    if (name == "S3") return ArchSetting::S3;
    if (name == "S4") return ArchSetting::S4;
    if (name == "S5") return ArchSetting::S5;
    throw ParseError("unknown arch setting '" + name + "'");
}

std::string variant_name(ModelVariant v) {
    switch (v) {
        case ModelVariant::FULL_FT: return "FULL_FT";
        case ModelVariant::EMB_SWAP: return "EMB_SWAP";
        case ModelVariant::ADA_MONO: return "ADA_MONO";
        case ModelVariant::ADA_MULTI: return "ADA_MULTI";
    }
    throw ContractError("unknown model variant");
}

ModelVariant variant_from_name(const std::string& name) {
    if (name == "FULL_FT") return ModelVariant::FULL_FT;
    if (name == "EMB_SWAP") return ModelVariant::EMB_SWAP;
    if (name == "ADA_MONO") return ModelVariant::ADA_MONO;
    if (name == "ADA_MULTI") return ModelVariant::ADA_MULTI;
    throw ParseError("unknown model variant '" + name + "'");
}

bool variant_has_language_adapters(ModelVariant v) {
    return v == ModelVariant::ADA_MONO || v == ModelVariant::ADA_MULTI;
}

bool variant_has_per_language_embeddings(ModelVariant v) {
    return v == ModelVariant::EMB_SWAP || v == ModelVariant::ADA_MONO;
}

bool variant_has_task_adapters(ModelVariant v) {
    return v == ModelVariant::ADA_MONO || v == ModelVariant::ADA_MULTI;
}

void ModelConfig::validate() const {
    if (hidden == 0 || heads == 0 || hidden % heads != 0)
        throw ConfigError("hidden (" + std::to_string(hidden) + ") must be divisible by heads (" +
                          std::to_string(heads) + ")");
    if (adapter_reduction == 0 || hidden % adapter_reduction != 0)
        throw ConfigError("adapter_reduction must divide hidden");
    if (num_answers < 2) throw ConfigError("num_answers must be at least 2");
    if (box_dim != 6) throw ConfigError("box_dim must be 6");
    if (max_text_len < 3) throw ConfigError("max_text_len must be at least 3");
    if (num_layers == 0) throw ConfigError("num_layers must be positive");
    if (languages.empty()) throw ConfigError("languages must be non-empty");
    std::set<std::string> uniq(languages.begin(), languages.end());
    if (uniq.size() != languages.size()) throw ConfigError("languages contains duplicates");
}

std::string ModelConfig::to_json() const {
    json j;
    j["num_layers"] = num_layers;
    j["hidden"] = hidden;
    j["heads"] = heads;
    j["ffn_dim"] = ffn_dim;
    j["adapter_reduction"] = adapter_reduction;
    j["max_text_len"] = max_text_len;
    j["max_regions"] = max_regions;
    j["region_feature_dim"] = region_feature_dim;
    j["box_dim"] = box_dim;
    j["num_answers"] = num_answers;
    j["languages"] = languages;
    j["arch_setting"] = arch_setting_name(arch_setting);
    j["variant"] = variant_name(variant);
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("model config: ") + e.what());
    }
    static const std::set<std::string> known = {
        "num_layers", "hidden", "heads", "ffn_dim", "adapter_reduction", "max_text_len",
        "max_regions", "region_feature_dim", "box_dim", "num_answers", "languages",
        "arch_setting", "variant"};
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw ParseError("model config: unknown field '" + key + "'");
    ModelConfig cfg;
    cfg.num_layers = j.value("num_layers", cfg.num_layers);
    cfg.hidden = j.value("hidden", cfg.hidden);
    cfg.heads = j.value("heads", cfg.heads);
    cfg.ffn_dim = j.value("ffn_dim", cfg.ffn_dim);
    cfg.adapter_reduction = j.value("adapter_reduction", cfg.adapter_reduction);
    cfg.max_text_len = j.value("max_text_len", cfg.max_text_len);
    cfg.max_regions = j.value("max_regions", cfg.max_regions);
    cfg.region_feature_dim = j.value("region_feature_dim", cfg.region_feature_dim);
    cfg.box_dim = j.value("box_dim", cfg.box_dim);
    cfg.num_answers = j.value("num_answers", cfg.num_answers);
    if (j.contains("languages")) cfg.languages = j.at("languages").get<std::vector<std::string>>();
    if (j.contains("arch_setting"))
        cfg.arch_setting = arch_setting_from_name(j.at("arch_setting").get<std::string>());
    if (j.contains("variant")) cfg.variant = variant_from_name(j.at("variant").get<std::string>());
    cfg.validate();
    return cfg;
}

const std::string& ModelConfig::source_language() const {
    if (languages.empty()) throw ConfigError("no languages configured");
    return languages.front();
}

bool ModelConfig::has_language(const std::string& code) const {
    return std::find(languages.begin(), languages.end(), code) != languages.end();
}

std::string ModelConfig::embedding_language(const std::string& code) const {
    return variant_has_per_language_embeddings(variant) ? code : kSharedLanguage;
}

const Vocab& Model::vocab_for(const std::string& language) const {
    const std::string key = config.embedding_language(language);
    auto it = vocabs.find(key);
    if (it == vocabs.end()) throw SwapError("no vocabulary for language '" + key + "'");
    return it->second;
}

// ---- construction -----------------------------------------------------------

namespace {

struct Builder {
    ParameterStore& store;
    std::mt19937_64& rng;

    void weight(const std::string& name, std::size_t r, std::size_t c, ParameterGroupTag tag) {
        store.add(name, Tensor::randn({r, c}, init_std(r, c), rng), tag, false);
    }
    void zeros2(const std::string& name, std::size_t r, std::size_t c, ParameterGroupTag tag) {
        store.add(name, Tensor::zeros({r, c}), tag, false);
    }
    void zeros1(const std::string& name, std::size_t n, ParameterGroupTag tag) {
        store.add(name, Tensor::zeros({n}), tag, false);
    }
    void ones1(const std::string& name, std::size_t n, ParameterGroupTag tag) {
        store.add(name, Tensor::full({n}, 1.0), tag, false);
    }
};

// One bottleneck adapter: random down-projection, zero up-projection so the
// block starts as an exact identity.
void add_adapter(Builder& b, const std::string& prefix, std::size_t d, std::size_t bottleneck,
                 const ParameterGroupTag& tag) {
    b.weight(prefix + ".down.w", d, bottleneck, tag);
    b.zeros1(prefix + ".down.b", bottleneck, tag);
    b.zeros2(prefix + ".up.w", bottleneck, d, tag);
    b.zeros1(prefix + ".up.b", d, tag);
}

std::string layer_prefix(std::size_t i) { return "layer" + std::to_string(i); }

}  // namespace

ParameterStore build_parameters(const ModelConfig& cfg,
                                const std::map<std::string, std::size_t>& vocab_sizes,
                                std::uint64_t seed) {
    cfg.validate();
    ParameterStore store;
    std::mt19937_64 rng(seed);
    Builder b{store, rng};
    const std::size_t d = cfg.hidden;
    const ParameterGroupTag core(GroupKind::CORE_TRANSFORMER);

    for (std::size_t i = 0; i < cfg.num_layers; ++i) {
        const std::string lp = "core." + layer_prefix(i);
        for (const char* w : {"wq", "wk", "wv", "wo"}) b.weight(lp + ".attn." + w, d, d, core);
        for (const char* bias : {"bq", "bk", "bv", "bo"}) b.zeros1(lp + ".attn." + bias, d, core);
        b.ones1(lp + ".ln1.gamma", d, core);
        b.zeros1(lp + ".ln1.beta", d, core);
        b.weight(lp + ".ffn.w1", d, cfg.ffn_dim, core);
        b.zeros1(lp + ".ffn.b1", cfg.ffn_dim, core);
        b.weight(lp + ".ffn.w2", cfg.ffn_dim, d, core);
        b.zeros1(lp + ".ffn.b2", d, core);
        b.ones1(lp + ".ln2.gamma", d, core);
        b.zeros1(lp + ".ln2.beta", d, core);
    }
    b.weight("core.pos_emb", cfg.max_text_len, d, core);
    b.weight("core.seg_emb", 2, d, core);

    b.weight("img.feat.w", cfg.region_feature_dim, d, ParameterGroupTag(GroupKind::IMAGE_PROJECTION));
    b.zeros1("img.feat.b", d, ParameterGroupTag(GroupKind::IMAGE_PROJECTION));
    b.weight("img.box.w", cfg.box_dim, d, ParameterGroupTag(GroupKind::IMAGE_PROJECTION));
    b.zeros1("img.box.b", d, ParameterGroupTag(GroupKind::IMAGE_PROJECTION));

    b.weight("head.answer.w", d, cfg.num_answers, ParameterGroupTag(GroupKind::PREDICTION_HEAD));
    b.zeros1("head.answer.b", cfg.num_answers, ParameterGroupTag(GroupKind::PREDICTION_HEAD));

    // Embeddings. Shared variants hold exactly one matrix under the pseudo
    // language; per-language variants hold archives plus the active slot.
    const std::string source = cfg.source_language();
    if (variant_has_per_language_embeddings(cfg.variant)) {
        std::vector<std::string> langs;
        for (const auto& [lang, _] : vocab_sizes) langs.push_back(lang);
        std::sort(langs.begin(), langs.end());
        for (const auto& lang : langs) {
            b.store.add("emb." + lang + ".tok",
                        Tensor::randn({vocab_sizes.at(lang), d}, 0.08, rng),
                        ParameterGroupTag(GroupKind::TEXT_EMBEDDING, lang), false);
        }
        if (!vocab_sizes.count(source))
            throw ConfigError("source language '" + source + "' has no vocabulary");
        store.add("emb.active.tok", store.tensor("emb." + source + ".tok").clone(),
                  ParameterGroupTag(GroupKind::TEXT_EMBEDDING, source), false);
    } else {
        if (!vocab_sizes.count(kSharedLanguage))
            throw ConfigError("shared-vocabulary variant needs a '" + kSharedLanguage + "' vocab");
        b.store.add("emb." + kSharedLanguage + ".tok",
                    Tensor::randn({vocab_sizes.at(kSharedLanguage), d}, 0.08, rng),
                    ParameterGroupTag(GroupKind::TEXT_EMBEDDING, kSharedLanguage), false);
    }

    const std::size_t bottleneck = d / cfg.adapter_reduction;
    if (variant_has_language_adapters(cfg.variant)) {
        // ADA_MULTI pretraining produces adapters for every configured
        // language; ADA_MONO starts with the source and extends later.
        std::vector<std::string> adapter_langs;
        if (cfg.variant == ModelVariant::ADA_MULTI)
            adapter_langs = cfg.languages;
        else
            adapter_langs = {source};
        std::sort(adapter_langs.begin(), adapter_langs.end());
        for (const auto& lang : adapter_langs)
            for (std::size_t i = 0; i < cfg.num_layers; ++i)
                add_adapter(b, "ada.lang." + lang + "." + layer_prefix(i), d, bottleneck,
                            ParameterGroupTag(GroupKind::LANGUAGE_ADAPTER, lang));
        for (std::size_t i = 0; i < cfg.num_layers; ++i) {
            const std::string active = "ada.lang.active." + layer_prefix(i);
            const std::string archive = "ada.lang." + source + "." + layer_prefix(i);
            for (const char* part : {".down.w", ".down.b", ".up.w", ".up.b"})
                store.add(active + part, store.tensor(archive + part).clone(),
                          ParameterGroupTag(GroupKind::LANGUAGE_ADAPTER, source), false);
        }
    }

    if (variant_has_task_adapters(cfg.variant)) {
        for (std::size_t i = 0; i < cfg.num_layers; ++i) {
            const std::string lp = layer_prefix(i);
            switch (cfg.arch_setting) {
                case ArchSetting::S1:
                    add_adapter(b, "ada.task.joint." + lp, d, bottleneck,
                                ParameterGroupTag(GroupKind::TASK_ADAPTER_TEXT));
                    break;
                case ArchSetting::S2:
                case ArchSetting::S3:
                    add_adapter(b, "ada.task.text." + lp, d, bottleneck,
                                ParameterGroupTag(GroupKind::TASK_ADAPTER_TEXT));
                    add_adapter(b, "ada.task.image." + lp, d, bottleneck,
                                ParameterGroupTag(GroupKind::TASK_ADAPTER_IMAGE));
                    break;
                case ArchSetting::S4:
                case ArchSetting::S5:
                    add_adapter(b, "ada.task.text." + lp, d, bottleneck,
                                ParameterGroupTag(GroupKind::TASK_ADAPTER_TEXT));
                    add_adapter(b, "ada.task.image." + lp, d, bottleneck,
                                ParameterGroupTag(GroupKind::TASK_ADAPTER_IMAGE));
                    add_adapter(b, "ada.align." + lp, d, bottleneck,
                                ParameterGroupTag(GroupKind::ALIGNMENT_ADAPTER));
                    break;
            }
        }
    }

    store.set_active_language(source);
    return store;
}

void add_language_parameters(ParameterStore& store, const ModelConfig& cfg,
                             const std::string& language, const Tensor& embedding,
                             std::uint64_t seed) {
    if (!variant_has_per_language_embeddings(cfg.variant))
        throw ContractError("variant " + variant_name(cfg.variant) +
                            " does not take per-language embeddings");
    const std::string emb_name = "emb." + language + ".tok";
    if (store.contains(emb_name)) throw ContractError("language '" + language + "' already present");
    ParameterStore scratch;
    std::mt19937_64 rng(seed);
    Builder b{scratch, rng};
    store.add(emb_name, embedding.clone(), ParameterGroupTag(GroupKind::TEXT_EMBEDDING, language),
              false);
    if (variant_has_language_adapters(cfg.variant)) {
        const std::size_t bottleneck = cfg.hidden / cfg.adapter_reduction;
        for (std::size_t i = 0; i < cfg.num_layers; ++i) {
            const std::string prefix = "ada.lang." + language + "." + layer_prefix(i);
            add_adapter(b, prefix, cfg.hidden, bottleneck,
                        ParameterGroupTag(GroupKind::LANGUAGE_ADAPTER, language));
        }
        for (const auto& name : scratch.names()) {
            const auto& entry = scratch.at(name);
            store.add(name, entry.tensor.clone(), entry.group, false);
        }
    }
}

// ---- forward ----------------------------------------------------------------

namespace {

Tensor broadcast_row(const Tensor& table, std::size_t row, std::size_t count) {
    return gather_rows(table, std::vector<std::size_t>(count, row));
}

struct AdapterRef {
    Tensor down_w, down_b, up_w, up_b;
};

AdapterRef adapter_ref(const ParameterStore& store, const std::string& prefix,
                       const std::string& language_for_error) {
    for (const char* part : {".down.w", ".down.b", ".up.w", ".up.b"})
        if (!store.contains(prefix + part))
            throw ConfigError("missing adapter group '" + prefix + "' for language '" +
                              language_for_error + "'");
    return {store.tensor(prefix + ".down.w"), store.tensor(prefix + ".down.b"),
            store.tensor(prefix + ".up.w"), store.tensor(prefix + ".up.b")};
}

Tensor apply_adapter(const Tensor& x, const AdapterRef& a) {
    if (x.rows() == 0) return x;
    Tensor h = gelu(add_row_bias(matmul(x, a.down_w), a.down_b));
    Tensor u = add_row_bias(matmul(h, a.up_w), a.up_b);
    return add(x, u);
}

// Additive attention mask: [PAD] text positions are unavailable as keys.
Tensor build_attention_mask(const MultimodalInput& input) {
    const std::size_t total = input.total_len();
    std::vector<double> mask(total * total, 0.0);
    bool any = false;
    for (std::size_t j = 0; j < input.token_ids.size(); ++j) {
        if (input.token_ids[j] != kPadId) continue;
        any = true;
        for (std::size_t i = 0; i < total; ++i) mask[i * total + j] = detail::kAttnMaskValue;
    }
    if (!any) return Tensor();
    return Tensor::from_values({total, total}, std::move(mask));
}

}  // namespace

Tensor embed_inputs(const Model& model, const MultimodalInput& input, const std::string& language) {
    const ModelConfig& cfg = model.config;
    const ParameterStore& store = model.store;
    if (!cfg.has_language(language))
        throw SwapError("unknown language '" + language + "' for this model");
    const std::size_t text_len = input.token_ids.size();
    if (text_len < 2) throw InputError("text must contain at least [CLS] and [SEP]");
    if (text_len > cfg.max_text_len)
        throw InputError("text length " + std::to_string(text_len) + " exceeds max_text_len " +
                         std::to_string(cfg.max_text_len));
    if (input.num_regions > cfg.max_regions)
        throw InputError("region count " + std::to_string(input.num_regions) + " exceeds max_regions " +
                         std::to_string(cfg.max_regions));
    if (input.region_features.size() != input.num_regions * cfg.region_feature_dim ||
        input.region_boxes.size() != input.num_regions * cfg.box_dim)
        throw DimensionError("region payload does not match num_regions");

    Tensor emb_matrix;
    if (variant_has_per_language_embeddings(cfg.variant)) {
        if (store.active_language() != language)
            throw SwapError("language '" + language + "' is not active (current: '" +
                            store.active_language() + "'); call swap_language first");
        emb_matrix = store.tensor("emb.active.tok");
    } else {
        emb_matrix = store.tensor("emb." + kSharedLanguage + ".tok");
    }
    for (std::size_t id : input.token_ids)
        if (id >= emb_matrix.rows())
            throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                             std::to_string(emb_matrix.rows()));

    Tensor text = gather_rows(emb_matrix, input.token_ids);
    text = add(text, slice_rows(store.tensor("core.pos_emb"), 0, text_len));
    text = add(text, broadcast_row(store.tensor("core.seg_emb"), 0, text_len));
    if (input.num_regions == 0) return text;

    Tensor feats = Tensor::from_values({input.num_regions, cfg.region_feature_dim},
                                       input.region_features);
    Tensor boxes = Tensor::from_values({input.num_regions, cfg.box_dim}, input.region_boxes);
    Tensor image = add_row_bias(matmul(feats, store.tensor("img.feat.w")), store.tensor("img.feat.b"));
    image = add(image, add_row_bias(matmul(boxes, store.tensor("img.box.w")),
                                    store.tensor("img.box.b")));
    image = add(image, broadcast_row(store.tensor("core.seg_emb"), 1, input.num_regions));
    return concat_rows({text, image});
}

Tensor encoder_forward(const Model& model, const Tensor& embeddings, const MultimodalInput& input,
                       const std::string& language, ForwardTrace* trace) {
    const ModelConfig& cfg = model.config;
    const ParameterStore& store = model.store;
    const std::size_t total = input.total_len();
    const std::size_t text_len = input.text_len();
    if (embeddings.rows() != total || embeddings.cols() != cfg.hidden)
        throw DimensionError("encoder input " + shape_to_string(embeddings.shape()) +
                             " does not match sequence of " + std::to_string(total));
    const bool lang_adapters =
        variant_has_language_adapters(cfg.variant);
    const bool task_adapters = variant_has_task_adapters(cfg.variant);
    if (lang_adapters && store.active_language() != language)
        throw SwapError("language '" + language + "' is not active (current: '" +
                        store.active_language() + "'); call swap_language first");

    const std::size_t head_dim = cfg.hidden / cfg.heads;
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    Tensor mask = build_attention_mask(input);

    Tensor x = embeddings;
    for (std::size_t layer = 0; layer < cfg.num_layers; ++layer) {
        const std::string lp = "core." + layer_prefix(layer);
        Tensor q = add_row_bias(matmul(x, store.tensor(lp + ".attn.wq")), store.tensor(lp + ".attn.bq"));
        Tensor k = add_row_bias(matmul(x, store.tensor(lp + ".attn.wk")), store.tensor(lp + ".attn.bk"));
        Tensor v = add_row_bias(matmul(x, store.tensor(lp + ".attn.wv")), store.tensor(lp + ".attn.bv"));
        std::vector<Tensor> head_outputs;
        head_outputs.reserve(cfg.heads);
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            const std::size_t c0 = h * head_dim, c1 = (h + 1) * head_dim;
            Tensor scores = scale(matmul_nt(slice_cols(q, c0, c1), slice_cols(k, c0, c1)), attn_scale);
            if (mask.defined()) scores = add(scores, mask);
            Tensor attn = softmax_rows(scores);
            if (trace) trace->attentions.push_back(attn);
            head_outputs.push_back(matmul(attn, slice_cols(v, c0, c1)));
        }
        Tensor attn_out = add_row_bias(matmul(concat_cols(head_outputs), store.tensor(lp + ".attn.wo")),
                                       store.tensor(lp + ".attn.bo"));
        x = layer_norm(add(x, attn_out), store.tensor(lp + ".ln1.gamma"),
                       store.tensor(lp + ".ln1.beta"), kLayerNormEps);
        Tensor f = gelu(add_row_bias(matmul(x, store.tensor(lp + ".ffn.w1")),
                                     store.tensor(lp + ".ffn.b1")));
        f = add_row_bias(matmul(f, store.tensor(lp + ".ffn.w2")), store.tensor(lp + ".ffn.b2"));
        x = layer_norm(add(x, f), store.tensor(lp + ".ln2.gamma"), store.tensor(lp + ".ln2.beta"),
                       kLayerNormEps);

        // Adapter stack. Language adapter routing: text-only in S2/S4, all
        // positions in S1/S3/S5; task adapters split by modality except S1.
        const std::string ap = layer_prefix(layer);
        if (lang_adapters) {
            const AdapterRef lang_ref = adapter_ref(store, "ada.lang.active." + ap, language);
            const bool text_only =
                cfg.arch_setting == ArchSetting::S2 || cfg.arch_setting == ArchSetting::S4;
            if (text_only && total > text_len) {
                Tensor t = apply_adapter(slice_rows(x, 0, text_len), lang_ref);
                x = concat_rows({t, slice_rows(x, text_len, total)});
            } else {
                x = apply_adapter(x, lang_ref);
            }
        }
        if (task_adapters) {
            if (cfg.arch_setting == ArchSetting::S1) {
                x = apply_adapter(x, adapter_ref(store, "ada.task.joint." + ap, language));
            } else {
                Tensor t = apply_adapter(slice_rows(x, 0, text_len),
                                         adapter_ref(store, "ada.task.text." + ap, language));
                if (total > text_len) {
                    Tensor i = apply_adapter(slice_rows(x, text_len, total),
                                             adapter_ref(store, "ada.task.image." + ap, language));
                    x = concat_rows({t, i});
                } else {
                    x = t;
                }
            }
            if (trace) trace->pre_alignment_hidden.push_back(x);
            if (cfg.arch_setting == ArchSetting::S4 || cfg.arch_setting == ArchSetting::S5)
                x = apply_adapter(x, adapter_ref(store, "ada.align." + ap, language));
        } else if (trace) {
            trace->pre_alignment_hidden.push_back(x);
        }
    }
    return x;
}

Tensor cls_answer_head(const Model& model, const Tensor& hidden) {
    const ParameterStore& store = model.store;
    Tensor cls = slice_rows(hidden, 0, 1);
    Tensor logits = add_row_bias(matmul(cls, store.tensor("head.answer.w")),
                                 store.tensor("head.answer.b"));
    return reshape(logits, {model.config.num_answers});
}

Tensor mlm_head(const Model& model, const Tensor& hidden, const std::vector<std::size_t>& positions,
                const std::string& language, std::size_t text_len) {
    const ModelConfig& cfg = model.config;
    const std::size_t limit = text_len == 0 ? hidden.rows() : text_len;
    for (std::size_t p : positions)
        if (p >= limit)
            throw ContractError("mlm_head: position " + std::to_string(p) +
                                " is not a text position (text length " + std::to_string(limit) + ")");
    Tensor emb_matrix;
    if (variant_has_per_language_embeddings(cfg.variant)) {
        if (model.store.active_language() != language)
            throw SwapError("language '" + language + "' is not active; call swap_language first");
        emb_matrix = model.store.tensor("emb.active.tok");
    } else {
        emb_matrix = model.store.tensor("emb." + kSharedLanguage + ".tok");
    }
    // Weight tying: logits are similarities against the embedding matrix.
    return matmul_nt(gather_rows(hidden, positions), emb_matrix);
}

Tensor vqa_logits(const Model& model, const MultimodalInput& input, const std::string& language,
                  ForwardTrace* trace) {
    Tensor emb = embed_inputs(model, input, language);
    Tensor hidden = encoder_forward(model, emb, input, language, trace);
    return cls_answer_head(model, hidden);
}

// ---- language hot-swap --------------------------------------------------------

std::vector<std::string> swap_slot_names(const ParameterStore& store, ModelVariant variant) {
    std::vector<std::string> out;
    if (variant == ModelVariant::FULL_FT) return out;
    if (variant_has_per_language_embeddings(variant) && store.contains("emb.active.tok"))
        out.push_back("emb.active.tok");
    if (variant_has_language_adapters(variant)) {
        for (const auto& name : store.names())
            if (name.rfind("ada.lang.active.", 0) == 0) out.push_back(name);
    }
    return out;
}

void swap_language(ParameterStore& store, ModelVariant variant, const std::string& target) {
    if (variant == ModelVariant::FULL_FT) {
        // Shared multilingual parameters: nothing to replace.
        return;
    }
    std::vector<std::pair<std::string, std::string>> plan;  // active name -> archive name
    if (variant_has_per_language_embeddings(variant))
        plan.emplace_back("emb.active.tok", "emb." + target + ".tok");
    if (variant_has_language_adapters(variant)) {
        for (const auto& name : store.names()) {
            if (name.rfind("ada.lang.active.", 0) != 0) continue;
            plan.emplace_back(name, "ada.lang." + target + "." + name.substr(16));
        }
    }
    std::vector<std::string> missing;
    for (const auto& [active, archive] : plan)
        if (!store.contains(archive)) missing.push_back(archive);
    if (!missing.empty()) {
        std::string msg = "cannot swap to '" + target + "', missing:";
        for (const auto& m : missing) msg += " " + m;
        throw SwapError(msg);
    }
    for (const auto& [active, archive] : plan)
        store.replace_values(active, store.tensor(archive), target);
    store.set_active_language(target);
}

void sync_active_to_archive(ParameterStore& store, ModelVariant variant) {
    const std::string lang = store.active_language();
    if (lang.empty()) throw ContractError("sync_active_to_archive: no active language");
    for (const auto& active : swap_slot_names(store, variant)) {
        std::string archive;
        if (active == "emb.active.tok")
            archive = "emb." + lang + ".tok";
        else
            archive = "ada.lang." + lang + "." + active.substr(16);
        store.replace_values(archive, store.tensor(active));
    }
}

}  // namespace xmm
