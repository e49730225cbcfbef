#ifndef XMM_MODEL_HPP
#define XMM_MODEL_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "xmm/store.hpp"
#include "xmm/tensor.hpp"
#include "xmm/textproc.hpp"

namespace xmm {

// Adapter wiring choices. S5 is the headline architecture: language adapter
// on all positions, modality-specific task adapters, then a shared alignment
// adapter. S4 routes the language adapter through text positions only. S2/S3
// drop the alignment adapter, S1 has no modality split at all.
enum class ArchSetting { S1, S2, S3, S4, S5 };

// How the backbone acquires its languages:
//   FULL_FT   - jointly pretrained multilingual model, fully fine-tuned
//   EMB_SWAP  - monolingual model extended with per-language embeddings
//   ADA_MONO  - EMB_SWAP plus per-language adapters
//   ADA_MULTI - multilingual core made multimodal, per-language adapters only
enum class ModelVariant { FULL_FT, EMB_SWAP, ADA_MONO, ADA_MULTI };

std::string arch_setting_name(ArchSetting s);
ArchSetting arch_setting_from_name(const std::string& name);
std::string variant_name(ModelVariant v);
ModelVariant variant_from_name(const std::string& name);

bool variant_has_language_adapters(ModelVariant v);
bool variant_has_per_language_embeddings(ModelVariant v);
bool variant_has_task_adapters(ModelVariant v);

// Pseudo language code for the shared embedding of FULL_FT / ADA_MULTI.
inline const std::string kSharedLanguage = "multi";

struct ModelConfig {
    std::size_t num_layers = 4;
    std::size_t hidden = 64;
    std::size_t heads = 4;
    std::size_t ffn_dim = 256;
    std::size_t adapter_reduction = 2;
    std::size_t max_text_len = 24;
    std::size_t max_regions = 9;
    std::size_t region_feature_dim = 16;
    std::size_t box_dim = 6;
    std::size_t num_answers = 2;
    std::vector<std::string> languages;  // data languages, source first
    ArchSetting arch_setting = ArchSetting::S5;
    ModelVariant variant = ModelVariant::ADA_MULTI;

    void validate() const;
    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);

    const std::string& source_language() const;
    bool has_language(const std::string& code) const;
    // Language key under which the embedding/vocab for `code` is stored.
    std::string embedding_language(const std::string& code) const;
};

// One VQA example as the encoder consumes it: text ids then image regions.
struct MultimodalInput {
    std::vector<std::size_t> token_ids;    // [CLS] ... [SEP] (optionally padded)
    std::vector<double> region_features;   // N x feature_dim, row-major
    std::vector<double> region_boxes;      // N x 6, normalized
    std::size_t num_regions = 0;

    std::size_t text_len() const { return token_ids.size(); }
    std::size_t total_len() const { return token_ids.size() + num_regions; }
};

// Full model state: parameters plus the vocabularies they are sized for.
struct Model {
    ModelConfig config;
    ParameterStore store;
    std::map<std::string, Vocab> vocabs;  // keyed by embedding language

    const Vocab& vocab_for(const std::string& language) const;
};

// Optional per-forward capture used by inspection and tests.
struct ForwardTrace {
    std::vector<Tensor> attentions;             // per layer*head, rows softmaxed
    std::vector<Tensor> pre_alignment_hidden;   // per layer, after task adapters
};

// ---- construction -----------------------------------------------------------

// Creates every parameter the variant needs. Per-language groups are created
// for languages present in `vocabs`; adapters start at identity (zero
// up-projections). Core/base weights depend only on (seed, dimensions), so
// different settings share identical non-adapter initialization.
ParameterStore build_parameters(const ModelConfig& cfg,
                                const std::map<std::string, std::size_t>& vocab_sizes,
                                std::uint64_t seed);

// Adds archive embedding (+ language adapter) entries for a new language.
void add_language_parameters(ParameterStore& store, const ModelConfig& cfg,
                             const std::string& language, const Tensor& embedding,
                             std::uint64_t seed);

// ---- forward ----------------------------------------------------------------

Tensor embed_inputs(const Model& model, const MultimodalInput& input, const std::string& language);
Tensor encoder_forward(const Model& model, const Tensor& embeddings, const MultimodalInput& input,
                       const std::string& language, ForwardTrace* trace = nullptr);
Tensor cls_answer_head(const Model& model, const Tensor& hidden);
// text_len = 0 means every row of `hidden` is a text position.
Tensor mlm_head(const Model& model, const Tensor& hidden, const std::vector<std::size_t>& positions,
                const std::string& language, std::size_t text_len = 0);

// Convenience: embed + encode + answer head -> logits [num_answers].
Tensor vqa_logits(const Model& model, const MultimodalInput& input, const std::string& language,
                  ForwardTrace* trace = nullptr);

// ---- language hot-swap --------------------------------------------------------

// Copies the target language's archived parameters into the active slots the
// forward pass reads. FULL_FT is a no-op; see ModelVariant for what each
// variant replaces.
void swap_language(ParameterStore& store, ModelVariant variant, const std::string& target);

// Names swap_language would touch for this variant (the mandated set).
std::vector<std::string> swap_slot_names(const ParameterStore& store, ModelVariant variant);

// Copies the active slots back into the archive entries of the active
// language; phases call this after training active slots.
void sync_active_to_archive(ParameterStore& store, ModelVariant variant);

}  // namespace xmm

#endif
