#include "xmm/phases.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include <json.hpp>

#include "xmm/errors.hpp"
#include "xmm/textproc.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace xmm {

std::string phase_kind_name(PhaseKind k) {
    switch (k) {
        case PhaseKind::PRETRAIN: return "PRETRAIN";
        case PhaseKind::LANG_EXTEND: return "LANG_EXTEND";
        case PhaseKind::TARGET_TASK: return "TARGET_TASK";
        case PhaseKind::FEW_SHOT: return "FEW_SHOT";
    }
    throw ContractError("unknown phase kind");
}

PhaseKind phase_kind_from_name(const std::string& name) {
    if (name == "PRETRAIN") return PhaseKind::PRETRAIN;
    if (name == "LANG_EXTEND") return PhaseKind::LANG_EXTEND;
    if (name == "TARGET_TASK") return PhaseKind::TARGET_TASK;
    if (name == "FEW_SHOT") return PhaseKind::FEW_SHOT;
    throw ParseError("unknown phase kind '" + name + "'");
}

std::pair<double, double> few_shot_lr_grid(ModelVariant variant) {
    if (variant == ModelVariant::FULL_FT || variant == ModelVariant::EMB_SWAP)
        return {1e-5, 5e-5};
    return {5e-5, 1e-4};
}

double target_task_default_lr(ModelVariant variant) {
    if (variant == ModelVariant::FULL_FT || variant == ModelVariant::EMB_SWAP) return 3e-5;
    return 1e-4;
}

PhaseConfig PhaseConfig::defaults(PhaseKind kind, ModelVariant variant) {
    PhaseConfig cfg;
    cfg.kind = kind;
    cfg.variant = variant;
    switch (kind) {
        case PhaseKind::PRETRAIN:
            // No published regime exists for this stand-in stage; these are
            // desk-scale values.
            cfg.steps = 2000;
            cfg.batch_size = 8;
            cfg.learning_rate = 1e-3;
            cfg.vocab_size = 30000;
            cfg.adapter_steps = 400;
            break;
        case PhaseKind::LANG_EXTEND:
            cfg.steps = 100000;
            cfg.batch_size = 64;
            cfg.learning_rate = 1e-4;
            cfg.vocab_size = 30000;
            break;
        case PhaseKind::TARGET_TASK:
            cfg.epochs = 5;
            cfg.batch_size = 192;
            cfg.learning_rate = target_task_default_lr(variant);
            break;
        case PhaseKind::FEW_SHOT:
            cfg.epochs = 10;  // the longer option of the {5, 10} grid
            cfg.batch_size = 192;
            cfg.learning_rate = few_shot_lr_grid(variant).second;
            break;
    }
    return cfg;
}

void PhaseConfig::validate() const {
    const bool step_based = kind == PhaseKind::PRETRAIN || kind == PhaseKind::LANG_EXTEND;
    if (step_based && (!steps || epochs))
        throw ConfigError(phase_kind_name(kind) + " takes steps, not epochs");
    if (!step_based && (!epochs || steps))
        throw ConfigError(phase_kind_name(kind) + " takes epochs, not steps");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
    if (mask_prob <= 0.0 || mask_prob >= 1.0) throw ConfigError("mask_prob must be in (0,1)");
    if ((kind == PhaseKind::LANG_EXTEND || kind == PhaseKind::FEW_SHOT) && language.empty())
        throw ConfigError(phase_kind_name(kind) + " needs a target language");
}

std::string PhaseConfig::to_json() const {
    json j;
    j["kind"] = phase_kind_name(kind);
    if (steps) j["steps"] = *steps;
    if (epochs) j["epochs"] = *epochs;
    j["batch_size"] = batch_size;
    j["learning_rate"] = learning_rate;
    j["seed"] = seed;
    j["variant"] = variant_name(variant);
    if (!language.empty()) j["language"] = language;
    j["vocab_size"] = vocab_size;
    if (adapter_steps > 0) j["adapter_steps"] = adapter_steps;
    j["mask_prob"] = mask_prob;
    return j.dump();
}

PhaseConfig PhaseConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("phase config: ") + e.what());
    }
    static const std::set<std::string> known = {"kind",     "steps",    "epochs",       "batch_size",
                                                "learning_rate", "seed", "variant",     "language",
                                                "vocab_size",    "adapter_steps", "mask_prob"};
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw ParseError("phase config: unknown field '" + key + "'");
    if (!j.contains("kind")) throw ParseError("phase config: missing 'kind'");
    const PhaseKind kind = phase_kind_from_name(j.at("kind").get<std::string>());
    const ModelVariant variant =
        j.contains("variant") ? variant_from_name(j.at("variant").get<std::string>())
                              : ModelVariant::ADA_MULTI;
    PhaseConfig cfg = defaults(kind, variant);
    if (j.contains("steps")) cfg.steps = j.at("steps").get<std::size_t>();
    if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<std::size_t>();
    if (j.contains("steps") && (kind == PhaseKind::TARGET_TASK || kind == PhaseKind::FEW_SHOT))
        cfg.epochs.reset();
    if (j.contains("epochs") && (kind == PhaseKind::PRETRAIN || kind == PhaseKind::LANG_EXTEND))
        cfg.steps.reset();
    if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<std::size_t>();
    if (j.contains("learning_rate")) cfg.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("language")) cfg.language = j.at("language").get<std::string>();
    if (j.contains("vocab_size")) cfg.vocab_size = j.at("vocab_size").get<std::size_t>();
    if (j.contains("adapter_steps")) cfg.adapter_steps = j.at("adapter_steps").get<std::size_t>();
    if (j.contains("mask_prob")) cfg.mask_prob = j.at("mask_prob").get<double>();
    cfg.validate();
    return cfg;
}

// ---- freeze plans -----------------------------------------------------------------

std::size_t FreezePlan::apply(ParameterStore& store) const {
    std::size_t trainable_count = 0;
    for (auto& [name, entry] : store) {
        const bool flag = trainable(entry.group);
        entry.trainable = flag;
        entry.tensor.set_requires_grad(flag);
        if (flag) ++trainable_count;
    }
    return trainable_count;
}

FreezePlan freeze_plan(ModelVariant variant, PhaseKind kind, const std::string& language) {
    const std::string vn = variant_name(variant);
    switch (kind) {
        case PhaseKind::PRETRAIN:
            return {vn + "/PRETRAIN", [](const ParameterGroupTag& tag) {
                        return tag.kind == GroupKind::CORE_TRANSFORMER ||
                               tag.kind == GroupKind::TEXT_EMBEDDING;
                    }};
        case PhaseKind::LANG_EXTEND: {
            if (variant != ModelVariant::EMB_SWAP && variant != ModelVariant::ADA_MONO)
                throw ContractError("language extension is undefined for variant " + vn);
            if (language.empty()) throw ContractError("language extension needs a target language");
            const bool with_adapters = variant == ModelVariant::ADA_MONO;
            return {vn + "/LANG_EXTEND(" + language + ")",
                    [language, with_adapters](const ParameterGroupTag& tag) {
                        if (tag.kind == GroupKind::TEXT_EMBEDDING && tag.language == language)
                            return true;
                        return with_adapters && tag.kind == GroupKind::LANGUAGE_ADAPTER &&
                               tag.language == language;
                    }};
        }
        case PhaseKind::TARGET_TASK:
        case PhaseKind::FEW_SHOT: {
            // Few-shot fine-tunes the same parts as source-language training.
            const std::string pn = vn + "/" + phase_kind_name(kind);
            switch (variant) {
                case ModelVariant::FULL_FT:
                    return {pn, [](const ParameterGroupTag&) { return true; }};
                case ModelVariant::EMB_SWAP:
                    return {pn, [](const ParameterGroupTag& tag) {
                                return tag.kind == GroupKind::CORE_TRANSFORMER ||
                                       tag.kind == GroupKind::PREDICTION_HEAD;
                            }};
                case ModelVariant::ADA_MONO:
                    return {pn, [](const ParameterGroupTag& tag) {
                                return tag.kind == GroupKind::TASK_ADAPTER_TEXT ||
                                       tag.kind == GroupKind::TASK_ADAPTER_IMAGE ||
                                       tag.kind == GroupKind::ALIGNMENT_ADAPTER ||
                                       tag.kind == GroupKind::PREDICTION_HEAD;
                            }};
                case ModelVariant::ADA_MULTI:
                    return {pn, [](const ParameterGroupTag& tag) {
                                return tag.kind == GroupKind::TASK_ADAPTER_TEXT ||
                                       tag.kind == GroupKind::TASK_ADAPTER_IMAGE ||
                                       tag.kind == GroupKind::ALIGNMENT_ADAPTER ||
                                       tag.kind == GroupKind::PREDICTION_HEAD ||
                                       tag.kind == GroupKind::IMAGE_PROJECTION;
                            }};
            }
            throw ContractError("unknown variant");
        }
    }
    throw ContractError("unknown phase kind");
}

FreezePlan adapter_pretrain_plan(const std::string& language) {
    return {"ADAPTER_PRETRAIN(" + language + ")", [language](const ParameterGroupTag& tag) {
                return tag.kind == GroupKind::LANGUAGE_ADAPTER && tag.language == language;
            }};
}

// ---- reports ----------------------------------------------------------------------

void TrainReport::save_json(const std::string& path) const {
    json j;
    j["losses"] = losses;
    j["dev_accuracies"] = dev_accuracies;
    j["final_dev_accuracy"] = final_dev_accuracy;
    j["best_checkpoint_step"] = best_checkpoint_step;
    j["wall_seconds"] = wall_seconds;
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write report " + path);
    os << j.dump(2) << "\n";
}

void TrainReport::save_losses_csv(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write loss curve " + path);
    os << "step,loss\n";
    char buf[32];
    for (std::size_t i = 0; i < losses.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.9f", losses[i]);
        os << (i + 1) << "," << buf << "\n";
    }
}

TrainReport TrainReport::load_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read report " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ParseError(std::string("train report: ") + e.what());
    }
    TrainReport r;
    r.losses = j.at("losses").get<std::vector<double>>();
    r.dev_accuracies = j.value("dev_accuracies", std::vector<double>{});
    r.final_dev_accuracy = j.at("final_dev_accuracy").get<double>();
    r.best_checkpoint_step = j.at("best_checkpoint_step").get<std::size_t>();
    r.wall_seconds = j.value("wall_seconds", 0.0);
    return r;
}

bool TrainReport::deterministic_equal(const TrainReport& other) const {
    return losses == other.losses && dev_accuracies == other.dev_accuracies &&
           final_dev_accuracy == other.final_dev_accuracy &&
           best_checkpoint_step == other.best_checkpoint_step;
}

// ---- shared training machinery -------------------------------------------------------

namespace {

struct Stopwatch {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

void record_loss(TrainReport& report, double loss) {
    if (!std::isfinite(loss)) throw ContractError("training loss became non-finite");
    report.losses.push_back(loss);
}

// Forward language for MLM text: adapter variants read the active slots, so
// the forward language must be the active one; shared-embedding lookups are
// language-independent.
std::string mlm_forward_language(const Model& model) {
    const std::string& active = model.store.active_language();
    if (model.config.has_language(active)) return active;
    return model.config.source_language();
}

double mlm_batch_step(Model& model, OptimizerState& optim, const std::vector<std::string>& corpus,
                      const Vocab& vocab, const std::string& forward_language, std::mt19937_64& rng,
                      std::size_t batch_size, double mask_prob) {
    double total_loss = 0.0;
    std::size_t contributing = 0;
    for (std::size_t b = 0; b < batch_size; ++b) {
        std::uniform_int_distribution<std::size_t> line_dist(0, corpus.size() - 1);
        MlmBatch masked;
        for (int attempt = 0; attempt < 8 && masked.positions.empty(); ++attempt) {
            const std::string& line = corpus[line_dist(rng)];
            auto ids = tokenize_trimmed(vocab, line, model.config.max_text_len);
            masked = mlm_mask(ids, vocab, mask_prob, rng());
        }
        if (masked.positions.empty()) continue;
        MultimodalInput input;
        input.token_ids = masked.input_ids;
        Tensor emb = embed_inputs(model, input, forward_language);
        Tensor hidden = encoder_forward(model, emb, input, forward_language);
        Tensor logits = mlm_head(model, hidden, masked.positions, forward_language);
        Tensor loss = cross_entropy_rows(logits, masked.target_ids);
        backward(loss);
        total_loss += loss.item();
        contributing += 1;
    }
    adam_step(model.store, optim);
    return contributing == 0 ? 0.0 : total_loss / static_cast<double>(contributing);
}

std::size_t answer_class_or_throw(const AnswerVocab& answers, const QuestionRecord& record) {
    const std::size_t label = answers.lookup(record.answer);
    if (label == AnswerVocab::kOutOfVocab)
        throw InputError("training answer '" + record.answer + "' missing from the answer vocabulary");
    return label;
}

}  // namespace

MultimodalInput make_input(const Model& model, const QuestionRecord& record,
                           const RegionIndex& regions, const std::string& language) {
    auto it = regions.find(record.image_id);
    if (it == regions.end()) throw InputError("no regions for image " + record.image_id);
    const RegionSet& set = it->second;
    MultimodalInput input;
    input.token_ids = tokenize_trimmed(model.vocab_for(language), record.text,
                                       model.config.max_text_len);
    input.num_regions = set.regions.size();
    input.region_features.reserve(set.regions.size() * model.config.region_feature_dim);
    input.region_boxes.reserve(set.regions.size() * model.config.box_dim);
    for (const auto& region : set.regions) {
        if (region.features.size() != model.config.region_feature_dim)
            throw DimensionError("regions of " + record.image_id + " have feature dim " +
                                 std::to_string(region.features.size()) + ", model expects " +
                                 std::to_string(model.config.region_feature_dim));
        input.region_features.insert(input.region_features.end(), region.features.begin(),
                                     region.features.end());
        input.region_boxes.insert(input.region_boxes.end(), region.box.begin(), region.box.end());
    }
    return input;
}

EvalResult evaluate_vqa(const Model& model, const std::vector<QuestionRecord>& records,
                        const RegionIndex& regions, const AnswerVocab& answers,
                        const std::string& language) {
    EvalResult result;
    result.rows.resize(records.size());
    auto score_range = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const auto& record = records[i];
            MultimodalInput input = make_input(model, record, regions, language);
            Tensor logits = vqa_logits(model, input, language);
            // Ties break toward the lowest class index.
            std::size_t best = 0;
            for (std::size_t c = 1; c < logits.size(); ++c)
                if (logits.at(c) > logits.at(best)) best = c;
            result.rows[i] = EvalRow{record.question_id, best, answers.lookup(record.answer),
                                     record.structural_type, record.language};
        }
    };
    std::size_t threads = 1;
    if (const char* env = std::getenv("XMM_THREADS")) {
        const long parsed = std::strtol(env, nullptr, 10);
        if (parsed > 1) threads = static_cast<std::size_t>(parsed);
    }
    threads = std::min(threads, records.empty() ? std::size_t{1} : records.size());
    if (threads <= 1) {
        score_range(0, records.size());
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (records.size() + threads - 1) / threads;
        for (std::size_t t = 0; t < threads; ++t) {
            const std::size_t begin = t * chunk;
            const std::size_t end = std::min(records.size(), begin + chunk);
            if (begin >= end) break;
            pool.emplace_back(score_range, begin, end);
        }
        for (auto& th : pool) th.join();
    }
    return result;
}

double mlm_eval_accuracy(const Model& model, const std::vector<std::string>& corpus,
                         const std::string& language, std::uint64_t seed, std::size_t samples) {
    if (corpus.empty()) throw InputError("mlm_eval_accuracy: empty corpus");
    const Vocab& vocab = model.vocab_for(language);
    const std::string forward_language = mlm_forward_language(model);
    std::mt19937_64 rng(seed);
    std::size_t correct = 0, total = 0;
    std::uniform_int_distribution<std::size_t> line_dist(0, corpus.size() - 1);
    for (std::size_t s = 0; s < samples; ++s) {
        const std::string& line = corpus[line_dist(rng)];
        auto ids = tokenize_trimmed(vocab, line, model.config.max_text_len);
        // Mask exactly one eligible position for a clean recovery check.
        std::vector<std::size_t> eligible;
        for (std::size_t i = 0; i < ids.size(); ++i)
            if (ids[i] >= kNumSpecials) eligible.push_back(i);
        if (eligible.empty()) continue;
        const std::size_t pos = eligible[rng() % eligible.size()];
        const std::size_t target = ids[pos];
        ids[pos] = kMaskId;
        MultimodalInput input;
        input.token_ids = ids;
        Tensor emb = embed_inputs(model, input, forward_language);
        Tensor hidden = encoder_forward(model, emb, input, forward_language);
        Tensor logits = mlm_head(model, hidden, {pos}, forward_language);
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.cols(); ++c)
            if (logits.at(0, c) > logits.at(0, best)) best = c;
        correct += best == target ? 1 : 0;
        total += 1;
    }
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

// ---- pretraining ----------------------------------------------------------------------

Model run_pretrain(const ModelConfig& cfg, const PhaseConfig& phase,
                   const std::map<std::string, std::vector<std::string>>& corpora,
                   TrainReport* report_out) {
    cfg.validate();
    phase.validate();
    if (phase.kind != PhaseKind::PRETRAIN) throw ContractError("run_pretrain needs a PRETRAIN config");
    Stopwatch watch;

    const std::string source = cfg.source_language();
    const bool shared = !variant_has_per_language_embeddings(cfg.variant);
    std::vector<std::string> mlm_languages;
    if (shared) {
        for (const auto& lang : cfg.languages) {
            if (!corpora.count(lang) || corpora.at(lang).empty())
                throw InputError("pretraining needs a corpus for language '" + lang + "'");
            mlm_languages.push_back(lang);
        }
    } else {
        if (!corpora.count(source) || corpora.at(source).empty())
            throw InputError("pretraining needs a corpus for language '" + source + "'");
        mlm_languages.push_back(source);
    }

    Model model;
    model.config = cfg;
    std::map<std::string, std::size_t> vocab_sizes;
    if (shared) {
        std::vector<std::string> joint;
        for (const auto& lang : mlm_languages) {
            const auto& lines = corpora.at(lang);
            joint.insert(joint.end(), lines.begin(), lines.end());
        }
        Vocab vocab = train_tokenizer(joint, phase.vocab_size);
        vocab_sizes[kSharedLanguage] = vocab.size();
        model.vocabs.emplace(kSharedLanguage, std::move(vocab));
    } else {
        Vocab vocab = train_tokenizer(corpora.at(source), phase.vocab_size);
        vocab_sizes[source] = vocab.size();
        model.vocabs.emplace(source, std::move(vocab));
    }
    model.store = build_parameters(cfg, vocab_sizes, phase.seed);

    TrainReport report;
    OptimizerState optim;
    optim.learning_rate = phase.learning_rate;

    // Stage 1: masked-language-model training of the core and embeddings.
    freeze_plan(cfg.variant, PhaseKind::PRETRAIN).apply(model.store);
    std::mt19937_64 rng(phase.seed ^ 0xC0FFEE);
    const std::string forward_language = mlm_forward_language(model);
    for (std::size_t step = 0; step < *phase.steps; ++step) {
        const std::string& lang = mlm_languages[step % mlm_languages.size()];
        const Vocab& vocab = model.vocab_for(lang);
        record_loss(report, mlm_batch_step(model, optim, corpora.at(lang), vocab, forward_language,
                                           rng, phase.batch_size, phase.mask_prob));
    }
    if (!shared) sync_active_to_archive(model.store, cfg.variant);

    // Stage 2: per-language adapter training with the core frozen.
    if (variant_has_language_adapters(cfg.variant)) {
        const std::vector<std::string> adapter_languages =
            cfg.variant == ModelVariant::ADA_MULTI ? cfg.languages
                                                   : std::vector<std::string>{source};
        for (const auto& lang : adapter_languages) {
            swap_language(model.store, cfg.variant, lang);
            adapter_pretrain_plan(lang).apply(model.store);
            OptimizerState adapter_optim;
            adapter_optim.learning_rate = phase.learning_rate;
            const auto& corpus = corpora.count(lang) ? corpora.at(lang) : corpora.at(source);
            const Vocab& vocab = model.vocab_for(lang);
            std::mt19937_64 adapter_rng(phase.seed ^ std::hash<std::string>{}(lang));
            for (std::size_t step = 0; step < phase.adapter_steps; ++step)
                record_loss(report, mlm_batch_step(model, adapter_optim, corpus, vocab, lang,
                                                   adapter_rng, phase.batch_size, phase.mask_prob));
            sync_active_to_archive(model.store, cfg.variant);
        }
        swap_language(model.store, cfg.variant, source);
    }

    report.wall_seconds = watch.seconds();
    if (report_out) *report_out = report;
    return model;
}

// ---- language extension ------------------------------------------------------------------

TrainReport run_language_extension(Model& model, const PhaseConfig& phase,
                                   const std::string& target,
                                   const std::vector<std::string>& corpus) {
    phase.validate();
    if (phase.kind != PhaseKind::LANG_EXTEND)
        throw ContractError("run_language_extension needs a LANG_EXTEND config");
    const ModelVariant variant = model.config.variant;
    if (variant != ModelVariant::EMB_SWAP && variant != ModelVariant::ADA_MONO)
        throw ContractError("language extension is undefined for variant " + variant_name(variant));
    if (!model.config.has_language(target))
        throw ContractError("language '" + target + "' is not in the model's language set");
    const auto existing = model.store.archived_languages(GroupKind::TEXT_EMBEDDING);
    if (std::find(existing.begin(), existing.end(), target) != existing.end())
        throw ContractError("language '" + target + "' already has an embedding");
    if (corpus.empty()) throw InputError("language extension needs a corpus");
    Stopwatch watch;

    const std::string source = model.config.source_language();
    Vocab target_vocab = train_tokenizer(corpus, phase.vocab_size);
    Tensor embedding = init_embeddings_with_overlap(
        model.vocab_for(source), model.store.tensor("emb." + source + ".tok"), target_vocab,
        phase.seed ^ 0xE77E);
    add_language_parameters(model.store, model.config, target, embedding, phase.seed ^ 0xADA);
    model.vocabs.emplace(target, std::move(target_vocab));

    swap_language(model.store, variant, target);
    freeze_plan(variant, PhaseKind::LANG_EXTEND, target).apply(model.store);

    TrainReport report;
    OptimizerState optim;
    optim.learning_rate = phase.learning_rate;
    std::mt19937_64 rng(phase.seed ^ 0x5EED);
    const Vocab& vocab = model.vocab_for(target);
    for (std::size_t step = 0; step < *phase.steps; ++step)
        record_loss(report, mlm_batch_step(model, optim, corpus, vocab, target, rng,
                                           phase.batch_size, phase.mask_prob));

    sync_active_to_archive(model.store, variant);
    swap_language(model.store, variant, source);
    report.wall_seconds = watch.seconds();
    return report;
}

// ---- target-task fine-tuning -----------------------------------------------------------

namespace {

double vqa_batch_step(Model& model, OptimizerState& optim,
                      const std::vector<const QuestionRecord*>& batch, const RegionIndex& regions,
                      const AnswerVocab& answers, const std::string& language) {
    double total_loss = 0.0;
    for (const auto* record : batch) {
        MultimodalInput input = make_input(model, *record, regions, language);
        Tensor logits = vqa_logits(model, input, language);
        Tensor loss = cross_entropy(logits, answer_class_or_throw(answers, *record));
        backward(loss);
        total_loss += loss.item();
    }
    adam_step(model.store, optim);
    return total_loss / static_cast<double>(batch.size());
}

// Epoch-based fine-tuning with epoch-end dev selection; the model ends up
// holding the best checkpoint.
TrainReport finetune_epochs(Model& model, const PhaseConfig& phase,
                            const std::vector<QuestionRecord>& train,
                            const std::vector<QuestionRecord>& dev, const RegionIndex& regions,
                            const AnswerVocab& answers, const std::string& language) {
    if (train.empty()) throw InputError("fine-tuning needs a non-empty training set");
    Stopwatch watch;
    TrainReport report;
    OptimizerState optim;
    optim.learning_rate = phase.learning_rate;
    std::mt19937_64 rng(phase.seed ^ 0xF17E);

    std::vector<const QuestionRecord*> order;
    order.reserve(train.size());
    for (const auto& r : train) order.push_back(&r);

    ParameterStore best_store;
    double best_dev = -1.0;
    std::size_t best_step = 0;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < *phase.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t begin = 0; begin < order.size(); begin += phase.batch_size) {
            const std::size_t end = std::min(order.size(), begin + phase.batch_size);
            std::vector<const QuestionRecord*> batch(order.begin() + begin, order.begin() + end);
            record_loss(report, vqa_batch_step(model, optim, batch, regions, answers, language));
            ++step;
        }
        double dev_acc;
        if (!dev.empty()) {
            dev_acc = evaluate_vqa(model, dev, regions, answers, language).overall_accuracy();
        } else {
            dev_acc = 0.0;
        }
        report.dev_accuracies.push_back(dev_acc);
        if (dev_acc > best_dev) {
            best_dev = dev_acc;
            best_step = step;
            best_store = model.store.clone();
        }
    }
    model.store = std::move(best_store);
    report.final_dev_accuracy = best_dev;
    report.best_checkpoint_step = best_step;
    report.wall_seconds = watch.seconds();
    return report;
}

}  // namespace

TrainReport run_target_task(Model& model, const PhaseConfig& phase,
                            const std::vector<QuestionRecord>& train,
                            const std::vector<QuestionRecord>& dev, const RegionIndex& regions,
                            const AnswerVocab& answers) {
    phase.validate();
    if (phase.kind != PhaseKind::TARGET_TASK)
        throw ContractError("run_target_task needs a TARGET_TASK config");
    const std::string source = model.config.source_language();
    for (const auto& r : train)
        if (r.language != source)
            throw InputError("target-task training is source-language only; found '" + r.language +
                             "' in " + r.question_id);
    swap_language(model.store, model.config.variant, source);
    freeze_plan(model.config.variant, PhaseKind::TARGET_TASK).apply(model.store);
    return finetune_epochs(model, phase, train, dev, regions, answers, source);
}

// ---- zero-shot ---------------------------------------------------------------------------

EvalResult run_zero_shot_single(const Model& model, const std::string& target,
                                const std::vector<QuestionRecord>& test, const RegionIndex& regions,
                                const AnswerVocab& answers) {
    // Evaluate on a snapshot: the caller's store stays byte-identical.
    Model snapshot;
    snapshot.config = model.config;
    snapshot.store = model.store.clone();
    snapshot.vocabs = model.vocabs;
    swap_language(snapshot.store, snapshot.config.variant, target);
    set_trainable(snapshot.store, [](const ParameterGroupTag&) { return true; }, false);
    return evaluate_vqa(snapshot, test, regions, answers, target);
}

std::map<std::string, EvalResult> run_zero_shot(
    const Model& model, const std::vector<std::string>& targets,
    const std::map<std::string, std::vector<QuestionRecord>>& test_per_language,
    const RegionIndex& regions, const AnswerVocab& answers) {
    std::map<std::string, EvalResult> out;
    for (const auto& target : targets) {
        auto it = test_per_language.find(target);
        if (it == test_per_language.end())
            throw InputError("no test data for language '" + target + "'");
        out[target] = run_zero_shot_single(model, target, it->second, regions, answers);
    }
    return out;
}

// ---- few-shot ----------------------------------------------------------------------------

std::vector<FewShotRun> run_few_shot(const Model& model, const PhaseConfig& phase,
                                     const std::string& target,
                                     const std::vector<std::size_t>& split_sizes,
                                     const SplitPlan& plan,
                                     const std::vector<QuestionRecord>& target_records,
                                     const std::vector<QuestionRecord>& dev,
                                     const std::vector<QuestionRecord>& test,
                                     const RegionIndex& regions, const AnswerVocab& answers) {
    phase.validate();
    if (phase.kind != PhaseKind::FEW_SHOT)
        throw ContractError("run_few_shot needs a FEW_SHOT config");
    std::vector<FewShotRun> out;
    for (const std::size_t size : split_sizes) {
        const auto& split_images = plan.images(train_split_name(size));
        for (const auto& image : split_images)
            if (plan.image_in("TEST", image) || plan.image_in("DEV", image))
                throw SplitError("few-shot split image " + image + " overlaps TEST/DEV");
        auto split_train = questions_for_images(target_records, split_images);
        if (split_train.empty())
            throw SplitError("split " + train_split_name(size) + " holds no questions");

        Model tuned;
        tuned.config = model.config;
        tuned.store = model.store.clone();
        tuned.vocabs = model.vocabs;
        swap_language(tuned.store, tuned.config.variant, target);
        freeze_plan(tuned.config.variant, PhaseKind::FEW_SHOT).apply(tuned.store);

        FewShotRun run;
        run.split_size = size;
        run.report = finetune_epochs(tuned, phase, split_train, dev, regions, answers, target);
        run.test_result = evaluate_vqa(tuned, test, regions, answers, target);
        out.push_back(std::move(run));
    }
    return out;
}

// ---- model bundle I/O -----------------------------------------------------------------------

void save_model(const Model& model, const std::string& dir) {
    fs::create_directories(dir);
    std::map<std::string, std::string> files;
    for (const auto& [lang, vocab] : model.vocabs) {
        const std::string name = "vocab." + lang + ".txt";
        vocab.save((fs::path(dir) / name).string());
        files["vocab." + lang] = name;
    }
    save_store(model.store, dir, model.config.to_json(), files);
}

Model load_model(const std::string& dir) {
    Model model;
    auto [store, config_json] = load_store(dir);
    model.store = std::move(store);
    model.config = ModelConfig::from_json(config_json);
    std::ifstream is(fs::path(dir) / "manifest.json");
    json manifest;
    is >> manifest;
    const json files = manifest.value("files", json::object());
    for (const auto& [key, value] : files.items()) {
        if (key.rfind("vocab.", 0) != 0) continue;
        const std::string lang = key.substr(6);
        model.vocabs.emplace(lang,
                             Vocab::load((fs::path(dir) / value.get<std::string>()).string()));
    }
    return model;
}

}  // namespace xmm
