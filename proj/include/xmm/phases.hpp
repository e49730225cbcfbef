#ifndef XMM_PHASES_HPP
#define XMM_PHASES_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "xmm/data.hpp"
#include "xmm/eval.hpp"
#include "xmm/model.hpp"
#include "xmm/optim.hpp"

namespace xmm {

enum class PhaseKind { PRETRAIN, LANG_EXTEND, TARGET_TASK, FEW_SHOT };

std::string phase_kind_name(PhaseKind k);
PhaseKind phase_kind_from_name(const std::string& name);

// Training regime for one phase. Defaults echo the published full-scale
// regimes; desk-scale runs override counts and rates explicitly, so every
// resolved config records which regime ran.
struct PhaseConfig {
    PhaseKind kind = PhaseKind::PRETRAIN;
    std::optional<std::size_t> steps;    // PRETRAIN and LANG_EXTEND
    std::optional<std::size_t> epochs;   // TARGET_TASK and FEW_SHOT
    std::size_t batch_size = 8;
    double learning_rate = 1e-3;
    std::uint64_t seed = 1;
    ModelVariant variant = ModelVariant::ADA_MULTI;
    std::string language;                // LANG_EXTEND / FEW_SHOT target
    std::size_t vocab_size = 30000;      // tokenizer budget (PRETRAIN/LANG_EXTEND)
    std::size_t adapter_steps = 0;       // PRETRAIN stage-2 steps per language
    double mask_prob = 0.15;

    static PhaseConfig defaults(PhaseKind kind, ModelVariant variant);
    void validate() const;
    std::string to_json() const;
    // Unset fields fall back to the full-scale defaults for (kind, variant).
    static PhaseConfig from_json(const std::string& text);
};

// Full-scale learning-rate grid for few-shot runs; the larger value is the
// default (training longer with the larger rate works best).
std::pair<double, double> few_shot_lr_grid(ModelVariant variant);
double target_task_default_lr(ModelVariant variant);

// ---- freeze plans ---------------------------------------------------------------

struct FreezePlan {
    std::string name;
    std::function<bool(const ParameterGroupTag&)> trainable;

    // Sets every entry's trainable flag to the predicate value; returns the
    // number of trainable parameters.
    std::size_t apply(ParameterStore& store) const;
};

// The documented trainable sets per (variant, phase). LANG_EXTEND requires a
// target language and is only defined for EMB_SWAP / ADA_MONO; FEW_SHOT
// trains the same parts as TARGET_TASK.
FreezePlan freeze_plan(ModelVariant variant, PhaseKind kind, const std::string& language = "");
// Pretraining stage 2: language-adapter training with a frozen core.
FreezePlan adapter_pretrain_plan(const std::string& language);

// ---- reports --------------------------------------------------------------------

struct TrainReport {
    std::vector<double> losses;            // one entry per optimizer step
    std::vector<double> dev_accuracies;    // epoch-end history (task/few-shot)
    double final_dev_accuracy = 0.0;       // dev accuracy of the retained checkpoint
    std::size_t best_checkpoint_step = 0;
    double wall_seconds = 0.0;

    void save_json(const std::string& path) const;
    void save_losses_csv(const std::string& path) const;
    static TrainReport load_json(const std::string& path);
    // Determinism comparison: everything except wall-clock time.
    bool deterministic_equal(const TrainReport& other) const;
};

// ---- phases ---------------------------------------------------------------------

// Desk-scale stand-in for the excluded full-scale pretraining: MLM over the
// required corpora, then (for adapter variants) per-language adapter training
// with the core frozen. Shared-embedding variants need every configured
// language's corpus; per-language variants take the source corpus only.
Model run_pretrain(const ModelConfig& cfg, const PhaseConfig& phase,
                   const std::map<std::string, std::vector<std::string>>& corpora,
                   TrainReport* report = nullptr);

// Extends EMB_SWAP / ADA_MONO models to a new language: target tokenizer,
// overlap-initialized embedding, optional language adapter, MLM training with
// everything else frozen.
TrainReport run_language_extension(Model& model, const PhaseConfig& phase,
                                   const std::string& target,
                                   const std::vector<std::string>& corpus);

// Source-language fine-tuning with the variant's freeze plan; the model keeps
// the epoch checkpoint with the best dev accuracy.
TrainReport run_target_task(Model& model, const PhaseConfig& phase,
                            const std::vector<QuestionRecord>& train,
                            const std::vector<QuestionRecord>& dev, const RegionIndex& regions,
                            const AnswerVocab& answers);

// Pure evaluation after a language swap; operates on an internal snapshot so
// the caller's model is untouched.
EvalResult run_zero_shot_single(const Model& model, const std::string& target,
                                const std::vector<QuestionRecord>& test, const RegionIndex& regions,
                                const AnswerVocab& answers);
std::map<std::string, EvalResult> run_zero_shot(
    const Model& model, const std::vector<std::string>& targets,
    const std::map<std::string, std::vector<QuestionRecord>>& test_per_language,
    const RegionIndex& regions, const AnswerVocab& answers);

struct FewShotRun {
    std::size_t split_size = 0;
    EvalResult test_result;
    TrainReport report;
};

// Starts each split size from the given zero-shot-ready model: swap to the
// target, fine-tune on the split's questions with the target-task freeze
// plan, select on target dev, evaluate on target test.
std::vector<FewShotRun> run_few_shot(const Model& model, const PhaseConfig& phase,
                                     const std::string& target,
                                     const std::vector<std::size_t>& split_sizes,
                                     const SplitPlan& plan,
                                     const std::vector<QuestionRecord>& target_records,
                                     const std::vector<QuestionRecord>& dev,
                                     const std::vector<QuestionRecord>& test,
                                     const RegionIndex& regions, const AnswerVocab& answers);

// ---- shared helpers ---------------------------------------------------------------

MultimodalInput make_input(const Model& model, const QuestionRecord& record,
                           const RegionIndex& regions, const std::string& language);

// Forward-only VQA scoring; honors XMM_THREADS for sharded evaluation.
EvalResult evaluate_vqa(const Model& model, const std::vector<QuestionRecord>& records,
                        const RegionIndex& regions, const AnswerVocab& answers,
                        const std::string& language);

// Masked-token recovery rate on text sampled from the corpus.
double mlm_eval_accuracy(const Model& model, const std::vector<std::string>& corpus,
                         const std::string& language, std::uint64_t seed, std::size_t samples);

// ---- model bundle I/O ----------------------------------------------------------------

void save_model(const Model& model, const std::string& dir);
Model load_model(const std::string& dir);

}  // namespace xmm

#endif
