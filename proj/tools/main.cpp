// Command-line pipeline: synthetic data generation, the four training
// phases, zero-/few-shot evaluation and the adapter-architecture comparison
// harness. Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "xmm/data.hpp"
#include "xmm/errors.hpp"
#include "xmm/eval.hpp"
#include "xmm/model.hpp"
#include "xmm/phases.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace xmm;

namespace {

std::vector<std::string> split_csv(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

// Run configuration: model + phase settings plus data locations. Unknown
// fields are rejected so typos cannot silently change a run.
struct RunConfig {
    json model = json::object();
    json phase = json::object();
    json pretrain_phase = json::object();
    json task_phase = json::object();
    std::string data_dir;
    std::string checkpoint_in;

    static RunConfig load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw IoError("cannot read config " + path);
        json j;
        try {
            is >> j;
        } catch (const json::exception& e) {
            throw ParseError(std::string("run config: ") + e.what());
        }
        static const std::set<std::string> known = {"model",      "phase",         "pretrain_phase",
                                                    "task_phase", "data_dir",      "checkpoint_in"};
        for (const auto& [key, _] : j.items())
            if (!known.count(key)) throw ParseError("run config: unknown field '" + key + "'");
        RunConfig cfg;
        cfg.model = j.value("model", json::object());
        cfg.phase = j.value("phase", json::object());
        cfg.pretrain_phase = j.value("pretrain_phase", json::object());
        cfg.task_phase = j.value("task_phase", json::object());
        cfg.data_dir = j.value("data_dir", std::string());
        cfg.checkpoint_in = j.value("checkpoint_in", std::string());
        return cfg;
    }
};

void write_json_file(const json& j, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write " + path);
    os << j.dump(2) << "\n";
}

json resolved_run_config(const ModelConfig& model, const PhaseConfig& phase,
                         const std::string& data_dir, const std::string& checkpoint_in) {
    json j;
    j["model"] = json::parse(model.to_json());
    j["phase"] = json::parse(phase.to_json());
    j["data_dir"] = data_dir;
    if (!checkpoint_in.empty()) j["checkpoint_in"] = checkpoint_in;
    return j;
}

ModelConfig resolve_model_config(const RunConfig& run, const Dataset& ds,
                                 const AnswerVocab& answers) {
    json m = run.model;
    if (!m.contains("languages")) m["languages"] = ds.languages();
    if (!m.contains("num_answers")) m["num_answers"] = answers.size();
    if (!m.contains("region_feature_dim")) m["region_feature_dim"] = ds.spec.inventory.feature_dim();
    return ModelConfig::from_json(m.dump());
}

PhaseConfig resolve_phase_config(const json& phase_json, PhaseKind kind) {
    json p = phase_json;
    p["kind"] = phase_kind_name(kind);
    return PhaseConfig::from_json(p.dump());
}

AnswerVocab dataset_answers(const std::string& data_dir) {
    return AnswerVocab::load((fs::path(data_dir) / "answers.txt").string());
}

std::vector<QuestionRecord> task_train_records(const Dataset& ds) {
    return questions_for_images(ds.questions.at(ds.spec.source_language), ds.train_pool_images());
}

std::vector<QuestionRecord> split_records(const Dataset& ds, const std::string& language,
                                          const std::string& split) {
    return questions_for_images(ds.questions.at(language), ds.split.images(split));
}

// ---- subcommands ---------------------------------------------------------------

int cmd_gen_data(std::uint64_t seed, std::size_t scenes, const std::string& languages,
                 std::size_t grid, const std::string& out) {
    DatasetSpec spec;
    spec.seed = seed;
    spec.num_scenes = scenes;
    spec.grid_size = grid;
    auto langs = split_csv(languages);
    if (langs.size() < 2) {
        std::cerr << "gen-data needs a source language and at least one target\n";
        return 2;
    }
    spec.source_language = langs.front();
    spec.target_languages.assign(langs.begin() + 1, langs.end());
    if (scenes < spec.split.test_images + spec.split.dev_images + spec.split.train_sizes.back()) {
        std::cerr << "gen-data: " << scenes << " scenes cannot cover the split schedule\n";
        return 2;
    }
    Dataset ds = generate_dataset(spec);
    save_dataset(ds, out);
    std::cout << "dataset: " << ds.regions.size() << " images, "
              << ds.questions.at(spec.source_language).size() << " questions per language, "
              << ds.languages().size() << " languages -> " << out << "\n";
    return 0;
}

int cmd_train(const std::string& phase_name, const std::string& config_path, const std::string& out,
              bool dry_run) {
    RunConfig run = RunConfig::load(config_path);
    if (run.data_dir.empty()) throw ConfigError("run config needs data_dir");
    Dataset ds = load_dataset(run.data_dir);
    AnswerVocab answers = dataset_answers(run.data_dir);
    const RegionIndex regions = build_region_index(ds.regions);

    PhaseKind kind;
    if (phase_name == "pretrain") kind = PhaseKind::PRETRAIN;
    else if (phase_name == "extend") kind = PhaseKind::LANG_EXTEND;
    else if (phase_name == "task") kind = PhaseKind::TARGET_TASK;
    else if (phase_name == "fewshot") kind = PhaseKind::FEW_SHOT;
    else {
        std::cerr << "unknown phase '" << phase_name << "'\n";
        return 2;
    }

    fs::create_directories(out);
    const std::string ckpt_dir = (fs::path(out) / "checkpoint").string();

    if (kind == PhaseKind::PRETRAIN) {
        ModelConfig model_cfg = resolve_model_config(run, ds, answers);
        PhaseConfig phase = resolve_phase_config(run.phase, kind);
        phase.variant = model_cfg.variant;
        write_json_file(resolved_run_config(model_cfg, phase, run.data_dir, ""),
                        (fs::path(out) / "resolved_config.json").string());
        if (dry_run) return 0;
        TrainReport report;
        Model model = run_pretrain(model_cfg, phase, ds.corpora, &report);
        save_model(model, ckpt_dir);
        answers.save((fs::path(ckpt_dir) / "answers.txt").string());
        report.save_json((fs::path(out) / "report.json").string());
        report.save_losses_csv((fs::path(out) / "losses.csv").string());
        std::cout << "pretrained " << variant_name(model_cfg.variant) << " -> " << ckpt_dir << "\n";
        return 0;
    }

    if (run.checkpoint_in.empty()) throw ConfigError("run config needs checkpoint_in for this phase");
    Model model = load_model(run.checkpoint_in);
    PhaseConfig phase = resolve_phase_config(run.phase, kind);
    phase.variant = model.config.variant;
    write_json_file(resolved_run_config(model.config, phase, run.data_dir, run.checkpoint_in),
                    (fs::path(out) / "resolved_config.json").string());
    if (dry_run) return 0;

    if (kind == PhaseKind::LANG_EXTEND) {
        TrainReport report = run_language_extension(model, phase, phase.language,
                                                    ds.corpora.at(phase.language));
        save_model(model, ckpt_dir);
        answers.save((fs::path(ckpt_dir) / "answers.txt").string());
        report.save_json((fs::path(out) / "report.json").string());
        report.save_losses_csv((fs::path(out) / "losses.csv").string());
        std::cout << "extended to " << phase.language << " -> " << ckpt_dir << "\n";
        return 0;
    }

    if (kind == PhaseKind::TARGET_TASK) {
        const auto train = task_train_records(ds);
        const auto dev = split_records(ds, ds.spec.source_language, "DEV");
        TrainReport report = run_target_task(model, phase, train, dev, regions, answers);
        save_model(model, ckpt_dir);
        answers.save((fs::path(ckpt_dir) / "answers.txt").string());
        report.save_json((fs::path(out) / "report.json").string());
        report.save_losses_csv((fs::path(out) / "losses.csv").string());
        std::cout << "task-tuned (best dev " << report.final_dev_accuracy << ") -> " << ckpt_dir
                  << "\n";
        return 0;
    }

    // FEW_SHOT: run the plan's full size schedule for the target language.
    std::vector<std::size_t> sizes = ds.spec.split.train_sizes;
    std::sort(sizes.begin(), sizes.end());
    const auto& target = phase.language;
    auto runs = run_few_shot(model, phase, target, sizes, ds.split, ds.questions.at(target),
                             split_records(ds, target, "DEV"), split_records(ds, target, "TEST"),
                             regions, answers);
    Report report;
    for (const auto& fs_run : runs)
        report.add_result(variant_name(model.config.variant), target, fs_run.split_size,
                          fs_run.test_result);
    report.save_csv((fs::path(out) / "report.csv").string());
    report.save_json((fs::path(out) / "report.json").string());
    std::cout << "few-shot grid for " << target << " -> " << out << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir,
             const std::string& languages, bool zero_shot, bool few_shot_grid,
             const std::string& config_path, const std::string& report_dir) {
    if (zero_shot == few_shot_grid) {
        std::cerr << "pick exactly one of --zero-shot / --few-shot-grid\n";
        return 2;
    }
    Model model = load_model(checkpoint);
    Dataset ds = load_dataset(data_dir);
    const RegionIndex regions = build_region_index(ds.regions);
    AnswerVocab answers = fs::exists(fs::path(checkpoint) / "answers.txt")
                              ? AnswerVocab::load((fs::path(checkpoint) / "answers.txt").string())
                              : dataset_answers(data_dir);
    auto langs = split_csv(languages);
    if (langs.empty()) {
        std::cerr << "--languages must list at least one language\n";
        return 2;
    }
    for (const auto& lang : langs)
        if (!ds.questions.count(lang)) throw InputError("dataset has no language '" + lang + "'");

    fs::create_directories(report_dir);
    Report report;
    const std::string vn = variant_name(model.config.variant);
    if (zero_shot) {
        std::map<std::string, double> per_language;
        for (const auto& lang : langs) {
            EvalResult result = run_zero_shot_single(model, lang, split_records(ds, lang, "TEST"),
                                                     regions, answers);
            report.add_result(vn, lang, 0, result);
            per_language[lang] = result.overall_accuracy();
            std::printf("zero-shot %-6s %6.2f\n", lang.c_str(), 100.0 * per_language[lang]);
        }
        const std::string source = ds.spec.source_language;
        if (per_language.size() > 1 || !per_language.count(source))
            std::printf("non-source mean  %6.2f\n",
                        100.0 * non_source_mean(per_language, source));
    } else {
        json phase_json = json::object();
        if (!config_path.empty()) phase_json = RunConfig::load(config_path).phase;
        std::vector<std::size_t> sizes = ds.spec.split.train_sizes;
        std::sort(sizes.begin(), sizes.end());
        for (const auto& lang : langs) {
            EvalResult zs = run_zero_shot_single(model, lang, split_records(ds, lang, "TEST"),
                                                 regions, answers);
            report.add_result(vn, lang, 0, zs);
            phase_json["language"] = lang;
            PhaseConfig phase = resolve_phase_config(phase_json, PhaseKind::FEW_SHOT);
            phase.variant = model.config.variant;
            auto runs = run_few_shot(model, phase, lang, sizes, ds.split, ds.questions.at(lang),
                                     split_records(ds, lang, "DEV"), split_records(ds, lang, "TEST"),
                                     regions, answers);
            for (const auto& fs_run : runs)
                report.add_result(vn, lang, fs_run.split_size, fs_run.test_result);
            std::cout << "few-shot grid " << lang << " done\n";
        }
    }
    report.save_csv((fs::path(report_dir) / "report.csv").string());
    report.save_json((fs::path(report_dir) / "report.json").string());
    return 0;
}

int cmd_compare_settings(const std::string& settings_csv, const std::string& config_path,
                         const std::string& out) {
    RunConfig run = RunConfig::load(config_path);
    if (run.data_dir.empty()) throw ConfigError("run config needs data_dir");
    auto setting_names = split_csv(settings_csv);
    if (setting_names.empty()) {
        std::cerr << "--settings must list at least one of S1..S5\n";
        return 2;
    }
    Dataset ds = load_dataset(run.data_dir);
    AnswerVocab answers = dataset_answers(run.data_dir);
    const RegionIndex regions = build_region_index(ds.regions);
    const auto train = task_train_records(ds);
    const auto dev = split_records(ds, ds.spec.source_language, "DEV");

    fs::create_directories(out);
    Report report;
    json core_hashes = json::object();
    for (const auto& name : setting_names) {
        const ArchSetting setting = arch_setting_from_name(name);
        json m = run.model;
        m["arch_setting"] = name;
        RunConfig variant_run = run;
        variant_run.model = m;
        ModelConfig model_cfg = resolve_model_config(variant_run, ds, answers);
        PhaseConfig pre = resolve_phase_config(run.pretrain_phase, PhaseKind::PRETRAIN);
        pre.variant = model_cfg.variant;
        PhaseConfig task = resolve_phase_config(run.task_phase, PhaseKind::TARGET_TASK);
        task.variant = model_cfg.variant;

        // Hash the shared (non-adapter) initialization before any training.
        {
            std::map<std::string, std::size_t> probe_sizes;
            ParameterStore probe = build_parameters(
                model_cfg,
                [&] {
                    std::map<std::string, std::size_t> sizes;
                    if (variant_has_per_language_embeddings(model_cfg.variant))
                        sizes[model_cfg.source_language()] = 64;
                    else
                        sizes[kSharedLanguage] = 64;
                    return sizes;
                }(),
                pre.seed);
            ParameterStore core_only;
            for (const auto& [pname, entry] : probe)
                if (entry.group.kind == GroupKind::CORE_TRANSFORMER)
                    core_only.add(pname, entry.tensor.clone(), entry.group, false);
            core_hashes[name] = store_fingerprint(core_only);
        }

        Model model = run_pretrain(model_cfg, pre, ds.corpora);
        run_target_task(model, task, train, dev, regions, answers);
        for (const auto& lang : ds.languages()) {
            EvalResult result = run_zero_shot_single(model, lang, split_records(ds, lang, "TEST"),
                                                     regions, answers);
            report.add_result(name, lang, 0, result);
        }
        std::cout << "setting " << name << " done\n";
        (void)setting;
    }
    report.save_csv((fs::path(out) / "report.csv").string());
    report.save_json((fs::path(out) / "report.json").string());
    write_json_file(core_hashes, (fs::path(out) / "core_hashes.json").string());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"adapter-based multilingual multimodal VQA pipeline"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic multilingual VQA dataset");
    std::uint64_t seed = 7;
    std::size_t scenes = 240;
    std::size_t grid = 3;
    std::string languages = "en,c1,c2,c3,c4,c5";
    std::string gen_out;
    gen->add_option("--seed", seed, "generator seed");
    gen->add_option("--scenes", scenes, "number of scenes/images");
    gen->add_option("--grid", grid, "scene grid size");
    gen->add_option("--languages", languages, "comma-separated codes, source first");
    gen->add_option("--out", gen_out, "output directory")->required();

    // train
    auto* train = app.add_subcommand("train", "run a training phase");
    std::string train_phase, train_config, train_out;
    bool dry_run = false;
    train->add_option("--phase", train_phase, "pretrain|extend|task|fewshot")->required();
    train->add_option("--config", train_config, "run config JSON")->required();
    train->add_option("--out", train_out, "output directory")->required();
    train->add_flag("--dry-run", dry_run, "resolve and write the config without training");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string eval_ckpt, eval_data, eval_langs, eval_report, eval_config;
    bool zero_shot = false, few_shot_grid = false;
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required();
    eval->add_option("--data", eval_data, "dataset directory")->required();
    eval->add_option("--languages", eval_langs, "comma-separated language codes")->required();
    eval->add_flag("--zero-shot", zero_shot, "zero-shot evaluation");
    eval->add_flag("--few-shot-grid", few_shot_grid, "few-shot curve over the split schedule");
    eval->add_option("--config", eval_config, "run config with few-shot phase settings");
    eval->add_option("--report", eval_report, "report output directory")->required();

    // compare-settings
    auto* cmp = app.add_subcommand("compare-settings", "train and score adapter wirings");
    std::string cmp_settings, cmp_config, cmp_out;
    cmp->add_option("--settings", cmp_settings, "comma-separated subset of S1..S5")->required();
    cmp->add_option("--config", cmp_config, "run config JSON")->required();
    cmp->add_option("--out", cmp_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(seed, scenes, languages, grid, gen_out);
        if (train->parsed()) return cmd_train(train_phase, train_config, train_out, dry_run);
        if (eval->parsed())
            return cmd_eval(eval_ckpt, eval_data, eval_langs, zero_shot, few_shot_grid, eval_config,
                            eval_report);
        if (cmp->parsed()) return cmd_compare_settings(cmp_settings, cmp_config, cmp_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
