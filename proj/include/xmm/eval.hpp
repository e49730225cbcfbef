#ifndef XMM_EVAL_HPP
#define XMM_EVAL_HPP

#include <map>
#include <string>
#include <vector>

#include "xmm/data.hpp"

namespace xmm {

// One scored example. Gold may be AnswerVocab::kOutOfVocab, which can never
// match a prediction.
struct EvalRow {
    std::string question_id;
    std::size_t predicted = 0;
    std::size_t gold = 0;
    StructuralType structural_type = StructuralType::VERIFY;
    std::string language;
};

struct EvalResult {
    std::vector<EvalRow> rows;

    double overall_accuracy() const;
    std::map<StructuralType, double> per_type_accuracy() const;
    std::map<StructuralType, std::size_t> per_type_counts() const;
};

double accuracy(const std::vector<std::size_t>& preds, const std::vector<std::size_t>& golds);
std::map<StructuralType, double> accuracy_by_type(const std::vector<EvalRow>& rows);
std::map<std::string, double> accuracy_by_language(const std::vector<EvalRow>& rows);

// Mean over target languages, excluding the source language.
double non_source_mean(const std::map<std::string, double>& per_language,
                       const std::string& source);

// Report rows follow the stable CSV schema
// variant,language,split_size,structural_type,count,accuracy where
// structural_type "ALL" marks overall rows and split_size 0 means zero-shot.
struct ReportRow {
    std::string variant;
    std::string language;
    std::size_t split_size = 0;
    std::string structural_type = "ALL";
    std::size_t count = 0;
    double accuracy = 0.0;
};

struct Report {
    std::vector<ReportRow> rows;

    void add_result(const std::string& variant, const std::string& language, std::size_t split_size,
                    const EvalResult& result);
    // Zero-shot matrix: variant -> language -> accuracy from the ALL rows.
    std::map<std::string, std::map<std::string, double>> zero_shot_matrix() const;

    void save_csv(const std::string& path) const;
    void save_json(const std::string& path) const;
    static Report load_csv(const std::string& path);
    static Report load_json(const std::string& path);
};

void emit_report(const Report& report, const std::string& format, const std::string& out_path);

// Mean/stddev aggregation over per-seed accuracy values.
struct SeedStats {
    double mean = 0.0;
    double stddev = 0.0;
};
SeedStats aggregate_seeds(const std::vector<double>& values);

}  // namespace xmm

#endif
