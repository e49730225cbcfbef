#include "xmm/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "xmm/errors.hpp"

using json = nlohmann::json;

namespace xmm {

double EvalResult::overall_accuracy() const {
    if (rows.empty()) throw InputError("overall_accuracy: no rows");
    std::size_t correct = 0;
    for (const auto& r : rows) correct += r.predicted == r.gold ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(rows.size());
}

std::map<StructuralType, double> EvalResult::per_type_accuracy() const {
    return accuracy_by_type(rows);
}

std::map<StructuralType, std::size_t> EvalResult::per_type_counts() const {
    std::map<StructuralType, std::size_t> out;
    for (const auto& r : rows) out[r.structural_type] += 1;
    return out;
}

double accuracy(const std::vector<std::size_t>& preds, const std::vector<std::size_t>& golds) {
    if (preds.size() != golds.size())
        throw InputError("accuracy: " + std::to_string(preds.size()) + " predictions vs " +
                         std::to_string(golds.size()) + " golds");
    if (preds.empty()) throw InputError("accuracy: empty input");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == golds[i] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(preds.size());
}

std::map<StructuralType, double> accuracy_by_type(const std::vector<EvalRow>& rows) {
    std::map<StructuralType, std::pair<std::size_t, std::size_t>> tallies;  // correct, total
    for (const auto& r : rows) {
        auto& [correct, total] = tallies[r.structural_type];
        total += 1;
        correct += r.predicted == r.gold ? 1 : 0;
    }
    std::map<StructuralType, double> out;
    for (const auto& [type, tally] : tallies)
        out[type] = static_cast<double>(tally.first) / static_cast<double>(tally.second);
    return out;
}

std::map<std::string, double> accuracy_by_language(const std::vector<EvalRow>& rows) {
    std::map<std::string, std::pair<std::size_t, std::size_t>> tallies;
    for (const auto& r : rows) {
        auto& [correct, total] = tallies[r.language];
        total += 1;
        correct += r.predicted == r.gold ? 1 : 0;
    }
    std::map<std::string, double> out;
    for (const auto& [lang, tally] : tallies)
        out[lang] = static_cast<double>(tally.first) / static_cast<double>(tally.second);
    return out;
}

double non_source_mean(const std::map<std::string, double>& per_language,
                       const std::string& source) {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& [lang, acc] : per_language) {
        if (lang == source) continue;
        total += acc;
        count += 1;
    }
    if (count == 0) throw InputError("non_source_mean: only the source language is present");
    return total / static_cast<double>(count);
}

void Report::add_result(const std::string& variant, const std::string& language,
                        std::size_t split_size, const EvalResult& result) {
    ReportRow all;
    all.variant = variant;
    all.language = language;
    all.split_size = split_size;
    all.structural_type = "ALL";
    all.count = result.rows.size();
    all.accuracy = result.overall_accuracy();
    rows.push_back(all);
    const auto counts = result.per_type_counts();
    for (const auto& [type, acc] : result.per_type_accuracy()) {
        ReportRow row = all;
        row.structural_type = structural_type_name(type);
        row.count = counts.at(type);
        row.accuracy = acc;
        rows.push_back(row);
    }
}

std::map<std::string, std::map<std::string, double>> Report::zero_shot_matrix() const {
    std::map<std::string, std::map<std::string, double>> out;
    for (const auto& r : rows)
        if (r.structural_type == "ALL" && r.split_size == 0) out[r.variant][r.language] = r.accuracy;
    return out;
}

void Report::save_csv(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write report " + path);
    os << "variant,language,split_size,structural_type,count,accuracy\n";
    char buf[32];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.6f", r.accuracy);
        os << r.variant << "," << r.language << "," << r.split_size << "," << r.structural_type
           << "," << r.count << "," << buf << "\n";
    }
    if (!os) throw IoError("failed writing report " + path);
}

void Report::save_json(const std::string& path) const {
    json j = json::array();
    for (const auto& r : rows) {
        j.push_back({{"variant", r.variant},
                     {"language", r.language},
                     {"split_size", r.split_size},
                     {"structural_type", r.structural_type},
                     {"count", r.count},
                     {"accuracy", r.accuracy}});
    }
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write report " + path);
    os << j.dump(2) << "\n";
}

Report Report::load_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read report " + path);
    Report report;
    std::string line;
    if (!std::getline(is, line)) throw ParseError("report " + path + " is empty");
    if (line != "variant,language,split_size,structural_type,count,accuracy")
        throw ParseError("report " + path + " has unexpected header");
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != 6)
            throw ParseError(path + ":" + std::to_string(line_no) + ": expected 6 fields");
        ReportRow r;
        r.variant = fields[0];
        r.language = fields[1];
        r.split_size = std::stoul(fields[2]);
        r.structural_type = fields[3];
        r.count = std::stoul(fields[4]);
        r.accuracy = std::stod(fields[5]);
        report.rows.push_back(std::move(r));
    }
    return report;
}

Report Report::load_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read report " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ParseError(std::string("report: ") + e.what());
    }
    Report report;
    for (const auto& e : j) {
        ReportRow r;
        r.variant = e.at("variant").get<std::string>();
        r.language = e.at("language").get<std::string>();
        r.split_size = e.at("split_size").get<std::size_t>();
        r.structural_type = e.at("structural_type").get<std::string>();
        r.count = e.at("count").get<std::size_t>();
        r.accuracy = e.at("accuracy").get<double>();
        report.rows.push_back(std::move(r));
    }
    return report;
}

void emit_report(const Report& report, const std::string& format, const std::string& out_path) {
    if (report.rows.empty()) throw InputError("emit_report: empty report");
    if (format == "json")
        report.save_json(out_path);
    else if (format == "csv")
        report.save_csv(out_path);
    else
        throw InputError("emit_report: unknown format '" + format + "'");
}

SeedStats aggregate_seeds(const std::vector<double>& values) {
    if (values.empty()) throw InputError("aggregate_seeds: no values");
    SeedStats stats;
    for (double v : values) stats.mean += v;
    stats.mean /= static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - stats.mean) * (v - stats.mean);
        stats.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return stats;
}

}  // namespace xmm
