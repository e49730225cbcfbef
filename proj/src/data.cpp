#include "xmm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "xmm/errors.hpp"
#include "xmm/textproc.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace xmm {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index) {
    return splitmix64(base ^ splitmix64(stream * 0x100000001B3ULL + index));
}

std::size_t pick(std::mt19937_64& rng, std::size_t n) {
    std::uniform_int_distribution<std::size_t> dist(0, n - 1);
    return dist(rng);
}

bool coin(std::mt19937_64& rng) { return pick(rng, 2) == 1; }

}  // namespace

std::string structural_type_name(StructuralType t) {
    switch (t) {
        case StructuralType::VERIFY: return "verify";
        case StructuralType::QUERY: return "query";
        case StructuralType::CHOOSE: return "choose";
        case StructuralType::LOGICAL: return "logical";
        case StructuralType::COMPARE: return "compare";
    }
    throw ContractError("unknown structural type");
}

StructuralType structural_type_from_name(const std::string& name) {
    if (name == "verify") return StructuralType::VERIFY;
    if (name == "query") return StructuralType::QUERY;
    if (name == "choose") return StructuralType::CHOOSE;
    if (name == "logical") return StructuralType::LOGICAL;
    if (name == "compare") return StructuralType::COMPARE;
    throw ParseError("unknown structural type '" + name + "'");
}

Inventory default_inventory() {
    return Inventory{
        {"ball", "cube", "star", "ring", "block", "cone"},
        {"red", "blue", "green", "yellow"},
        {"small", "large"},
    };
}

const SceneObject* SceneGraph::find_shape(std::size_t shape) const {
    for (const auto& o : objects)
        if (o.shape == shape) return &o;
    return nullptr;
}

bool SceneGraph::has_combo(std::size_t color, std::size_t shape) const {
    for (const auto& o : objects)
        if (o.color == color && o.shape == shape) return true;
    return false;
}

std::pair<SceneGraph, RegionSet> generate_scene(std::uint64_t seed, std::size_t grid_size,
                                                const Inventory& inventory,
                                                const std::string& image_id) {
    if (inventory.shapes.empty() || inventory.colors.empty() || inventory.sizes.empty())
        throw GenerationError("inventory must list shapes, colors and sizes");
    const std::size_t cells = grid_size * grid_size;
    const std::size_t max_objects = std::min({std::size_t{6}, cells, inventory.shapes.size()});
    if (max_objects < 3)
        throw GenerationError("grid of " + std::to_string(cells) +
                              " cells is too small for this inventory (need 3 object slots)");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> count_dist(3, max_objects);
    const std::size_t k = count_dist(rng);

    std::vector<std::size_t> shape_ids(inventory.shapes.size());
    std::iota(shape_ids.begin(), shape_ids.end(), 0);
    std::shuffle(shape_ids.begin(), shape_ids.end(), rng);
    std::vector<std::size_t> cell_ids(cells);
    std::iota(cell_ids.begin(), cell_ids.end(), 0);
    std::shuffle(cell_ids.begin(), cell_ids.end(), rng);

    SceneGraph scene;
    scene.image_id = image_id.empty() ? "img" + std::to_string(seed) : image_id;
    scene.grid_size = grid_size;
    RegionSet regions;
    regions.image_id = scene.image_id;

    std::normal_distribution<double> noise(0.0, kRegionNoiseStd);
    const std::size_t n_shapes = inventory.shapes.size();
    const std::size_t n_colors = inventory.colors.size();
    const std::size_t feature_dim = inventory.feature_dim();
    const double cell = 1.0 / static_cast<double>(grid_size);

    for (std::size_t i = 0; i < k; ++i) {
        SceneObject obj;
        obj.shape = shape_ids[i];
        obj.color = pick(rng, inventory.colors.size());
        obj.size = pick(rng, inventory.sizes.size());
        obj.row = cell_ids[i] / grid_size;
        obj.col = cell_ids[i] % grid_size;
        scene.objects.push_back(obj);

        Region region;
        region.features.assign(feature_dim, 0.0);
        region.features[obj.shape] = 1.0;
        region.features[n_shapes + obj.color] = 1.0;
        region.features[n_shapes + n_colors + obj.size] = 1.0;
        for (auto& f : region.features) f += noise(rng);
        const double x1 = obj.col * cell, y1 = obj.row * cell;
        region.box = {x1, y1, x1 + cell, y1 + cell, cell, cell};
        regions.regions.push_back(std::move(region));
    }
    return {std::move(scene), std::move(regions)};
}

std::array<std::size_t, 3> decode_region_features(const std::vector<double>& features,
                                                  const Inventory& inventory) {
    if (features.size() != inventory.feature_dim())
        throw DimensionError("feature vector of " + std::to_string(features.size()) +
                             " does not match inventory feature dim " +
                             std::to_string(inventory.feature_dim()));
    auto argmax = [&](std::size_t begin, std::size_t count) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < count; ++i)
            if (features[begin + i] > features[begin + best]) best = i;
        return best;
    };
    const std::size_t ns = inventory.shapes.size(), nc = inventory.colors.size();
    return {argmax(0, ns), argmax(ns, nc), argmax(ns + nc, inventory.sizes.size())};
}

// ---- question generation --------------------------------------------------------

QuestionTemplates default_templates() { return QuestionTemplates{default_inventory(), "en"}; }

namespace {

std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) {
        if (!out.empty()) out.push_back(' ');
        out += w;
    }
    return out;
}

struct ComboSample {
    std::size_t color;
    std::size_t shape;
};

ComboSample absent_combo(const SceneGraph& scene, const Inventory& inv, std::mt19937_64& rng) {
    for (int tries = 0; tries < 256; ++tries) {
        ComboSample c{pick(rng, inv.colors.size()), pick(rng, inv.shapes.size())};
        if (!scene.has_combo(c.color, c.shape)) return c;
    }
    throw GenerationError("could not sample an absent color/shape combination");
}

}  // namespace

std::vector<QuestionRecord> generate_questions(const SceneGraph& scene,
                                               const QuestionTemplates& templates,
                                               std::uint64_t seed, std::size_t start_index) {
    const Inventory& inv = templates.inventory;
    if (scene.objects.empty()) throw GenerationError("scene has no objects");
    std::mt19937_64 rng(seed);
    std::vector<QuestionRecord> out;
    std::size_t counter = start_index;
    auto emit = [&](StructuralType type, std::vector<std::string> words, std::string answer) {
        words.push_back("?");
        QuestionRecord rec;
        rec.question_id = scene.image_id + ".q" + std::to_string(counter++);
        rec.image_id = scene.image_id;
        rec.text = join_words(words);
        rec.language = templates.source_language;
        rec.answer = std::move(answer);
        rec.structural_type = type;
        out.push_back(std::move(rec));
    };
    const auto& objs = scene.objects;

    // verify: existence of a color+shape combination, yes/no balanced.
    if (coin(rng)) {
        const auto& o = objs[pick(rng, objs.size())];
        emit(StructuralType::VERIFY,
             {"is", "there", "a", inv.colors[o.color], inv.shapes[o.shape]}, "yes");
    } else {
        const auto c = absent_combo(scene, inv, rng);
        emit(StructuralType::VERIFY, {"is", "there", "a", inv.colors[c.color], inv.shapes[c.shape]},
             "no");
    }

    // query: open attribute question about a uniquely named shape.
    {
        const auto& o = objs[pick(rng, objs.size())];
        if (coin(rng))
            emit(StructuralType::QUERY, {"what", "color", "is", "the", inv.shapes[o.shape]},
                 inv.colors[o.color]);
        else
            emit(StructuralType::QUERY, {"what", "size", "is", "the", inv.shapes[o.shape]},
                 inv.sizes[o.size]);
    }

    // choose: two alternatives, the answer appears in the question.
    {
        const auto& o = objs[pick(rng, objs.size())];
        std::size_t wrong = pick(rng, inv.colors.size() - 1);
        if (wrong >= o.color) ++wrong;
        const std::string right_word = inv.colors[o.color];
        const std::string wrong_word = inv.colors[wrong];
        if (coin(rng))
            emit(StructuralType::CHOOSE,
                 {"is", "the", inv.shapes[o.shape], right_word, "or", wrong_word}, right_word);
        else
            emit(StructuralType::CHOOSE,
                 {"is", "the", inv.shapes[o.shape], wrong_word, "or", right_word}, right_word);
    }

    // logical: conjunction or disjunction of two existence clauses.
    {
        const bool use_and = coin(rng);
        const bool want_yes = coin(rng);
        ComboSample a{}, b{};
        if (use_and && want_yes) {
            const std::size_t i = pick(rng, objs.size());
            std::size_t j = pick(rng, objs.size() - 1);
            if (j >= i) ++j;
            a = {objs[i].color, objs[i].shape};
            b = {objs[j].color, objs[j].shape};
        } else if (use_and) {
            const auto& o = objs[pick(rng, objs.size())];
            a = {o.color, o.shape};
            b = absent_combo(scene, inv, rng);
            if (coin(rng)) std::swap(a, b);
        } else if (want_yes) {
            const auto& o = objs[pick(rng, objs.size())];
            a = {o.color, o.shape};
            b = absent_combo(scene, inv, rng);
            if (coin(rng)) std::swap(a, b);
        } else {
            a = absent_combo(scene, inv, rng);
            b = absent_combo(scene, inv, rng);
        }
        const bool truth = use_and
                               ? scene.has_combo(a.color, a.shape) && scene.has_combo(b.color, b.shape)
                               : scene.has_combo(a.color, a.shape) || scene.has_combo(b.color, b.shape);
        emit(StructuralType::LOGICAL,
             {"is", "there", "a", inv.colors[a.color], inv.shapes[a.shape],
              use_and ? "and" : "or", "a", inv.colors[b.color], inv.shapes[b.shape]},
             truth ? "yes" : "no");
    }

    // compare: attribute equality between two named objects.
    {
        const bool by_color = coin(rng);
        const bool want_yes = coin(rng);
        std::vector<std::pair<std::size_t, std::size_t>> matching, other;
        for (std::size_t i = 0; i < objs.size(); ++i)
            for (std::size_t j = 0; j < objs.size(); ++j) {
                if (i == j) continue;
                const bool same = by_color ? objs[i].color == objs[j].color
                                           : objs[i].size == objs[j].size;
                (same == want_yes ? matching : other).emplace_back(i, j);
            }
        const auto& pool = matching.empty() ? other : matching;
        const auto [i, j] = pool[pick(rng, pool.size())];
        const bool same = by_color ? objs[i].color == objs[j].color : objs[i].size == objs[j].size;
        emit(StructuralType::COMPARE,
             {"is", "the", inv.shapes[objs[i].shape], "the", "same",
              by_color ? "color" : "size", "as", "the", inv.shapes[objs[j].shape]},
             same ? "yes" : "no");
    }
    return out;
}

std::vector<std::string> generate_captions(const SceneGraph& scene, const Inventory& inv,
                                           std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::string> out;
    for (const auto& o : scene.objects) {
        switch (pick(rng, 3)) {
            case 0:
                out.push_back(join_words({"the", inv.colors[o.color], inv.shapes[o.shape], "is",
                                          inv.sizes[o.size], "."}));
                break;
            case 1:
                out.push_back(join_words({"there", "is", "a", inv.colors[o.color],
                                          inv.shapes[o.shape], "."}));
                break;
            default:
                out.push_back(join_words({"the", inv.shapes[o.shape], "is", inv.colors[o.color], "."}));
                break;
        }
        out.push_back(join_words({"the", inv.shapes[o.shape], "is", inv.sizes[o.size], "."}));
    }
    // Grid coordinates: digits are shared across cipher languages and act as
    // alignment anchors in otherwise disjoint corpora.
    for (const auto& o : scene.objects)
        out.push_back(join_words({"the", inv.shapes[o.shape], "is", "in", "row",
                                  std::to_string(o.row + 1), "column", std::to_string(o.col + 1),
                                  "."}));
    if (scene.objects.size() >= 2) {
        const std::size_t i = pick(rng, scene.objects.size());
        std::size_t j = pick(rng, scene.objects.size() - 1);
        if (j >= i) ++j;
        out.push_back(join_words({"the", inv.shapes[scene.objects[i].shape], "and", "the",
                                  inv.shapes[scene.objects[j].shape], "are", "in", "the",
                                  "picture", "."}));
    }
    out.push_back(join_words({"there", "are", std::to_string(scene.objects.size()), "objects", "."}));
    return out;
}

// ---- cipher pseudo-languages -------------------------------------------------------

namespace {

bool is_ascii_alpha_word(const std::string& word) {
    if (word.empty()) return false;
    for (char c : word)
        if (c < 'a' || c > 'z') return false;
    return true;
}

// Injective per-script character maps keep whole-word distinctness intact.
std::string apply_script(const std::string& latin, std::uint64_t key) {
    static const std::vector<std::string> greek = {
        "α", "β", "γ", "δ", "ε", "ζ", "η", "θ", "ι", "κ", "λ", "μ", "ν",
        "ξ", "ο", "π", "ρ", "σ", "τ", "υ", "φ", "χ", "ψ", "ω", "ϋ", "ϊ"};
    static const std::vector<std::string> cyrillic = {
        "а", "б", "в", "г", "д", "е", "ж", "з", "и", "й", "к", "л", "м",
        "н", "о", "п", "р", "с", "т", "у", "ф", "х", "ц", "ч", "ш", "щ"};
    const std::vector<std::string>* table = nullptr;
    if (key % 3 == 1) table = &greek;
    if (key % 3 == 2) table = &cyrillic;
    if (!table) return latin;
    std::string out;
    for (char c : latin) out += (*table)[static_cast<std::size_t>(c - 'a')];
    return out;
}

}  // namespace

std::vector<std::string> generator_lexicon(const Inventory& inventory) {
    std::set<std::string> words = {"is",  "there", "a",    "what", "color", "size", "the",
                                   "or",  "and",   "same", "as",   "are",   "in",   "picture",
                                   "objects", "yes", "no", "next", "to",    "row",  "column"};
    for (const auto& w : inventory.shapes) words.insert(w);
    for (const auto& w : inventory.colors) words.insert(w);
    for (const auto& w : inventory.sizes) words.insert(w);
    return {words.begin(), words.end()};
}

CipherLanguage CipherLanguage::build(const std::string& code, std::uint64_t key,
                                     const std::vector<std::string>& source_lexicon) {
    CipherLanguage lang;
    lang.code_ = code;
    std::mt19937_64 rng(splitmix64(key * 0x9E3779B97F4A7C15ULL + 0x5DEECE66DULL));
    std::string consonant_pool = "bcdfghjklmnpqrstvwxz";
    std::string vowel_pool = "aeiou";
    std::shuffle(consonant_pool.begin(), consonant_pool.end(), rng);
    std::shuffle(vowel_pool.begin(), vowel_pool.end(), rng);
    const std::string consonants = consonant_pool.substr(0, 8);
    const std::string vowels = vowel_pool.substr(0, 3);

    std::set<std::string> source_set(source_lexicon.begin(), source_lexicon.end());
    std::vector<std::string> sorted(source_set.begin(), source_set.end());
    std::set<std::string> used;
    for (const auto& word : sorted) {
        if (!is_ascii_alpha_word(word)) continue;  // digits/punctuation pass through
        std::string nonce;
        do {
            nonce.clear();
            const std::size_t syllables = 2 + pick(rng, 2);
            for (std::size_t s = 0; s < syllables; ++s) {
                nonce += consonants[pick(rng, consonants.size())];
                nonce += vowels[pick(rng, vowels.size())];
            }
        } while (used.count(nonce) || source_set.count(nonce));
        used.insert(nonce);
        const std::string form = apply_script(nonce, key);
        lang.forward_[word] = form;
        lang.inverse_[form] = word;
    }
    return lang;
}

std::string CipherLanguage::translate_text(const std::string& text) const {
    std::vector<std::string> out;
    for (const auto& word : split_words(text)) {
        auto it = forward_.find(word);
        if (it != forward_.end()) {
            out.push_back(it->second);
        } else if (is_ascii_alpha_word(word)) {
            throw ContractError("cipher lexicon does not cover word '" + word + "'");
        } else {
            out.push_back(word);
        }
    }
    return join_words(out);
}

std::string CipherLanguage::invert_text(const std::string& text) const {
    std::vector<std::string> out;
    for (const auto& word : split_words(text)) {
        auto it = inverse_.find(word);
        out.push_back(it != inverse_.end() ? it->second : word);
    }
    return join_words(out);
}

QuestionRecord CipherLanguage::translate(const QuestionRecord& record) const {
    QuestionRecord out = record;
    out.text = translate_text(record.text);
    out.language = code_;
    return out;  // answer stays in source form
}

std::vector<std::string> CipherLanguage::lexicon() const {
    std::vector<std::string> out;
    for (const auto& [_, form] : forward_) out.push_back(form);
    std::sort(out.begin(), out.end());
    return out;
}

QuestionRecord cipher_translate(const QuestionRecord& record, const CipherLanguage& language) {
    return language.translate(record);
}

// ---- splits --------------------------------------------------------------------

std::string train_split_name(std::size_t size) { return "TRAIN_" + std::to_string(size); }

const std::vector<std::string>& SplitPlan::images(const std::string& name) const {
    auto it = splits.find(name);
    if (it == splits.end()) throw SplitError("no split named '" + name + "'");
    return it->second;
}

bool SplitPlan::image_in(const std::string& name, const std::string& image_id) const {
    const auto& ids = images(name);
    return std::binary_search(ids.begin(), ids.end(), image_id);
}

void SplitPlan::save(const std::string& path) const {
    json j;
    j["seed"] = seed;
    json s = json::object();
    for (const auto& [name, ids] : splits) s[name] = ids;
    j["splits"] = s;
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write split plan " + path);
    os << j.dump(2) << "\n";
}

SplitPlan SplitPlan::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read split plan " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ParseError(std::string("split plan: ") + e.what());
    }
    SplitPlan plan;
    plan.seed = j.value("seed", 0ULL);
    for (const auto& [name, ids] : j.at("splits").items()) {
        auto list = ids.get<std::vector<std::string>>();
        std::sort(list.begin(), list.end());
        plan.splits[name] = std::move(list);
    }
    return plan;
}

std::map<StructuralType, double> type_distribution(const std::vector<QuestionRecord>& records) {
    std::map<StructuralType, double> dist;
    if (records.empty()) return dist;
    for (const auto& r : records) dist[r.structural_type] += 1.0;
    for (auto& [_, v] : dist) v /= static_cast<double>(records.size());
    return dist;
}

double type_distribution_l1(const std::map<StructuralType, double>& a,
                            const std::map<StructuralType, double>& b) {
    double total = 0.0;
    for (const auto& [k, v] : a) {
        auto it = b.find(k);
        total += std::abs(v - (it == b.end() ? 0.0 : it->second));
    }
    for (const auto& [k, v] : b)
        if (!a.count(k)) total += std::abs(v);
    return total;
}

std::vector<QuestionRecord> questions_for_images(const std::vector<QuestionRecord>& records,
                                                 const std::vector<std::string>& image_ids) {
    std::set<std::string> wanted(image_ids.begin(), image_ids.end());
    std::vector<QuestionRecord> out;
    for (const auto& r : records)
        if (wanted.count(r.image_id)) out.push_back(r);
    return out;
}

namespace {

using TypeCounts = std::array<std::size_t, kNumStructuralTypes>;

double counts_l1_vs_global(const TypeCounts& counts, std::size_t total,
                           const std::array<double, kNumStructuralTypes>& global) {
    double l1 = 0.0;
    for (std::size_t t = 0; t < kNumStructuralTypes; ++t) {
        const double p = total == 0 ? 0.0 : static_cast<double>(counts[t]) / static_cast<double>(total);
        l1 += std::abs(p - global[t]);
    }
    return l1;
}

}  // namespace

SplitPlan make_few_shot_splits(const std::vector<QuestionRecord>& records,
                               const std::vector<std::string>& image_ids, const SplitSpec& spec,
                               std::uint64_t seed) {
    if (records.empty()) throw SplitError("no question records");
    if (spec.train_sizes.empty()) throw SplitError("no train sizes requested");
    std::vector<std::size_t> sizes = spec.train_sizes;
    std::sort(sizes.begin(), sizes.end());
    const std::size_t need = spec.test_images + spec.dev_images + sizes.back();
    if (image_ids.size() < need)
        throw SplitError("need " + std::to_string(need) + " images, have " +
                         std::to_string(image_ids.size()));

    std::map<std::string, TypeCounts> image_counts;
    for (const auto& id : image_ids) image_counts[id] = TypeCounts{};
    std::array<double, kNumStructuralTypes> global{};
    for (const auto& r : records) {
        auto it = image_counts.find(r.image_id);
        if (it == image_counts.end())
            throw SplitError("question " + r.question_id + " references unknown image " + r.image_id);
        it->second[static_cast<std::size_t>(r.structural_type)] += 1;
        global[static_cast<std::size_t>(r.structural_type)] += 1.0;
    }
    for (const auto& [id, counts] : image_counts) {
        std::size_t total = 0;
        for (auto c : counts) total += c;
        if (total == 0) throw SplitError("image " + id + " carries no questions");
    }
    for (auto& g : global) g /= static_cast<double>(records.size());

    std::vector<std::string> remaining(image_ids.begin(), image_ids.end());
    std::sort(remaining.begin(), remaining.end());
    std::mt19937_64 rng(seed);
    std::shuffle(remaining.begin(), remaining.end(), rng);

    // Greedily grow a split: each step adds the candidate whose inclusion
    // keeps the running type distribution closest to the global one.
    auto grow = [&](std::vector<std::string>& members, TypeCounts& counts, std::size_t& q_total,
                    std::size_t target_images) {
        while (members.size() < target_images) {
            if (remaining.empty()) throw SplitError("ran out of images");
            double best = -1.0;
            std::size_t best_idx = 0;
            for (std::size_t i = 0; i < remaining.size(); ++i) {
                const auto& cand = image_counts.at(remaining[i]);
                TypeCounts merged = counts;
                std::size_t merged_total = q_total;
                for (std::size_t t = 0; t < kNumStructuralTypes; ++t) {
                    merged[t] += cand[t];
                    merged_total += cand[t];
                }
                const double l1 = counts_l1_vs_global(merged, merged_total, global);
                if (best < 0.0 || l1 < best) {
                    best = l1;
                    best_idx = i;
                }
            }
            const std::string chosen = remaining[best_idx];
            remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best_idx));
            const auto& cand = image_counts.at(chosen);
            for (std::size_t t = 0; t < kNumStructuralTypes; ++t) {
                counts[t] += cand[t];
                q_total += cand[t];
            }
            members.push_back(chosen);
        }
    };

    SplitPlan plan;
    plan.seed = seed;
    auto build_split = [&](const std::string& name, std::size_t images) {
        std::vector<std::string> members;
        TypeCounts counts{};
        std::size_t total = 0;
        grow(members, counts, total, images);
        std::sort(members.begin(), members.end());
        plan.splits[name] = std::move(members);
    };
    build_split("TEST", spec.test_images);
    build_split("DEV", spec.dev_images);

    // Nested train splits: grow one member list through the size schedule.
    std::vector<std::string> train_members;
    TypeCounts train_counts{};
    std::size_t train_total = 0;
    for (std::size_t size : sizes) {
        grow(train_members, train_counts, train_total, size);
        auto sorted = train_members;
        std::sort(sorted.begin(), sorted.end());
        plan.splits[train_split_name(size)] = std::move(sorted);
    }

    for (const auto& [name, ids] : plan.splits) {
        const auto qs = questions_for_images(records, ids);
        std::map<StructuralType, double> dist = type_distribution(qs);
        std::map<StructuralType, double> gdist;
        for (std::size_t t = 0; t < kNumStructuralTypes; ++t)
            if (global[t] > 0.0) gdist[static_cast<StructuralType>(t)] = global[t];
        if (type_distribution_l1(dist, gdist) > kStratificationTolerance + 1e-12)
            throw SplitError("split " + name + " cannot meet the stratification tolerance");
    }
    return plan;
}

// ---- answer vocabulary -------------------------------------------------------------

AnswerVocab::AnswerVocab(std::vector<std::string> sorted_answers) : answers_(std::move(sorted_answers)) {
    for (std::size_t i = 0; i < answers_.size(); ++i) {
        if (!index_.emplace(answers_[i], i).second)
            throw InputError("duplicate answer '" + answers_[i] + "'");
    }
}

std::size_t AnswerVocab::lookup(const std::string& answer) const {
    auto it = index_.find(answer);
    return it == index_.end() ? kOutOfVocab : it->second;
}

void AnswerVocab::save(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write answer vocabulary " + path);
    for (const auto& a : answers_) os << a << "\n";
}

AnswerVocab AnswerVocab::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read answer vocabulary " + path);
    std::vector<std::string> answers;
    std::string line;
    while (std::getline(is, line))
        if (!line.empty()) answers.push_back(line);
    return AnswerVocab(std::move(answers));
}

AnswerVocab build_answer_vocab(const std::vector<QuestionRecord>& train_records) {
    if (train_records.empty()) throw InputError("build_answer_vocab: no training records");
    std::set<std::string> uniq;
    for (const auto& r : train_records) {
        if (r.answer.empty()) throw InputError("record " + r.question_id + " has empty answer");
        uniq.insert(r.answer);
    }
    return AnswerVocab(std::vector<std::string>(uniq.begin(), uniq.end()));
}

// ---- file I/O ------------------------------------------------------------------

std::vector<QuestionRecord> load_xgqa(const std::string& path, const std::string& language) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read question file " + path);
    std::vector<QuestionRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        auto field = [&](const char* name) -> std::string {
            if (!j.contains(name))
                throw ParseError(path + ":" + std::to_string(line_no) + ": missing field '" +
                                 name + "'");
            if (!j.at(name).is_string())
                throw ParseError(path + ":" + std::to_string(line_no) + ": field '" + name +
                                 "' must be a string");
            return j.at(name).get<std::string>();
        };
        QuestionRecord rec;
        rec.question_id = field("question_id");
        rec.image_id = field("image_id");
        rec.text = normalize_text(field("text"));
        rec.language = field("language");
        rec.answer = field("answer");
        try {
            rec.structural_type = structural_type_from_name(field("structural_type"));
        } catch (const ParseError& e) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (rec.answer.empty())
            throw ParseError(path + ":" + std::to_string(line_no) + ": empty answer");
        if (rec.language != language)
            throw ParseError(path + ":" + std::to_string(line_no) + ": expected language '" +
                             language + "', found '" + rec.language + "'");
        out.push_back(std::move(rec));
    }
    return out;
}

void save_questions(const std::vector<QuestionRecord>& records, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write question file " + path);
    for (const auto& r : records) {
        json j;
        j["question_id"] = r.question_id;
        j["image_id"] = r.image_id;
        j["text"] = r.text;
        j["language"] = r.language;
        j["answer"] = r.answer;
        j["structural_type"] = structural_type_name(r.structural_type);
        os << j.dump() << "\n";
    }
}

namespace {

template <typename T>
void write_raw(std::ofstream& os, const T& value) {
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& is, const std::string& path) {
    T value;
    is.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!is) throw IoError("truncated region file " + path);
    return value;
}

}  // namespace

void save_region_sets(const std::vector<RegionSet>& sets, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write region file " + path);
    os.write(kRegionMagic, sizeof(kRegionMagic));
    write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(sets.size()));
    for (const auto& set : sets) {
        if (set.regions.empty()) throw InputError("region set " + set.image_id + " is empty");
        write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(set.image_id.size()));
        os.write(set.image_id.data(), static_cast<std::streamsize>(set.image_id.size()));
        const std::uint32_t n = static_cast<std::uint32_t>(set.regions.size());
        const std::uint32_t f = static_cast<std::uint32_t>(set.regions.front().features.size());
        write_raw(os, n);
        write_raw(os, f);
        for (const auto& region : set.regions) {
            if (region.features.size() != f)
                throw InputError("inconsistent feature dims in " + set.image_id);
            for (double v : region.features) write_raw<float>(os, static_cast<float>(v));
            for (double v : region.box) write_raw<float>(os, static_cast<float>(v));
        }
    }
    if (!os) throw IoError("failed writing region file " + path);
}

std::vector<RegionSet> load_region_sets(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read region file " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kRegionMagic, sizeof(magic)) != 0)
        throw ParseError("bad region magic in " + path);
    const auto count = read_raw<std::uint32_t>(is, path);
    std::vector<RegionSet> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto id_len = read_raw<std::uint32_t>(is, path);
        std::string id(id_len, '\0');
        is.read(id.data(), id_len);
        if (!is) throw IoError("truncated region file " + path);
        const auto n = read_raw<std::uint32_t>(is, path);
        const auto f = read_raw<std::uint32_t>(is, path);
        RegionSet set;
        set.image_id = std::move(id);
        set.regions.resize(n);
        for (auto& region : set.regions) {
            region.features.resize(f);
            for (auto& v : region.features) v = read_raw<float>(is, path);
            for (auto& v : region.box) v = read_raw<float>(is, path);
        }
        out.push_back(std::move(set));
    }
    return out;
}

RegionIndex build_region_index(const std::vector<RegionSet>& sets) {
    RegionIndex index;
    for (const auto& set : sets) index[set.image_id] = set;
    return index;
}

// ---- whole-dataset generation -------------------------------------------------------

std::vector<std::string> Dataset::languages() const {
    std::vector<std::string> out = {spec.source_language};
    out.insert(out.end(), spec.target_languages.begin(), spec.target_languages.end());
    return out;
}

std::vector<std::string> Dataset::train_pool_images() const {
    std::set<std::string> excluded;
    for (const auto& id : split.images("TEST")) excluded.insert(id);
    for (const auto& id : split.images("DEV")) excluded.insert(id);
    std::vector<std::string> out;
    for (const auto& set : regions)
        if (!excluded.count(set.image_id)) out.push_back(set.image_id);
    return out;
}

Dataset generate_dataset(const DatasetSpec& spec) {
    Dataset ds;
    ds.spec = spec;
    QuestionTemplates templates{spec.inventory, spec.source_language};

    std::vector<QuestionRecord> source_questions;
    std::map<std::string, std::vector<std::string>> captions_by_image;
    char buf[16];
    for (std::size_t i = 0; i < spec.num_scenes; ++i) {
        std::snprintf(buf, sizeof(buf), "img%05zu", i);
        auto [scene, regions] = generate_scene(derive_seed(spec.seed, 1, i), spec.grid_size,
                                               spec.inventory, buf);
        ds.regions.push_back(std::move(regions));
        const std::size_t rounds = std::max<std::size_t>(1, spec.question_rounds);
        for (std::size_t round = 0; round < rounds; ++round) {
            auto qs = generate_questions(scene, templates, derive_seed(spec.seed, 2 + 11 * round, i),
                                         round * kNumStructuralTypes);
            source_questions.insert(source_questions.end(), qs.begin(), qs.end());
        }
        captions_by_image[scene.image_id] =
            generate_captions(scene, spec.inventory, derive_seed(spec.seed, 3, i));
    }

    std::vector<std::string> image_ids;
    for (const auto& set : ds.regions) image_ids.push_back(set.image_id);
    ds.split = make_few_shot_splits(source_questions, image_ids, spec.split, spec.seed);

    // Unlabeled text: captions and question texts from non-test images only.
    std::vector<std::string> source_corpus;
    for (const auto& [image_id, lines] : captions_by_image)
        if (!ds.split.image_in("TEST", image_id))
            source_corpus.insert(source_corpus.end(), lines.begin(), lines.end());
    for (const auto& r : source_questions)
        if (!ds.split.image_in("TEST", r.image_id)) source_corpus.push_back(r.text);

    ds.questions[spec.source_language] = source_questions;
    ds.corpora[spec.source_language] = source_corpus;

    const auto lexicon = generator_lexicon(spec.inventory);
    for (std::size_t t = 0; t < spec.target_languages.size(); ++t) {
        const std::string& code = spec.target_languages[t];
        CipherLanguage cipher = CipherLanguage::build(code, t + 1, lexicon);
        std::vector<QuestionRecord> translated;
        translated.reserve(source_questions.size());
        for (const auto& r : source_questions) translated.push_back(cipher.translate(r));
        ds.questions[code] = std::move(translated);
        std::vector<std::string> corpus;
        corpus.reserve(source_corpus.size());
        for (const auto& line : source_corpus) corpus.push_back(cipher.translate_text(line));
        ds.corpora[code] = std::move(corpus);
    }
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
    fs::create_directories(dir);
    json meta;
    meta["seed"] = ds.spec.seed;
    meta["num_scenes"] = ds.spec.num_scenes;
    meta["grid_size"] = ds.spec.grid_size;
    meta["question_rounds"] = ds.spec.question_rounds;
    meta["source_language"] = ds.spec.source_language;
    meta["target_languages"] = ds.spec.target_languages;
    meta["inventory"] = {{"shapes", ds.spec.inventory.shapes},
                         {"colors", ds.spec.inventory.colors},
                         {"sizes", ds.spec.inventory.sizes}};
    meta["split_spec"] = {{"train_sizes", ds.spec.split.train_sizes},
                          {"test_images", ds.spec.split.test_images},
                          {"dev_images", ds.spec.split.dev_images}};
    std::ofstream os(fs::path(dir) / "dataset.json");
    if (!os) throw IoError("cannot write dataset manifest in " + dir);
    os << meta.dump(2) << "\n";

    save_region_sets(ds.regions, (fs::path(dir) / "regions.bin").string());
    ds.split.save((fs::path(dir) / "split_plan.json").string());
    for (const auto& [lang, records] : ds.questions)
        save_questions(records, (fs::path(dir) / ("questions." + lang + ".jsonl")).string());
    for (const auto& [lang, lines] : ds.corpora) {
        std::ofstream cs(fs::path(dir) / ("corpus." + lang + ".txt"), std::ios::trunc);
        if (!cs) throw IoError("cannot write corpus for " + lang);
        for (const auto& line : lines) cs << line << "\n";
    }

    const auto pool = ds.train_pool_images();
    const auto train_records =
        questions_for_images(ds.questions.at(ds.spec.source_language), pool);
    build_answer_vocab(train_records).save((fs::path(dir) / "answers.txt").string());
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream is(fs::path(dir) / "dataset.json");
    if (!is) throw IoError("cannot read dataset manifest in " + dir);
    json meta;
    try {
        is >> meta;
    } catch (const json::exception& e) {
        throw ParseError(std::string("dataset.json: ") + e.what());
    }
    Dataset ds;
    ds.spec.seed = meta.at("seed").get<std::uint64_t>();
    ds.spec.num_scenes = meta.at("num_scenes").get<std::size_t>();
    ds.spec.grid_size = meta.at("grid_size").get<std::size_t>();
    ds.spec.question_rounds = meta.value("question_rounds", std::size_t{1});
    ds.spec.source_language = meta.at("source_language").get<std::string>();
    ds.spec.target_languages = meta.at("target_languages").get<std::vector<std::string>>();
    ds.spec.inventory.shapes = meta.at("inventory").at("shapes").get<std::vector<std::string>>();
    ds.spec.inventory.colors = meta.at("inventory").at("colors").get<std::vector<std::string>>();
    ds.spec.inventory.sizes = meta.at("inventory").at("sizes").get<std::vector<std::string>>();
    ds.spec.split.train_sizes = meta.at("split_spec").at("train_sizes").get<std::vector<std::size_t>>();
    ds.spec.split.test_images = meta.at("split_spec").at("test_images").get<std::size_t>();
    ds.spec.split.dev_images = meta.at("split_spec").at("dev_images").get<std::size_t>();

    ds.regions = load_region_sets((fs::path(dir) / "regions.bin").string());
    ds.split = SplitPlan::load((fs::path(dir) / "split_plan.json").string());
    for (const auto& lang : ds.languages()) {
        ds.questions[lang] =
            load_xgqa((fs::path(dir) / ("questions." + lang + ".jsonl")).string(), lang);
        std::ifstream cs(fs::path(dir) / ("corpus." + lang + ".txt"));
        if (!cs) throw IoError("cannot read corpus for " + lang);
        std::vector<std::string> lines;
        std::string line;
        while (std::getline(cs, line))
            if (!line.empty()) lines.push_back(line);
        ds.corpora[lang] = std::move(lines);
    }
    return ds;
}

}  // namespace xmm
