#ifndef XMM_DATA_HPP
#define XMM_DATA_HPP

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace xmm {

enum class StructuralType { VERIFY, QUERY, CHOOSE, LOGICAL, COMPARE };

std::string structural_type_name(StructuralType t);
StructuralType structural_type_from_name(const std::string& name);
inline constexpr std::size_t kNumStructuralTypes = 5;

struct QuestionRecord {
    std::string question_id;
    std::string image_id;
    std::string text;
    std::string language;
    std::string answer;
    StructuralType structural_type = StructuralType::VERIFY;

    bool operator==(const QuestionRecord&) const = default;
};

struct Region {
    std::vector<double> features;
    std::array<double, 6> box{};  // x1,y1,x2,y2,w,h in [0,1]
};

struct RegionSet {
    std::string image_id;
    std::vector<Region> regions;
};

using RegionIndex = std::map<std::string, RegionSet>;

// ---- synthetic scenes ---------------------------------------------------------

struct Inventory {
    std::vector<std::string> shapes;
    std::vector<std::string> colors;
    std::vector<std::string> sizes;

    std::size_t feature_dim() const { return shapes.size() + colors.size() + sizes.size() + 2; }
};

Inventory default_inventory();

struct SceneObject {
    std::size_t shape = 0;  // indices into the inventory
    std::size_t color = 0;
    std::size_t size = 0;
    std::size_t row = 0;
    std::size_t col = 0;
};

// Grid scene; every object occupies one cell and shapes are distinct, so "the
// <shape>" is always a unique reference.
struct SceneGraph {
    std::string image_id;
    std::size_t grid_size = 3;
    std::vector<SceneObject> objects;

    const SceneObject* find_shape(std::size_t shape) const;
    bool has_combo(std::size_t color, std::size_t shape) const;
};

inline constexpr double kRegionNoiseStd = 0.05;

std::pair<SceneGraph, RegionSet> generate_scene(std::uint64_t seed, std::size_t grid_size,
                                                const Inventory& inventory,
                                                const std::string& image_id = "");

// Nearest-prototype decoding of a region feature vector back to attribute
// indices (shape, color, size).
std::array<std::size_t, 3> decode_region_features(const std::vector<double>& features,
                                                  const Inventory& inventory);

// ---- question generation --------------------------------------------------------

// Word patterns for the five structural types. `{}` slots are filled with
// attribute/shape words at generation time.
struct QuestionTemplates {
    Inventory inventory;
    std::string source_language = "en";
};

QuestionTemplates default_templates();

// One question per structural type, answers computed from the scene graph.
// start_index offsets the per-image question numbering so repeated rounds on
// the same scene keep unique ids.
std::vector<QuestionRecord> generate_questions(const SceneGraph& scene,
                                               const QuestionTemplates& templates,
                                               std::uint64_t seed, std::size_t start_index = 0);

// Declarative sentences about a scene, used as unlabeled pretraining text.
std::vector<std::string> generate_captions(const SceneGraph& scene, const Inventory& inventory,
                                           std::uint64_t seed);

// ---- cipher pseudo-languages ------------------------------------------------------

// Deterministic word-level bijection between the source lexicon and invented
// word forms, with an optional per-language script substitution. Digits and
// punctuation pass through, answers stay in source form.
class CipherLanguage {
public:
    static CipherLanguage build(const std::string& code, std::uint64_t key,
                                const std::vector<std::string>& source_lexicon);

    const std::string& code() const { return code_; }
    std::string translate_text(const std::string& text) const;
    std::string invert_text(const std::string& text) const;
    QuestionRecord translate(const QuestionRecord& record) const;
    std::vector<std::string> lexicon() const;

private:
    std::string code_;
    std::map<std::string, std::string> forward_;
    std::map<std::string, std::string> inverse_;
};

QuestionRecord cipher_translate(const QuestionRecord& record, const CipherLanguage& language);

// Every distinct word the generator can emit (template words, attribute
// names, digits); the domain of every cipher bijection.
std::vector<std::string> generator_lexicon(const Inventory& inventory);

// ---- splits -------------------------------------------------------------------

struct SplitPlan {
    std::uint64_t seed = 0;
    std::map<std::string, std::vector<std::string>> splits;  // split name -> sorted image ids

    const std::vector<std::string>& images(const std::string& name) const;
    bool image_in(const std::string& name, const std::string& image_id) const;

    void save(const std::string& path) const;
    static SplitPlan load(const std::string& path);
};

std::string train_split_name(std::size_t size);

struct SplitSpec {
    std::vector<std::size_t> train_sizes = {1, 5, 10, 20, 25, 48};
    std::size_t test_images = 40;
    std::size_t dev_images = 20;
};

// Image-level greedy stratified split: TEST, DEV and nested TRAIN_k sets whose
// structural-type distribution stays within L1 <= 0.05 of the global one.
SplitPlan make_few_shot_splits(const std::vector<QuestionRecord>& records,
                               const std::vector<std::string>& image_ids, const SplitSpec& spec,
                               std::uint64_t seed);

inline constexpr double kStratificationTolerance = 0.05;

std::map<StructuralType, double> type_distribution(const std::vector<QuestionRecord>& records);
double type_distribution_l1(const std::map<StructuralType, double>& a,
                            const std::map<StructuralType, double>& b);

std::vector<QuestionRecord> questions_for_images(const std::vector<QuestionRecord>& records,
                                                 const std::vector<std::string>& image_ids);

// ---- answer vocabulary -----------------------------------------------------------

class AnswerVocab {
public:
    static constexpr std::size_t kOutOfVocab = static_cast<std::size_t>(-1);

    AnswerVocab() = default;
    explicit AnswerVocab(std::vector<std::string> sorted_answers);

    std::size_t size() const { return answers_.size(); }
    // Training answers resolve to their class; unseen answers map to
    // kOutOfVocab and can never be predicted, so they count as incorrect.
    std::size_t lookup(const std::string& answer) const;
    const std::string& answer(std::size_t index) const { return answers_.at(index); }
    const std::vector<std::string>& answers() const { return answers_; }

    void save(const std::string& path) const;
    static AnswerVocab load(const std::string& path);

private:
    std::vector<std::string> answers_;
    std::map<std::string, std::size_t> index_;
};

AnswerVocab build_answer_vocab(const std::vector<QuestionRecord>& train_records);

// ---- file I/O -----------------------------------------------------------------

// JSON Lines with fields exactly: question_id, image_id, text, language,
// answer, structural_type.
std::vector<QuestionRecord> load_xgqa(const std::string& path, const std::string& language);
void save_questions(const std::vector<QuestionRecord>& records, const std::string& path);

// Binary region features: magic "XMMREGNS", u32 image count, then per image
// id length + UTF-8 id, u32 N, u32 feature_dim, N x (feature_dim + 6)
// little-endian 4-byte floats.
inline constexpr char kRegionMagic[8] = {'X', 'M', 'M', 'R', 'E', 'G', 'N', 'S'};
void save_region_sets(const std::vector<RegionSet>& sets, const std::string& path);
std::vector<RegionSet> load_region_sets(const std::string& path);

RegionIndex build_region_index(const std::vector<RegionSet>& sets);

// ---- whole-dataset generation ----------------------------------------------------

struct DatasetSpec {
    std::uint64_t seed = 7;
    std::size_t num_scenes = 240;
    std::size_t grid_size = 3;
    std::size_t question_rounds = 2;  // balanced rounds of 5 questions per scene
    std::string source_language = "en";
    std::vector<std::string> target_languages = {"c1", "c2", "c3", "c4", "c5"};
    Inventory inventory = default_inventory();
    SplitSpec split;
};

struct Dataset {
    DatasetSpec spec;
    std::vector<RegionSet> regions;
    std::map<std::string, std::vector<QuestionRecord>> questions;  // per language
    std::map<std::string, std::vector<std::string>> corpora;       // per language
    SplitPlan split;

    std::vector<std::string> languages() const;
    std::vector<std::string> train_pool_images() const;  // not in TEST or DEV
};

Dataset generate_dataset(const DatasetSpec& spec);
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace xmm

#endif
