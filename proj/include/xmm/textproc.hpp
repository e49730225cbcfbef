#ifndef XMM_TEXTPROC_HPP
#define XMM_TEXTPROC_HPP

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "xmm/tensor.hpp"

namespace xmm {

// Reserved token ids, fixed across every vocabulary.
inline constexpr std::size_t kPadId = 0;
inline constexpr std::size_t kUnkId = 1;
inline constexpr std::size_t kClsId = 2;
inline constexpr std::size_t kSepId = 3;
inline constexpr std::size_t kMaskId = 4;
inline constexpr std::size_t kNumSpecials = 5;

// Subword vocabulary. Ids are contiguous 0..size-1 with the five specials at
// fixed positions. Continuation pieces carry a "##" prefix.
class Vocab {
public:
    Vocab();
    explicit Vocab(std::vector<std::string> tokens);  // must start with the specials

    std::size_t size() const { return tokens_.size(); }
    const std::string& token(std::size_t id) const { return tokens_.at(id); }
    bool contains(const std::string& token) const { return index_.count(token) > 0; }
    std::size_t id(const std::string& token) const;
    const std::vector<std::string>& tokens() const { return tokens_; }

    void save(const std::string& path) const;        // one token per line, line = id
    static Vocab load(const std::string& path);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct MlmBatch {
    std::vector<std::size_t> input_ids;      // with masked positions corrupted
    std::vector<std::size_t> target_ids;     // aligned with positions
    std::vector<std::size_t> positions;      // masked position index set
};

// Lowercases ASCII letters and collapses runs of whitespace; other scripts
// pass through untouched.
std::string normalize_text(const std::string& text);
std::vector<std::string> split_words(const std::string& text);

// Deterministic greedy subword learner: whitespace pre-split, then
// frequency-driven pair merges until vocab_size entries (or no pairs left).
Vocab train_tokenizer(const std::vector<std::string>& corpus, std::size_t vocab_size);

// [CLS] + subword ids + [SEP], truncated to max_len, padded with [PAD].
std::vector<std::size_t> tokenize(const Vocab& vocab, const std::string& text, std::size_t max_len);
// Same ids with the trailing [PAD] run removed (shorter sequences are cheaper
// to encode and attention masking makes the outputs identical).
std::vector<std::size_t> tokenize_trimmed(const Vocab& vocab, const std::string& text,
                                          std::size_t max_len);
std::string detokenize(const Vocab& vocab, const std::vector<std::size_t>& ids);

// 80/10/10 corruption at the given rate; specials are never selected.
MlmBatch mlm_mask(const std::vector<std::size_t>& ids, const Vocab& vocab, double mask_prob,
                  std::uint64_t seed);

// Rows of tokens present in both vocabularies are copied from src_emb; all
// other rows are drawn N(0, 0.02^2) deterministically per seed.
Tensor init_embeddings_with_overlap(const Vocab& src_vocab, const Tensor& src_emb,
                                    const Vocab& tgt_vocab, std::uint64_t seed);

}  // namespace xmm

#endif
