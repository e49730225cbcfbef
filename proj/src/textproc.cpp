#include "xmm/textproc.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <random>

#include "xmm/errors.hpp"

namespace xmm {

namespace {

const std::vector<std::string>& special_tokens() {
    static const std::vector<std::string> specials = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
    return specials;
}

// Splits a UTF-8 string into codepoint-sized chunks. Invalid bytes are kept
// as single-byte chunks so nothing is ever dropped.
std::vector<std::string> utf8_chars(const std::string& s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        const unsigned char c = static_cast<unsigned char>(s[i]);
        std::size_t len = 1;
        if ((c & 0x80) == 0x00) len = 1;
        else if ((c & 0xE0) == 0xC0) len = 2;
        else if ((c & 0xF0) == 0xE0) len = 3;
        else if ((c & 0xF8) == 0xF0) len = 4;
        if (i + len > s.size()) len = 1;
        out.push_back(s.substr(i, len));
        i += len;
    }
    return out;
}

// Word -> symbol sequence where non-initial characters carry the "##" prefix.
std::vector<std::string> word_symbols(const std::string& word) {
    std::vector<std::string> syms;
    const auto chars = utf8_chars(word);
    for (std::size_t i = 0; i < chars.size(); ++i)
        syms.push_back(i == 0 ? chars[i] : "##" + chars[i]);
    return syms;
}

std::string merge_symbols(const std::string& left, const std::string& right) {
    std::string tail = right;
    if (tail.rfind("##", 0) == 0) tail = tail.substr(2);
    return left + tail;
}

}  // namespace

Vocab::Vocab() : Vocab(special_tokens()) {}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.size() < kNumSpecials) throw InputError("vocabulary smaller than the reserved specials");
    for (std::size_t i = 0; i < kNumSpecials; ++i)
        if (tokens_[i] != special_tokens()[i])
            throw InputError("vocabulary must start with " + special_tokens()[i] + " at id " +
                             std::to_string(i));
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (!index_.emplace(tokens_[i], i).second)
            throw InputError("duplicate token '" + tokens_[i] + "' in vocabulary");
    }
}

std::size_t Vocab::id(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) throw IndexError("token '" + token + "' not in vocabulary");
    return it->second;
}

void Vocab::save(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write vocabulary " + path);
    for (const auto& t : tokens_) os << t << "\n";
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read vocabulary " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(is, line)) tokens.push_back(line);
    return Vocab(std::move(tokens));
}

std::string normalize_text(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    bool in_space = true;  // leading whitespace dropped
    for (char ch : text) {
        const bool ws = ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r' || ch == '\f' || ch == '\v';
        if (ws) {
            if (!in_space) out.push_back(' ');
            in_space = true;
        } else {
            char c = ch;
            if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
            out.push_back(c);
            in_space = false;
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char c : normalize_text(text)) {
        if (c == ' ') {
            if (!cur.empty()) words.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

Vocab train_tokenizer(const std::vector<std::string>& corpus, std::size_t vocab_size) {
    if (corpus.empty()) throw InputError("train_tokenizer: empty corpus");
    if (vocab_size <= kNumSpecials)
        throw InputError("train_tokenizer: vocab_size must exceed the " +
                         std::to_string(kNumSpecials) + " reserved specials");

    std::map<std::string, std::size_t> word_freq;
    for (const auto& line : corpus)
        for (const auto& w : split_words(line)) word_freq[w] += 1;
    if (word_freq.empty()) throw InputError("train_tokenizer: corpus contains no words");

    // Working representation: each distinct word as a symbol sequence.
    std::vector<std::vector<std::string>> seqs;
    std::vector<std::size_t> freqs;
    for (const auto& [word, freq] : word_freq) {
        seqs.push_back(word_symbols(word));
        freqs.push_back(freq);
    }

    // Base inventory: every single-character symbol, sorted for determinism.
    std::map<std::string, bool> base;
    for (const auto& seq : seqs)
        for (const auto& s : seq) base[s] = true;

    std::vector<std::string> tokens = special_tokens();
    for (const auto& [sym, _] : base) {
        if (tokens.size() >= vocab_size) break;
        tokens.push_back(sym);
    }

    // Greedy merges: highest pair frequency wins, ties break lexicographically.
    while (tokens.size() < vocab_size) {
        std::map<std::pair<std::string, std::string>, std::size_t> pair_freq;
        for (std::size_t k = 0; k < seqs.size(); ++k) {
            const auto& seq = seqs[k];
            for (std::size_t i = 0; i + 1 < seq.size(); ++i)
                pair_freq[{seq[i], seq[i + 1]}] += freqs[k];
        }
        if (pair_freq.empty()) break;
        auto best = pair_freq.begin();
        for (auto it = std::next(pair_freq.begin()); it != pair_freq.end(); ++it)
            if (it->second > best->second) best = it;
        const auto [left, right] = best->first;
        const std::string merged = merge_symbols(left, right);
        tokens.push_back(merged);
        for (auto& seq : seqs) {
            std::vector<std::string> next;
            next.reserve(seq.size());
            std::size_t i = 0;
            while (i < seq.size()) {
                if (i + 1 < seq.size() && seq[i] == left && seq[i + 1] == right) {
                    next.push_back(merged);
                    i += 2;
                } else {
                    next.push_back(seq[i]);
                    i += 1;
                }
            }
            seq = std::move(next);
        }
    }
    return Vocab(std::move(tokens));
}

namespace {

// Greedy longest-match segmentation; whole word becomes [UNK] when stuck.
std::vector<std::size_t> encode_word(const Vocab& vocab, const std::string& word) {
    std::vector<std::size_t> out;
    const auto chars = utf8_chars(word);
    std::size_t start = 0;
    while (start < chars.size()) {
        std::size_t best_len = 0;
        std::size_t best_id = 0;
        std::string candidate = start == 0 ? "" : "##";
        for (std::size_t end = start; end < chars.size(); ++end) {
            candidate += chars[end];
            if (vocab.contains(candidate)) {
                best_len = end - start + 1;
                best_id = vocab.id(candidate);
            }
        }
        if (best_len == 0) return {kUnkId};
        out.push_back(best_id);
        start += best_len;
    }
    return out;
}

}  // namespace

std::vector<std::size_t> tokenize(const Vocab& vocab, const std::string& text, std::size_t max_len) {
    if (max_len < 3) throw InputError("tokenize: max_len must be at least 3");
    std::vector<std::size_t> pieces;
    for (const auto& word : split_words(text)) {
        const auto ids = encode_word(vocab, word);
        pieces.insert(pieces.end(), ids.begin(), ids.end());
    }
    // Truncation precedes the closing [SEP].
    if (pieces.size() > max_len - 2) pieces.resize(max_len - 2);
    std::vector<std::size_t> out;
    out.reserve(max_len);
    out.push_back(kClsId);
    out.insert(out.end(), pieces.begin(), pieces.end());
    out.push_back(kSepId);
    while (out.size() < max_len) out.push_back(kPadId);
    return out;
}

std::vector<std::size_t> tokenize_trimmed(const Vocab& vocab, const std::string& text,
                                          std::size_t max_len) {
    auto ids = tokenize(vocab, text, max_len);
    while (ids.size() > 2 && ids.back() == kPadId) ids.pop_back();
    return ids;
}

std::string detokenize(const Vocab& vocab, const std::vector<std::size_t>& ids) {
    std::string out;
    for (std::size_t id : ids) {
        if (id < kNumSpecials) continue;
        const std::string& tok = vocab.token(id);
        if (tok.rfind("##", 0) == 0) {
            out += tok.substr(2);
        } else {
            if (!out.empty()) out.push_back(' ');
            out += tok;
        }
    }
    return out;
}

MlmBatch mlm_mask(const std::vector<std::size_t>& ids, const Vocab& vocab, double mask_prob,
                  std::uint64_t seed) {
    if (mask_prob <= 0.0 || mask_prob >= 1.0)
        throw InputError("mlm_mask: mask_prob must lie strictly inside (0,1)");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    MlmBatch batch;
    batch.input_ids = ids;
    const std::size_t vocab_size = vocab.size();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < kNumSpecials) continue;
        if (unit(rng) >= mask_prob) continue;
        batch.positions.push_back(i);
        batch.target_ids.push_back(ids[i]);
        const double roll = unit(rng);
        if (roll < 0.8) {
            batch.input_ids[i] = kMaskId;
        } else if (roll < 0.9 && vocab_size > kNumSpecials) {
            std::uniform_int_distribution<std::size_t> pick(kNumSpecials, vocab_size - 1);
            batch.input_ids[i] = pick(rng);
        }  // else keep the original token
    }
    return batch;
}

Tensor init_embeddings_with_overlap(const Vocab& src_vocab, const Tensor& src_emb,
                                    const Vocab& tgt_vocab, std::uint64_t seed) {
    if (src_emb.shape().size() != 2 || src_emb.rows() != src_vocab.size())
        throw DimensionError("init_embeddings_with_overlap: embedding shape " +
                             shape_to_string(src_emb.shape()) + " does not match source vocab of " +
                             std::to_string(src_vocab.size()));
    const std::size_t d = src_emb.cols();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 0.02);
    std::vector<double> out(tgt_vocab.size() * d);
    for (std::size_t i = 0; i < tgt_vocab.size(); ++i) {
        const std::string& tok = tgt_vocab.token(i);
        if (src_vocab.contains(tok)) {
            const std::size_t s = src_vocab.id(tok);
            std::copy_n(src_emb.values().data() + s * d, d, out.data() + i * d);
        } else {
            for (std::size_t j = 0; j < d; ++j) out[i * d + j] = dist(rng);
        }
    }
    return Tensor::from_values({tgt_vocab.size(), d}, std::move(out));
}

}  // namespace xmm
