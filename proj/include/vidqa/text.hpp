#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace vidqa {

using TokenSequence = std::vector<int>;

// Lowercase, fold punctuation to spaces, split on whitespace.
std::vector<std::string> split_words(const std::string& text);

// Token id table. Ids 0..3 are reserved specials; real words follow in
// descending corpus count, ties broken lexicographically.
struct Vocabulary {
  static constexpr int kCls = 0;
  static constexpr int kPad = 1;
  static constexpr int kMask = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumSpecials = 4;

  std::vector<std::string> words;    // word at id kNumSpecials + i
  std::vector<std::int64_t> counts;  // parallel to words
  std::unordered_map<std::string, int> index;

  std::size_t size() const { return words.size() + kNumSpecials; }
  int id_of(const std::string& word) const;  // kUnk when absent
  std::string word_of(int id) const;

  static Vocabulary build(const std::vector<std::string>& corpus);
  static Vocabulary from_counts(std::vector<std::pair<std::string, std::int64_t>> counts);
  void save_tsv(const std::string& path) const;
  static Vocabulary load_tsv(const std::string& path);
};

// Normalized word ids; no [CLS] is added here, model inputs get one from the
// convert_* helpers or the prompt wrapper.
TokenSequence tokenize(const std::string& text, const Vocabulary& vocab);

// Curated verb/noun word lists. Words listed as verbs win when a word appears
// in both files, keeping the two sets disjoint.
struct Lexicon {
  std::vector<std::string> verbs;
  std::vector<std::string> nouns;
  std::unordered_set<std::string> verb_set;
  std::unordered_set<std::string> noun_set;

  static Lexicon load(const std::string& verbs_path, const std::string& nouns_path);
  static Lexicon from_words(std::vector<std::string> verbs, std::vector<std::string> nouns);
};

enum class TermKind { kAction, kEntity };

struct QASample {
  std::string video_path;
  std::string question;
  std::vector<std::string> candidates;
  int answer_index = 0;
  std::string entity_label;
  std::string action_label;
  std::string question_type;  // "entity" | "action" | "composition"

  std::string video_id() const;  // basename of video_path without extension
};

// Occurrence counts of lexicon words over question plus all candidate texts,
// ranked by descending count with lexicographic tie-break. top_k clamps to
// the number of matched words.
std::vector<std::pair<std::string, std::int64_t>> extract_top_terms(
    const std::vector<QASample>& samples, const Lexicon& lexicon, TermKind kind,
    std::size_t top_k);

// One row per (word, template) instantiation. word_index maps each row to the
// word's slot in heuristic distributions; slots follow first appearance in
// `words`, so single-template sets are one row per word.
struct PromptSet {
  std::string kind;  // "action" | "entity"
  std::vector<std::string> words;
  std::vector<std::string> prompts;
  std::vector<std::size_t> word_index;

  std::size_t num_words() const;
  std::vector<std::string> distribution_words() const;

  void save_jsonl(const std::string& path) const;
  static PromptSet load_jsonl(const std::string& path);
};

// Every template must contain exactly one "{}" placeholder.
PromptSet instantiate_templates(const std::vector<std::string>& words,
                                const std::vector<std::string>& templates,
                                const std::string& kind);

// Multiple-choice input layout: [CLS] question [PAD] candidate.
TokenSequence convert_mc(const TokenSequence& question, const TokenSequence& candidate);
// Open-ended input layout: [CLS] question.
TokenSequence convert_oe(const TokenSequence& question);

void save_manifest(const std::string& path, const std::vector<QASample>& samples);
std::vector<QASample> load_manifest(const std::string& path);

}  // namespace vidqa
