#include "vidqa/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "vidqa/errors.hpp"

namespace vidqa {

namespace {

const char* kSpecialNames[] = {"[CLS]", "[PAD]", "[MASK]", "[UNK]"};

std::ifstream open_for_read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return in;
}

std::ofstream open_for_write(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  return out;
}

}  // namespace

std::vector<std::string> split_words(const std::string& text) {
  std::string norm;
  norm.reserve(text.size());
  for (unsigned char c : text) {
    if (std::isalnum(c) || c >= 128)
      norm.push_back(static_cast<char>(std::tolower(c)));
    else
      norm.push_back(' ');
  }
  std::vector<std::string> out;
  std::istringstream is(norm);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

int Vocabulary::id_of(const std::string& word) const {
  auto it = index.find(word);
  return it == index.end() ? kUnk : it->second;
}

std::string Vocabulary::word_of(int id) const {
  if (id >= 0 && id < kNumSpecials) return kSpecialNames[id];
  std::size_t i = static_cast<std::size_t>(id) - kNumSpecials;
  if (id < 0 || i >= words.size())
    throw std::invalid_argument("word_of: id " + std::to_string(id) + " out of range");
  return words[i];
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus) {
  std::map<std::string, std::int64_t> freq;
  for (const std::string& text : corpus)
    for (const std::string& w : split_words(text)) ++freq[w];
  std::vector<std::pair<std::string, std::int64_t>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return from_counts(std::move(ranked));
}

Vocabulary Vocabulary::from_counts(
    std::vector<std::pair<std::string, std::int64_t>> ranked) {
  Vocabulary v;
  v.words.reserve(ranked.size());
  v.counts.reserve(ranked.size());
  for (auto& [word, count] : ranked) {
    v.index.emplace(word, static_cast<int>(v.words.size()) + kNumSpecials);
    v.words.push_back(std::move(word));
    v.counts.push_back(count);
  }
  return v;
}

void Vocabulary::save_tsv(const std::string& path) const {
  std::ofstream out = open_for_write(path);
  for (std::size_t i = 0; i < words.size(); ++i)
    out << words[i] << '\t' << counts[i] << '\n';
}

Vocabulary Vocabulary::load_tsv(const std::string& path) {
  std::ifstream in = open_for_read(path);
  std::vector<std::pair<std::string, std::int64_t>> ranked;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    if (line.empty()) {
      ++offset;
      continue;
    }
    std::size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw FormatError("vocabulary tsv " + path + ": missing tab at byte " +
                        std::to_string(offset));
    std::string word = line.substr(0, tab);
    std::int64_t count = 0;
    try {
      count = std::stoll(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw FormatError("vocabulary tsv " + path + ": bad count at byte " +
                        std::to_string(offset + tab + 1));
    }
    ranked.emplace_back(std::move(word), count);
    offset += line.size() + 1;
  }
  return from_counts(std::move(ranked));
}

TokenSequence tokenize(const std::string& text, const Vocabulary& vocab) {
  TokenSequence out;
  for (const std::string& w : split_words(text)) out.push_back(vocab.id_of(w));
  return out;
}

Lexicon Lexicon::load(const std::string& verbs_path, const std::string& nouns_path) {
  auto read_words = [](const std::string& path) {
    std::ifstream in = open_for_read(path);
    std::vector<std::string> words;
    std::string line;
    while (std::getline(in, line)) {
      std::vector<std::string> parts = split_words(line);
      for (std::string& w : parts) words.push_back(std::move(w));
    }
    return words;
  };
  return from_words(read_words(verbs_path), read_words(nouns_path));
}

Lexicon Lexicon::from_words(std::vector<std::string> verbs,
                            std::vector<std::string> nouns) {
  Lexicon lex;
  for (std::string& w : verbs) {
    if (lex.verb_set.insert(w).second) lex.verbs.push_back(std::move(w));
  }
  for (std::string& w : nouns) {
    if (lex.verb_set.count(w)) continue;  // verbs win on overlap
    if (lex.noun_set.insert(w).second) lex.nouns.push_back(std::move(w));
  }
  if (lex.verbs.empty()) throw ConfigError("lexicon: verb list is empty");
  if (lex.nouns.empty()) throw ConfigError("lexicon: noun list is empty");
  return lex;
}

std::string QASample::video_id() const {
  std::size_t slash = video_path.find_last_of("/\\");
  std::string base =
      slash == std::string::npos ? video_path : video_path.substr(slash + 1);
  std::size_t dot = base.find_last_of('.');
  return dot == std::string::npos ? base : base.substr(0, dot);
}

std::vector<std::pair<std::string, std::int64_t>> extract_top_terms(
    const std::vector<QASample>& samples, const Lexicon& lexicon, TermKind kind,
    std::size_t top_k) {
  const std::unordered_set<std::string>& member =
      kind == TermKind::kAction ? lexicon.verb_set : lexicon.noun_set;
  if (member.empty()) throw ConfigError("extract_top_terms: empty lexicon side");
  std::map<std::string, std::int64_t> freq;
  auto count_text = [&](const std::string& text) {
    for (const std::string& w : split_words(text))
      if (member.count(w)) ++freq[w];
  };
  for (const QASample& s : samples) {
    count_text(s.question);
    for (const std::string& c : s.candidates) count_text(c);
  }
  std::vector<std::pair<std::string, std::int64_t>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (ranked.size() > top_k) ranked.resize(top_k);
  return ranked;
}

std::size_t PromptSet::num_words() const {
  std::size_t n = 0;
  for (std::size_t i : word_index) n = std::max(n, i + 1);
  return n;
}

std::vector<std::string> PromptSet::distribution_words() const {
  std::vector<std::string> out(num_words());
  for (std::size_t row = 0; row < words.size(); ++row) out[word_index[row]] = words[row];
  return out;
}

PromptSet instantiate_templates(const std::vector<std::string>& words,
                                const std::vector<std::string>& templates,
                                const std::string& kind) {
  if (words.empty()) throw ConfigError("instantiate_templates: no words");
  if (templates.empty()) throw ConfigError("instantiate_templates: no templates");
  for (const std::string& t : templates) {
    std::size_t first = t.find("{}");
    if (first == std::string::npos)
      throw ConfigError("template \"" + t + "\" has no {} placeholder");
    if (t.find("{}", first + 2) != std::string::npos)
      throw ConfigError("template \"" + t + "\" has more than one {} placeholder");
  }
  PromptSet set;
  set.kind = kind;
  for (std::size_t wi = 0; wi < words.size(); ++wi) {
    for (const std::string& t : templates) {
      std::string prompt = t;
      prompt.replace(prompt.find("{}"), 2, words[wi]);
      set.words.push_back(words[wi]);
      set.prompts.push_back(std::move(prompt));
      set.word_index.push_back(wi);
    }
  }
  return set;
}

void PromptSet::save_jsonl(const std::string& path) const {
  std::ofstream out = open_for_write(path);
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    nlohmann::json row;
    row["kind"] = kind;
    row["word"] = words[i];
    row["prompt"] = prompts[i];
    row["index"] = word_index[i];
    out << row.dump() << '\n';
  }
}

PromptSet PromptSet::load_jsonl(const std::string& path) {
  std::ifstream in = open_for_read(path);
  PromptSet set;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    if (line.empty()) {
      ++offset;
      continue;
    }
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError("prompt set " + path + ": bad json at byte " +
                        std::to_string(offset + e.byte - 1));
    }
    set.kind = row.at("kind").get<std::string>();
    set.words.push_back(row.at("word").get<std::string>());
    set.prompts.push_back(row.at("prompt").get<std::string>());
    set.word_index.push_back(row.at("index").get<std::size_t>());
    offset += line.size() + 1;
  }
  if (set.prompts.empty()) throw FormatError("prompt set " + path + ": empty file");
  return set;
}

TokenSequence convert_mc(const TokenSequence& question, const TokenSequence& candidate) {
  TokenSequence out;
  out.reserve(question.size() + candidate.size() + 2);
  out.push_back(Vocabulary::kCls);
  out.insert(out.end(), question.begin(), question.end());
  out.push_back(Vocabulary::kPad);
  out.insert(out.end(), candidate.begin(), candidate.end());
  return out;
}

TokenSequence convert_oe(const TokenSequence& question) {
  TokenSequence out;
  out.reserve(question.size() + 1);
  out.push_back(Vocabulary::kCls);
  out.insert(out.end(), question.begin(), question.end());
  return out;
}

void save_manifest(const std::string& path, const std::vector<QASample>& samples) {
  std::ofstream out = open_for_write(path);
  for (const QASample& s : samples) {
    nlohmann::json row;
    row["video_path"] = s.video_path;
    row["question"] = s.question;
    row["candidates"] = s.candidates;
    row["answer_index"] = s.answer_index;
    row["entity_label"] = s.entity_label;
    row["action_label"] = s.action_label;
    row["question_type"] = s.question_type;
    out << row.dump() << '\n';
  }
}

std::vector<QASample> load_manifest(const std::string& path) {
  std::ifstream in = open_for_read(path);
  std::vector<QASample> samples;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    if (line.empty()) {
      ++offset;
      continue;
    }
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError("manifest " + path + ": bad json at byte " +
                        std::to_string(offset + e.byte - 1));
    }
    QASample s;
    s.video_path = row.at("video_path").get<std::string>();
    s.question = row.at("question").get<std::string>();
    s.candidates = row.at("candidates").get<std::vector<std::string>>();
    s.answer_index = row.at("answer_index").get<int>();
    s.entity_label = row.at("entity_label").get<std::string>();
    s.action_label = row.at("action_label").get<std::string>();
    s.question_type = row.at("question_type").get<std::string>();
    if (s.answer_index < 0 ||
        static_cast<std::size_t>(s.answer_index) >= s.candidates.size())
      throw DataError("manifest " + path + ": answer_index " +
                      std::to_string(s.answer_index) + " out of range near byte " +
                      std::to_string(offset));
    samples.push_back(std::move(s));
    offset += line.size() + 1;
  }
  return samples;
}

}  // namespace vidqa
