#pragma once

// Caption chains rewritten as question-answer chains: one multiple-choice
// item per chain, and one yes/no question per erroneous caption.

#include <algorithm>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rcc/chaingen.hpp"
#include "rcc/error.hpp"
#include "rcc/io.hpp"
#include "rcc/llmgateway.hpp"
#include "rcc/random.hpp"

namespace rcc::transform {

using nlohmann::json;

struct McqChoice {
  std::string letter;
  std::string text;

  friend bool operator==(const McqChoice&, const McqChoice&) = default;
};

struct McqItem {
  std::string video_id;
  std::string question;
  std::vector<McqChoice> choices;  // presentation order, letters A, B, ...
  std::vector<int> quality_rank;   // presentation position -> chain rank (0 = best)

  friend bool operator==(const McqItem&, const McqItem&) = default;
};

/// Yes/no questions ordered most-erroneous first; the expected answer to
/// every one of them is `target_response`.
struct YnqChain {
  std::string video_id;
  std::vector<std::string> questions;
  std::string target_response = "no";

  friend bool operator==(const YnqChain&, const YnqChain&) = default;
};

inline std::string letter_for(std::size_t index) {
  require(index < 26, "at most 26 answer choices are supported");
  return std::string(1, static_cast<char>('A' + index));
}

inline void validate(const McqItem& item) {
  require(item.choices.size() == item.quality_rank.size(), "choices and quality_rank differ in length");
  std::vector<int> sorted = item.quality_rank;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    require(sorted[i] == static_cast<int>(i), "quality_rank is not a permutation");
  }
  for (std::size_t i = 0; i < item.choices.size(); ++i) {
    for (std::size_t j = i + 1; j < item.choices.size(); ++j) {
      require(item.choices[i].letter != item.choices[j].letter, "duplicate choice letter");
    }
  }
}

/// `rng == nullptr` keeps the chain order (identity shuffle).
inline McqItem chain_to_mcq(const chaingen::CaptionChain& chain, llm::Client& client, Rng* rng) {
  require(chain.captions.size() >= 2, "MCQ needs a chain of at least two captions");
  const auto n = chain.captions.size();
  std::string listing;
  for (std::size_t k = 0; k < n; ++k) listing += std::to_string(k + 1) + ". " + chain.captions[k] + '\n';
  std::string summaries;
  for (std::size_t k = 0; k < chain.steps.size(); ++k) {
    summaries += std::to_string(k + 1) + " -> " + std::to_string(k + 2) + ": " + chain.steps[k].summary + '\n';
  }
  llm::CompletionRequest request;
  request.template_id = "mcq_from_chain";
  request.temperature = llm::kGenerationTemperature;
  request.vars = {{"captions", listing},
                  {"summaries", summaries.empty() ? std::string("(none)") : summaries},
                  {"count", std::to_string(n)},
                  {"captions_json", json(chain.captions).dump()}};
  const auto output = client.complete(request);

  json doc;
  try {
    const auto open = output.find('{');
    const auto close = output.rfind('}');
    if (open == std::string::npos || close == std::string::npos || close < open) {
      fail(ErrorKind::Parse, "MCQ output contains no JSON object");
    }
    doc = json::parse(output.substr(open, close - open + 1));
  } catch (const json::exception& e) {
    fail(ErrorKind::Parse, std::string("MCQ output is not valid JSON: ") + e.what());
  }
  if (!doc.contains("question") || !doc["question"].is_string() || !doc.contains("answers") ||
      !doc["answers"].is_array()) {
    fail(ErrorKind::Parse, "MCQ output needs 'question' and 'answers'");
  }
  std::vector<std::string> answers;
  for (const auto& a : doc["answers"]) {
    if (!a.is_string()) fail(ErrorKind::Parse, "MCQ answers must be strings");
    answers.push_back(a.get<std::string>());
  }
  if (answers.size() != n) {
    fail(ErrorKind::Parse, "MCQ output has " + std::to_string(answers.size()) + " answers, expected " + std::to_string(n));
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (rng != nullptr) rng->shuffle(std::span(order));

  McqItem item;
  item.video_id = chain.video_id;
  item.question = doc["question"].get<std::string>();
  for (std::size_t pos = 0; pos < n; ++pos) {
    item.choices.push_back({letter_for(pos), answers[static_cast<std::size_t>(order[pos])]});
    item.quality_rank.push_back(order[pos]);
  }
  return item;
}

/// Letters ordered best-first, ready for a ranking objective over
/// letter-string log-probs.
inline std::vector<std::string> mcq_rank_target(const McqItem& item) {
  validate(item);
  std::vector<std::string> letters(item.choices.size());
  for (std::size_t pos = 0; pos < item.choices.size(); ++pos) {
    letters[static_cast<std::size_t>(item.quality_rank[pos])] = item.choices[pos].letter;
  }
  return letters;
}

inline YnqChain chain_to_ynq(const chaingen::CaptionChain& chain, llm::Client& client) {
  require(chain.captions.size() >= 2, "YNQ needs a chain of at least two captions");
  require(chain.steps.size() + 1 == chain.captions.size(), "chain steps do not match captions");
  YnqChain out;
  out.video_id = chain.video_id;
  for (std::size_t k = chain.captions.size() - 1; k >= 1; --k) {
    llm::CompletionRequest request;
    request.template_id = "ynq_from_caption";
    request.temperature = llm::kGenerationTemperature;
    request.max_tokens = 64;
    request.vars = {{"caption", chain.captions[k]}, {"summary", chain.steps[k - 1].summary}};
    auto question = std::string(text::trim(client.complete(request)));
    if (question.empty()) fail(ErrorKind::Parse, "empty yes/no question");
    out.questions.push_back(std::move(question));
  }
  return out;
}

/// (prompt, response) pairs ordered best-first for the ranking objective: the
/// fixed response is scored against each question, most-erroneous first.
inline std::vector<std::pair<std::string, std::string>> ynq_ranking_inputs(const YnqChain& ynq) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& q : ynq.questions) out.emplace_back(q, ynq.target_response);
  return out;
}

inline json to_json(const McqItem& item) {
  json choices = json::array();
  for (const auto& c : item.choices) choices.push_back({{"letter", c.letter}, {"text", c.text}});
  return {{"kind", "mcq"}, {"video_id", item.video_id}, {"question", item.question},
          {"choices", choices}, {"quality_rank", item.quality_rank}};
}

inline McqItem mcq_from_json(const json& record) {
  McqItem item;
  item.video_id = io::field<std::string>(record, "video_id");
  item.question = io::field<std::string>(record, "question");
  for (const auto& c : io::field<json>(record, "choices")) {
    item.choices.push_back({io::field<std::string>(c, "letter"), io::field<std::string>(c, "text")});
  }
  item.quality_rank = io::field<std::vector<int>>(record, "quality_rank");
  validate(item);
  return item;
}

inline json to_json(const YnqChain& ynq) {
  return {{"kind", "ynq"}, {"video_id", ynq.video_id}, {"questions", ynq.questions},
          {"target_response", ynq.target_response}};
}

inline YnqChain ynq_from_json(const json& record) {
  YnqChain ynq;
  ynq.video_id = io::field<std::string>(record, "video_id");
  ynq.questions = io::field<std::vector<std::string>>(record, "questions");
  ynq.target_response = record.value("target_response", std::string("no"));
  return ynq;
}

}  // namespace rcc::transform
