#pragma once

// Backend abstraction for every LLM call: prompt templates, a chat-completion
// wire client with retry/backoff and a bounded number of in-flight requests,
// and a scripted deterministic mock used throughout the tests.
//
// This is the only place in the toolkit that talks to the network.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "rcc/error.hpp"
#include "rcc/io.hpp"
#include "rcc/random.hpp"
#include "rcc/text.hpp"

namespace rcc::llm {

using Bindings = std::map<std::string, std::string>;

// ---------------------------------------------------------------------------
// Templates

struct PromptTemplate {
  std::string id;
  int version = 1;
  std::string system;
  std::string user;
};

/// Replaces every {{name}} with its binding. Unbound names are an error.
inline std::string render(std::string_view text, const Bindings& vars) {
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const auto open = text.find("{{", pos);
    if (open == std::string_view::npos) {
      out.append(text.substr(pos));
      return out;
    }
    const auto close = text.find("}}", open + 2);
    if (close == std::string_view::npos) fail(ErrorKind::InvalidInput, "unterminated template placeholder");
    out.append(text.substr(pos, open - pos));
    const auto name = std::string(text::trim(text.substr(open + 2, close - open - 2)));
    const auto it = vars.find(name);
    if (it == vars.end()) fail(ErrorKind::InvalidInput, "template variable '" + name + "' is not bound");
    out += it->second;
    pos = close + 2;
  }
}

/// Parses the on-disk template form:
///
///   version: 3
///   [system]
///   ...
///   [user]
///   ...
inline PromptTemplate parse_template(std::string id, std::string_view content) {
  PromptTemplate t;
  t.id = std::move(id);
  std::string* section = nullptr;
  std::size_t start = 0;
  while (start < content.size()) {
    auto end = content.find('\n', start);
    if (end == std::string_view::npos) end = content.size();
    const auto line = content.substr(start, end - start);
    const auto trimmed = text::trim(line);
    if (section == nullptr && trimmed.starts_with("version:")) {
      t.version = static_cast<int>(io::parse_double(text::trim(trimmed.substr(8))));
    } else if (trimmed == "[system]") {
      section = &t.system;
    } else if (trimmed == "[user]") {
      section = &t.user;
    } else if (section != nullptr) {
      if (!section->empty()) *section += '\n';
      *section += line;
    }
    start = end + 1;
  }
  t.system = std::string(text::trim(t.system));
  t.user = std::string(text::trim(t.user));
  if (t.user.empty()) fail(ErrorKind::Configuration, "template '" + t.id + "' has no [user] section");
  return t;
}

inline std::vector<PromptTemplate> builtin_templates() {
  return {
      {"echo", 1, "", "{{text}}"},
      {"recaption", 1,
       "You write detailed, factual video captions.",
       "Video metadata: {{meta}}\n"
       "Human-written captions for this video:\n{{captions}}\n\n"
       "Write one detailed caption of the video. Use only details supported by the captions "
       "and the video. Describe objects, attributes, actions, spatial layout and the order of "
       "events. Respond with the caption only."},
      {"mutate_caption", 1,
       "You edit video captions to introduce exactly one controlled error.",
       "Reference caption of the video: {{reference}}\n"
       "Video metadata: {{meta}}\n"
       "Errors already introduced, in order (keep every one of them):\n{{previous_errors}}\n\n"
       "Current caption:\n{{caption}}\n\n"
       "Introduce exactly one new error of type '{{error_type}}' ({{error_description}}). "
       "Keep the wording and structure of the current caption otherwise unchanged, keep all "
       "previous errors, and do not fix anything.\n"
       "If this error type cannot reasonably be applied, answer with a single line:\n"
       "REJECT: <reason>\n"
       "Otherwise answer with exactly two lines:\n"
       "CAPTION: <the edited caption>\n"
       "SUMMARY: <short description of the change>"},
      {"audit_order", 1,
       "You compare captions against a reference description of a video.",
       "Reference caption: {{reference}}\n"
       "Caption A: {{earlier}}\n"
       "Caption B: {{later}}\n\n"
       "Is caption B strictly less faithful to the video than caption A? Answer YES or NO."},
      {"judge_caption", 1,
       "You are a strict evaluator of video captions. Score against the reference.",
       "Reference caption: {{reference}}\n"
       "Predicted caption: {{predicted}}\n\n"
       "Score the predicted caption from 1 to 10 on each criterion:\n"
       "Relevance: does it describe what happens in the video, without unsupported claims?\n"
       "Descriptiveness: how much of the relevant detail does it cover?\n"
       "Temporal Consistency: are events described in the right order?\n"
       "Fluency: is it grammatical and easy to read?\n"
       "Answer with four lines in this exact form:\n"
       "Relevance: <n>\nDescriptiveness: <n>\nTemporal Consistency: <n>\nFluency: <n>"},
      {"mcq_from_chain", 1,
       "You turn ranked caption edits into multiple-choice questions.",
       "Captions, best first:\n{{captions}}\n"
       "Changes between consecutive captions:\n{{summaries}}\n\n"
       "Write one question about the video whose answer choices are the varying objects or "
       "actions, one answer per caption, in the same order as the captions. Respond with JSON: "
       "{\"question\": \"...\", \"answers\": [\"...\", ...]} with exactly {{count}} answers."},
      {"ynq_from_caption", 1,
       "You turn caption edits into yes/no questions.",
       "Caption: {{caption}}\n"
       "Change that made it wrong: {{summary}}\n\n"
       "Write one yes/no question about the video that focuses on the changed object or action, "
       "for example \"Is there a cat in the video?\". Respond with the question only."},
      {"response_comparison", 1,
       "You compare two captions of the same video.",
       "Ground-truth caption: {{reference}}\n"
       "Caption 1: {{first}}\n"
       "Caption 2: {{second}}\n\n"
       "Which caption better represents the video? Answer 1, 2, or TIE if they are of "
       "approximately equal quality."},
      {"response_improvement", 1,
       "You improve video captions.",
       "Ground-truth caption: {{reference}}\n"
       "Caption: {{response}}\n\n"
       "Rewrite the caption so it fixes every error and includes the details it missed, using "
       "the ground-truth caption. Respond with the improved caption only."},
  };
}

class TemplateStore {
 public:
  static TemplateStore builtin() {
    TemplateStore store;
    for (auto& t : builtin_templates()) store.add(std::move(t));
    return store;
  }

  void add(PromptTemplate t) { templates_[t.id] = std::move(t); }

  [[nodiscard]] const PromptTemplate& get(const std::string& id) const {
    const auto it = templates_.find(id);
    if (it == templates_.end()) fail(ErrorKind::Configuration, "unknown template '" + id + "'");
    return it->second;
  }

  [[nodiscard]] bool contains(const std::string& id) const { return templates_.contains(id); }

  /// Overrides built-ins with every `<id>.tmpl` file in `dir`.
  void load_directory(const std::filesystem::path& dir) {
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec)) fail(ErrorKind::Configuration, "template directory not found: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.path().extension() == ".tmpl") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) add(parse_template(f.stem().string(), io::read_text(f)));
  }

 private:
  std::map<std::string, PromptTemplate> templates_;
};

// ---------------------------------------------------------------------------
// Requests and configuration

struct CompletionRequest {
  std::string template_id;
  Bindings vars;
  int max_tokens = 1024;
  double temperature = 0.7;
  std::string model;  // empty: use the backend default
};

inline constexpr double kGenerationTemperature = 0.7;
inline constexpr double kJudgeTemperature = 0.0;

enum class BackendKind { HttpChat, Mock };

struct BackendConfig {
  std::string endpoint = "http://127.0.0.1:8000/v1/chat/completions";
  std::string credential_env = "RCC_LLM_API_KEY";
  std::string model = "claude-3-7-sonnet";
  double timeout_seconds = 60.0;
  int max_retries = 3;
  int max_in_flight = 4;
  BackendKind kind = BackendKind::HttpChat;

  void validate() const {
    if (max_retries < 0) fail(ErrorKind::Configuration, "max_retries must be >= 0");
    if (max_in_flight < 1) fail(ErrorKind::Configuration, "max_in_flight must be >= 1");
    if (timeout_seconds <= 0.0) fail(ErrorKind::Configuration, "timeout_seconds must be positive");
  }
};

struct ChatMessage {
  std::string role;
  std::string content;
};

/// What a transport sees. `template_id` and `vars` travel along so the mock
/// can apply rules without re-parsing prompts; the HTTP transport ignores them.
struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0.7;
  int max_tokens = 1024;
  std::string template_id;
  Bindings vars;
};

inline nlohmann::json to_wire(const ChatRequest& request) {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
  return {{"model", request.model},
          {"messages", messages},
          {"temperature", request.temperature},
          {"max_tokens", request.max_tokens}};
}

/// Assistant text from a chat-completion response body.
inline std::string from_wire(std::string_view body) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, std::string("response is not JSON: ") + e.what());
  }
  // OpenAI-style choices, with a fallback for Anthropic-style content blocks.
  if (doc.contains("choices") && doc["choices"].is_array() && !doc["choices"].empty()) {
    const auto& msg = doc["choices"][0]["message"];
    if (msg.contains("content") && msg["content"].is_string()) return msg["content"].get<std::string>();
  }
  if (doc.contains("content") && doc["content"].is_array() && !doc["content"].empty()) {
    const auto& block = doc["content"][0];
    if (block.contains("text") && block["text"].is_string()) return block["text"].get<std::string>();
  }
  fail(ErrorKind::Parse, "response has no assistant message");
}

struct TransportReply {
  int status = 200;
  std::string text;  // assistant content on 2xx, error body otherwise
};

/// Thrown by transports when no HTTP status was obtained (connect failure,
/// timeout). Always retryable.
struct ConnectionFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual TransportReply send(const ChatRequest& request) = 0;
};

// ---------------------------------------------------------------------------
// Mock backend

namespace mock_rules {

struct Substitution {
  std::string_view from;
  std::string_view to;
};

inline const std::vector<Substitution>& substitutions(std::string_view error_type) {
  static const std::map<std::string_view, std::vector<Substitution>> tables = {
      {"attribute_change",
       {{"winter", "sunny"}, {"red", "blue"}, {"blue", "green"}, {"green", "yellow"}, {"black", "white"},
        {"white", "black"}, {"large", "small"}, {"small", "large"}, {"big", "tiny"}, {"old", "new"},
        {"young", "elderly"}, {"tall", "short"}, {"wooden", "metal"}, {"bright", "dim"}, {"dark", "bright"},
        {"snowy", "sunny"}, {"wet", "dry"}, {"brown", "gray"}, {"yellow", "purple"}, {"pink", "orange"},
        {"golden", "silver"}, {"purple", "teal"}, {"striped", "plain"}}},
      {"object_substitution",
       {{"dog", "cat"}, {"cat", "rabbit"}, {"car", "bicycle"}, {"ball", "frisbee"}, {"table", "bench"},
        {"chair", "stool"}, {"cup", "bowl"}, {"book", "phone"}, {"teapot", "vase"}, {"candlestick", "lamp"},
        {"tree", "lamppost"}, {"window", "door"}, {"guitar", "violin"}, {"hat", "helmet"}, {"mat", "rug"},
        {"road", "river"}, {"fireplace", "bookshelf"}, {"kite", "balloon"}, {"bottle", "can"},
        {"knife", "spoon"}, {"clock", "mirror"}, {"shirt", "jacket"}, {"dress", "coat"}}},
      {"action_change",
       {{"runs", "walks"}, {"running", "walking"}, {"walks", "runs"}, {"walking", "running"}, {"sits", "stands"},
        {"sitting", "standing"}, {"jumps", "crawls"}, {"eats", "sniffs"}, {"holds", "drops"}, {"opens", "closes"},
        {"throws", "catches"}, {"smiles", "frowns"}, {"dances", "stumbles"}, {"fed", "ignored"},
        {"approaches", "leaves"}, {"plays", "rests"}, {"cooks", "cleans"}, {"talking", "singing"},
        {"reads", "writes"}, {"swims", "floats"}, {"waves", "points"}, {"leaves", "arrives"}, {"stands", "kneels"}}},
      {"spatial_relation_change",
       {{"on", "under"}, {"under", "on"}, {"above", "below"}, {"below", "above"}, {"left", "right"},
        {"right", "left"}, {"behind", "beside"}, {"beside", "behind"}, {"inside", "outside"},
        {"outside", "inside"}, {"near", "away"}, {"over", "beneath"}, {"into", "onto"}, {"onto", "into"},
        {"across", "along"}, {"next", "opposite"}, {"atop", "beneath"}}},
      {"temporal_order_swap",
       {{"then", "before"}, {"after", "before"}, {"before", "after"}, {"first", "last"},
        {"finally", "initially"}, {"begins", "ends"}, {"later", "earlier"}, {"earlier", "later"},
        {"next", "previously"}, {"while", "after"}, {"afterwards", "beforehand"}, {"concludes", "starts"}}},
      {"count_change",
       {{"one", "two"}, {"two", "three"}, {"three", "four"}, {"four", "five"}, {"five", "six"}, {"six", "seven"},
        {"single", "double"}, {"several", "few"}, {"many", "few"}, {"few", "many"}, {"pair", "trio"},
        {"both", "all"}, {"couple", "dozen"}}},
      {"setting_change",
       {{"winter", "summer"}, {"indoor", "outdoor"}, {"outdoors", "indoors"}, {"kitchen", "garage"},
        {"park", "beach"}, {"street", "hallway"}, {"castle", "barn"}, {"room", "tent"}, {"forest", "desert"},
        {"city", "village"}, {"day", "night"}, {"night", "day"}, {"snowy", "rainy"}, {"beach", "mountain"},
        {"office", "library"}, {"suburban", "urban"}, {"rural", "urban"}, {"field", "parking"},
        {"landscape", "seascape"}}},
      {"subject_swap",
       {{"man", "woman"}, {"woman", "man"}, {"boy", "girl"}, {"girl", "boy"}, {"person", "robot"},
        {"child", "adult"}, {"player", "referee"}, {"chef", "waiter"}, {"character", "puppet"},
        {"people", "robots"}, {"men", "women"}, {"women", "men"}}},
  };
  static const std::vector<Substitution> none;
  const auto it = tables.find(error_type);
  return it == tables.end() ? none : it->second;
}

/// Sentence appended when no listed word can be substituted.
inline std::string_view fallback_sentence(std::string_view error_type) {
  static const std::map<std::string_view, std::string_view> sentences = {
      {"object_substitution", "A red umbrella lies nearby."},
      {"attribute_change", "Everything appears tinted purple."},
      {"action_change", "Someone suddenly starts juggling."},
      {"spatial_relation_change", "A ladder leans behind the scene."},
      {"temporal_order_swap", "This happens before everything else."},
      {"count_change", "Three extra birds fly past."},
      {"setting_change", "The scene seems to be underwater."},
      {"subject_swap", "A robot takes the lead."},
  };
  const auto it = sentences.find(error_type);
  return it == sentences.end() ? std::string_view("An unrelated object appears.") : it->second;
}

inline std::string match_case(std::string_view original, std::string_view replacement) {
  std::string out(replacement);
  if (!original.empty() && std::isupper(static_cast<unsigned char>(original.front())) && !out.empty()) {
    out.front() = static_cast<char>(std::toupper(static_cast<unsigned char>(out.front())));
  }
  return out;
}

/// Token-position distance from the reference: differing aligned tokens
/// plus the length difference. Every mock mutation raises it by at least one.
inline std::size_t divergence(std::string_view caption, std::string_view reference) {
  const auto a = text::split_whitespace(caption);
  const auto b = text::split_whitespace(reference);
  const auto common = std::min(a.size(), b.size());
  std::size_t d = a.size() > b.size() ? a.size() - b.size() : b.size() - a.size();
  for (std::size_t i = 0; i < common; ++i) d += a[i] != b[i] ? 1 : 0;
  return d;
}

/// Substitutes the first word that still matches the reference at its
/// position and has an entry in the table for `error_type`; appends a
/// type-specific sentence otherwise. Previously changed positions are never
/// touched, so earlier errors survive.
inline std::string mutate(const Bindings& vars) {
  const auto& caption = vars.at("caption");
  const auto reference = vars.contains("reference") ? vars.at("reference") : caption;
  const auto& error_type = vars.at("error_type");
  auto tokens = text::split_whitespace(caption);
  const auto ref_tokens = text::split_whitespace(reference);
  const auto& table = substitutions(error_type);
  for (std::size_t i = 0; i < tokens.size() && i < ref_tokens.size(); ++i) {
    if (tokens[i] != ref_tokens[i]) continue;
    auto parts = text::split_word(tokens[i]);
    const auto core = text::to_lower(parts.core);
    for (const auto& sub : table) {
      if (core == sub.from) {
        tokens[i] = parts.prefix + match_case(parts.core, sub.to) + parts.suffix;
        return "CAPTION: " + text::join(tokens, " ") + "\nSUMMARY: replaced '" + core + "' with '" +
               std::string(sub.to) + "'";
      }
    }
  }
  const auto sentence = fallback_sentence(error_type);
  std::string out(text::trim(caption));
  return "CAPTION: " + out + " " + std::string(sentence) + "\nSUMMARY: added '" + std::string(sentence) + "'";
}

/// Merges human captions into one paragraph.
inline std::string concatenate(const Bindings& vars) {
  std::vector<std::string> parts;
  std::string_view all = vars.at("captions");
  std::size_t start = 0;
  while (start <= all.size()) {
    auto end = all.find('\n', start);
    if (end == std::string_view::npos) end = all.size();
    auto line = std::string(text::trim(all.substr(start, end - start)));
    if (line.starts_with("- ")) line = line.substr(2);
    if (!line.empty()) {
      if (line.back() != '.' && line.back() != '!' && line.back() != '?') line += '.';
      line.front() = static_cast<char>(std::toupper(static_cast<unsigned char>(line.front())));
      parts.push_back(line);
    }
    start = end + 1;
  }
  return text::join(parts, " ");
}

inline std::string judge_order(const Bindings& vars) {
  const auto& ref = vars.at("reference");
  return divergence(vars.at("later"), ref) > divergence(vars.at("earlier"), ref) ? "YES" : "NO";
}

/// Overlap-driven rubric: identical captions score 10 on every axis.
inline std::string judge_caption(const Bindings& vars) {
  const auto pred = text::metric_tokens(vars.at("predicted"));
  const auto ref = text::metric_tokens(vars.at("reference"));
  const double lcs = static_cast<double>(text::lcs_length<std::string>(pred, ref));
  const double p = pred.empty() ? 0.0 : lcs / static_cast<double>(pred.size());
  const double r = ref.empty() ? 0.0 : lcs / static_cast<double>(ref.size());
  const double f1 = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  auto score = [](double x) { return std::clamp(static_cast<int>(std::lround(1.0 + 9.0 * x)), 1, 10); };
  const auto trimmed = text::trim(vars.at("predicted"));
  const int fluency = !trimmed.empty() && trimmed.back() == '.' ? 10 : 8;
  return "Relevance: " + std::to_string(score(p)) + "\nDescriptiveness: " + std::to_string(score(r)) +
         "\nTemporal Consistency: " + std::to_string(score(f1)) + "\nFluency: " + std::to_string(fluency);
}

inline std::string changed_item(std::string_view summary, std::string_view caption) {
  // "replaced 'x' with 'y'" -> y
  const auto with = summary.find("with '");
  if (with != std::string_view::npos) {
    const auto start = with + 6;
    const auto end = summary.find('\'', start);
    if (end != std::string_view::npos) return std::string(summary.substr(start, end - start));
  }
  const auto w = text::words(caption);
  return w.empty() ? std::string("thing") : w.back();
}

inline std::string yes_no_question(const Bindings& vars) {
  const auto item = changed_item(vars.at("summary"), vars.at("caption"));
  const bool vowel = !item.empty() && std::string_view("aeiou").find(static_cast<char>(std::tolower(static_cast<unsigned char>(item.front())))) != std::string_view::npos;
  return std::string("Is there ") + (vowel ? "an " : "a ") + item + " in the video?";
}

inline std::string mcq(const Bindings& vars) {
  const auto captions = nlohmann::json::parse(vars.at("captions_json"));
  nlohmann::json answers = nlohmann::json::array();
  for (const auto& c : captions) answers.push_back(c);
  return nlohmann::json{{"question", "Which description matches the video?"}, {"answers", answers}}.dump();
}

inline std::string apply(const ChatRequest& request) {
  const auto& id = request.template_id;
  const auto& vars = request.vars;
  if (id == "mutate_caption") return mutate(vars);
  if (id == "recaption") return concatenate(vars);
  if (id == "audit_order") return judge_order(vars);
  if (id == "judge_caption") return judge_caption(vars);
  if (id == "ynq_from_caption") return yes_no_question(vars);
  if (id == "mcq_from_chain") return mcq(vars);
  // Anything else echoes the rendered user message.
  return request.messages.empty() ? std::string() : request.messages.back().content;
}

}  // namespace mock_rules

namespace mock {

/// Answer with the rule registered for the request's template.
struct Rule {};
/// Fixed assistant text.
struct Text {
  std::string text;
};
/// Declines the request at the text level ("REJECT: ...").
struct Reject {
  std::string reason = "error type not applicable";
};
/// Sleep, then answer with the rule.
struct Delay {
  std::chrono::milliseconds duration{10};
};
/// HTTP status failure; status 0 simulates a dropped connection.
struct Fail {
  int status = 500;
};

using Behavior = std::variant<Rule, Text, Reject, Delay, Fail>;

}  // namespace mock

/// Replays a behavior script in order, cycling. Thread-safe; also tracks the
/// peak number of concurrent sends.
class MockTransport final : public Transport {
 public:
  explicit MockTransport(std::vector<mock::Behavior> script) : script_(std::move(script)) {
    if (script_.empty()) fail(ErrorKind::Configuration, "mock script is empty");
  }

  TransportReply send(const ChatRequest& request) override {
    const int now = ++active_;
    int peak = peak_.load();
    while (now > peak && !peak_.compare_exchange_weak(peak, now)) {
    }
    struct Leave {
      std::atomic<int>& a;
      ~Leave() { --a; }
    } leave{active_};

    mock::Behavior behavior;
    {
      std::lock_guard lock(mutex_);
      behavior = script_[cursor_ % script_.size()];
      ++cursor_;
      requests_.push_back(request);
    }
    return std::visit(
        [&](const auto& b) -> TransportReply {
          using B = std::decay_t<decltype(b)>;
          if constexpr (std::is_same_v<B, mock::Rule>) {
            return {200, mock_rules::apply(request)};
          } else if constexpr (std::is_same_v<B, mock::Text>) {
            return {200, b.text};
          } else if constexpr (std::is_same_v<B, mock::Reject>) {
            return {200, "REJECT: " + b.reason};
          } else if constexpr (std::is_same_v<B, mock::Delay>) {
            std::this_thread::sleep_for(b.duration);
            return {200, mock_rules::apply(request)};
          } else {
            if (b.status == 0) throw ConnectionFailure("mock: connection dropped");
            return {b.status, "mock failure"};
          }
        },
        behavior);
  }

  [[nodiscard]] std::size_t calls() const {
    std::lock_guard lock(mutex_);
    return cursor_;
  }
  [[nodiscard]] std::vector<ChatRequest> requests() const {
    std::lock_guard lock(mutex_);
    return requests_;
  }
  [[nodiscard]] int peak_in_flight() const { return peak_.load(); }

 private:
  std::vector<mock::Behavior> script_;
  mutable std::mutex mutex_;
  std::size_t cursor_ = 0;
  std::vector<ChatRequest> requests_;
  std::atomic<int> active_{0};
  std::atomic<int> peak_{0};
};

inline std::shared_ptr<MockTransport> mock_script(std::vector<mock::Behavior> behaviors) {
  return std::make_shared<MockTransport>(std::move(behaviors));
}

// ---------------------------------------------------------------------------
// Client

/// Counting semaphore that admits waiters in arrival order.
class FifoSemaphore {
 public:
  explicit FifoSemaphore(int limit) : limit_(limit) {}

  void acquire() {
    std::unique_lock lock(mutex_);
    const auto ticket = next_ticket_++;
    cv_.wait(lock, [&] { return ticket == serving_ && in_flight_ < limit_; });
    ++serving_;
    ++in_flight_;
    cv_.notify_all();
  }

  void release() {
    {
      std::lock_guard lock(mutex_);
      --in_flight_;
    }
    cv_.notify_all();
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::uint64_t next_ticket_ = 0;
  std::uint64_t serving_ = 0;
  int in_flight_ = 0;
  int limit_;
};

struct RetryPolicy {
  std::chrono::milliseconds base{1000};
  double factor = 2.0;
  double jitter = 0.25;  // up to +25% of the nominal delay

  [[nodiscard]] std::chrono::milliseconds delay(int retry, double unit_noise) const {
    const double nominal = static_cast<double>(base.count()) * std::pow(factor, retry);
    return std::chrono::milliseconds(static_cast<std::int64_t>(nominal * (1.0 + jitter * unit_noise)));
  }
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

inline Sleeper real_sleeper() {
  return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

class Client {
 public:
  Client(BackendConfig config, std::shared_ptr<Transport> transport,
         TemplateStore templates = TemplateStore::builtin(), Sleeper sleeper = real_sleeper(),
         RetryPolicy retry = {})
      : config_(std::move(config)),
        transport_(std::move(transport)),
        templates_(std::move(templates)),
        sleeper_(std::move(sleeper)),
        retry_(retry),
        gate_(std::make_unique<FifoSemaphore>(std::max(1, config_.max_in_flight))) {
    config_.validate();
    if (!transport_) fail(ErrorKind::Configuration, "no transport");
  }

  [[nodiscard]] const BackendConfig& config() const { return config_; }
  [[nodiscard]] const TemplateStore& templates() const { return templates_; }

  ChatRequest build(const CompletionRequest& request) const {
    if (request.max_tokens < 1) fail(ErrorKind::InvalidInput, "max_tokens must be >= 1");
    if (request.temperature < 0.0) fail(ErrorKind::InvalidInput, "temperature must be >= 0");
    const auto& tmpl = templates_.get(request.template_id);
    ChatRequest chat;
    chat.model = request.model.empty() ? config_.model : request.model;
    if (!tmpl.system.empty()) chat.messages.push_back({"system", render(tmpl.system, request.vars)});
    chat.messages.push_back({"user", render(tmpl.user, request.vars)});
    chat.temperature = request.temperature;
    chat.max_tokens = request.max_tokens;
    chat.template_id = request.template_id;
    chat.vars = request.vars;
    return chat;
  }

  /// Rendered prompt in, assistant text out. Retries transport failures,
  /// 5xx and 429 with exponential backoff; other 4xx fail immediately.
  std::string complete(const CompletionRequest& request) {
    const auto chat = build(request);
    std::vector<std::string> log;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
      if (attempt > 0) sleeper_(retry_.delay(attempt - 1, next_noise()));
      TransportReply reply;
      try {
        gate_->acquire();
        struct Release {
          FifoSemaphore& s;
          ~Release() { s.release(); }
        } release{*gate_};
        reply = transport_->send(chat);
      } catch (const ConnectionFailure& e) {
        log.push_back("attempt " + std::to_string(attempt + 1) + ": " + e.what());
        continue;
      }
      if (reply.status >= 200 && reply.status < 300) return reply.text;
      log.push_back("attempt " + std::to_string(attempt + 1) + ": HTTP " + std::to_string(reply.status));
      if (reply.status >= 400 && reply.status < 500 && reply.status != 429) {
        fail(ErrorKind::Permanent, "backend rejected request with HTTP " + std::to_string(reply.status) + ": " + reply.text);
      }
    }
    fail(ErrorKind::Transport, "retries exhausted (" + text::join(log, "; ") + ")");
  }

 private:
  double next_noise() {
    std::lock_guard lock(noise_mutex_);
    return noise_.uniform();
  }

  BackendConfig config_;
  std::shared_ptr<Transport> transport_;
  TemplateStore templates_;
  Sleeper sleeper_;
  RetryPolicy retry_;
  std::unique_ptr<FifoSemaphore> gate_;
  std::mutex noise_mutex_;
  Rng noise_{0x5eed};
};

}  // namespace rcc::llm

