#pragma once

// Totally ordered caption chains by repeated error-conditioned degradation.
//
// Starting from a detailed seed caption, each step picks an error type that
// applies to the latest caption and asks the backend to introduce exactly
// that error while keeping every earlier one. Caption k therefore carries k
// errors, and the errors of caption k are a subset of those of caption k+1.

#include <algorithm>
#include <atomic>
#include <exception>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "rcc/error.hpp"
#include "rcc/io.hpp"
#include "rcc/llmgateway.hpp"
#include "rcc/random.hpp"
#include "rcc/text.hpp"

namespace rcc::chaingen {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Taxonomy and applicability

namespace rules {
inline constexpr std::string_view kAlways = "always";
inline constexpr std::string_view kCountWord = "needs_count_word";
inline constexpr std::string_view kTemporal = "needs_temporal_structure";
inline constexpr std::string_view kSpatial = "needs_spatial_preposition";

inline bool known(std::string_view id) { return id == kAlways || id == kCountWord || id == kTemporal || id == kSpatial; }
}  // namespace rules

struct ErrorType {
  std::string id;
  std::string description;
  std::vector<std::string> applicability_rules;

  friend bool operator==(const ErrorType&, const ErrorType&) = default;
};

inline std::vector<ErrorType> default_taxonomy() {
  const std::string always(rules::kAlways);
  return {
      {"object_substitution", "replace an object with a different, plausible object", {always}},
      {"attribute_change", "change an attribute such as color, size, material or weather", {always}},
      {"action_change", "change what someone or something is doing", {always}},
      {"spatial_relation_change", "change where things are relative to each other", {std::string(rules::kSpatial)}},
      {"temporal_order_swap", "swap the order in which two events happen", {std::string(rules::kTemporal)}},
      {"count_change", "change how many of something there are", {std::string(rules::kCountWord)}},
      {"setting_change", "change the location, scene or time of day", {always}},
      {"subject_swap", "swap who performs an action", {always}},
  };
}

inline json to_json(const ErrorType& t) {
  return {{"id", t.id}, {"description", t.description}, {"applicability_rules", t.applicability_rules}};
}

inline void validate_taxonomy(std::span<const ErrorType> taxonomy) {
  std::set<std::string> seen;
  for (const auto& t : taxonomy) {
    if (t.id.empty()) fail(ErrorKind::Configuration, "error type with empty id");
    if (!seen.insert(t.id).second) fail(ErrorKind::Configuration, "duplicate error type id '" + t.id + "'");
    for (const auto& r : t.applicability_rules) {
      if (!rules::known(r)) fail(ErrorKind::Configuration, "unknown applicability rule '" + r + "' on " + t.id);
    }
  }
}

inline std::vector<ErrorType> taxonomy_from_json(const json& doc) {
  if (!doc.is_array()) fail(ErrorKind::Configuration, "taxonomy must be a JSON list");
  std::vector<ErrorType> out;
  for (const auto& item : doc) {
    ErrorType t;
    t.id = io::field<std::string>(item, "id");
    t.description = io::field<std::string>(item, "description");
    t.applicability_rules = item.value("applicability_rules", std::vector<std::string>{});
    out.push_back(std::move(t));
  }
  validate_taxonomy(out);
  return out;
}

inline std::vector<ErrorType> load_taxonomy(const std::filesystem::path& path) {
  try {
    return taxonomy_from_json(json::parse(io::read_text(path)));
  } catch (const json::exception& e) {
    fail(ErrorKind::Configuration, "taxonomy " + path.string() + ": " + e.what());
  }
}

namespace lexicon {

inline const std::set<std::string>& count_words() {
  static const std::set<std::string> words = {
      "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
      "dozen", "dozens", "several", "many", "few", "pair", "couple", "both", "single", "multiple",
      "once", "twice", "first", "second", "third", "numerous", "group"};
  return words;
}

inline const std::set<std::string>& temporal_markers() {
  static const std::set<std::string> words = {
      "then", "after", "afterwards", "before", "while", "when", "first", "finally", "later", "next",
      "meanwhile", "subsequently", "eventually", "until", "during", "begins", "ends", "starts",
      "concludes", "earlier", "initially", "once", "later"};
  return words;
}

inline const std::set<std::string>& spatial_prepositions() {
  static const std::set<std::string> words = {
      "on", "under", "above", "below", "behind", "beside", "inside", "outside", "near", "over",
      "into", "onto", "across", "between", "next", "atop", "beneath", "left", "right", "along",
      "around", "through", "toward", "towards", "against", "underneath", "within", "opposite"};
  return words;
}

}  // namespace lexicon

struct CaptionFeatures {
  bool has_count_word = false;
  bool has_temporal_marker = false;
  bool has_spatial_preposition = false;
  int clauses = 0;
  int sentences = 0;
};

/// Closed-lexicon tagging: clause breaks at , ; : and sentence breaks at . ! ?
inline CaptionFeatures analyze(std::string_view caption) {
  CaptionFeatures f;
  for (const auto& w : text::words(caption)) {
    if (lexicon::count_words().contains(w)) f.has_count_word = true;
    if (!w.empty() && std::all_of(w.begin(), w.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
      f.has_count_word = true;
    }
    if (lexicon::temporal_markers().contains(w)) f.has_temporal_marker = true;
    if (lexicon::spatial_prepositions().contains(w)) f.has_spatial_preposition = true;
  }
  auto count_segments = [&](std::string_view breaks) {
    int segments = 0;
    bool has_word = false;
    for (char c : caption) {
      if (breaks.find(c) != std::string_view::npos) {
        if (has_word) ++segments;
        has_word = false;
      } else if (std::isalnum(static_cast<unsigned char>(c))) {
        has_word = true;
      }
    }
    return segments + (has_word ? 1 : 0);
  };
  f.sentences = count_segments(".!?");
  f.clauses = count_segments(".!?,;:");
  return f;
}

inline bool rule_holds(std::string_view rule, const CaptionFeatures& f) {
  if (rule == rules::kAlways) return true;
  if (rule == rules::kCountWord) return f.has_count_word;
  if (rule == rules::kTemporal) return (f.clauses >= 2 && f.has_temporal_marker) || f.sentences >= 2;
  if (rule == rules::kSpatial) return f.has_spatial_preposition;
  fail(ErrorKind::Configuration, "unknown applicability rule '" + std::string(rule) + "'");
}

/// Error types whose every rule holds for `caption`, in taxonomy order.
inline std::vector<ErrorType> applicable_errors(std::string_view caption, std::span<const ErrorType> taxonomy) {
  require(!text::trim(caption).empty(), "caption is empty");
  const auto features = analyze(caption);
  std::vector<ErrorType> out;
  for (const auto& t : taxonomy) {
    if (std::all_of(t.applicability_rules.begin(), t.applicability_rules.end(),
                    [&](const std::string& r) { return rule_holds(r, features); })) {
      out.push_back(t);
    }
  }
  return out;
}

using ErrorWeights = std::map<std::string, double>;

/// Uniform by default. With weights, types missing from the map weigh 1.
inline const ErrorType& sample_error(std::span<const ErrorType> applicable, const ErrorWeights* weights, Rng& rng) {
  if (applicable.empty()) fail(ErrorKind::NoApplicableError, "no applicable error type");
  if (weights == nullptr || weights->empty()) return applicable[rng.below(applicable.size())];
  std::vector<double> w;
  double total = 0.0;
  for (const auto& t : applicable) {
    const auto it = weights->find(t.id);
    const double x = it == weights->end() ? 1.0 : it->second;
    require(x >= 0.0 && std::isfinite(x), "error weight for " + t.id + " must be non-negative");
    w.push_back(x);
    total += x;
  }
  if (total <= 0.0) fail(ErrorKind::NoApplicableError, "all applicable error types have zero weight");
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] > 0.0 && u < w[i]) return applicable[i];
    u -= w[i];
  }
  for (std::size_t i = w.size(); i-- > 0;) {
    if (w[i] > 0.0) return applicable[i];
  }
  return applicable.back();
}

// ---------------------------------------------------------------------------
// Chains

enum class CaptionSource { GroundTruth, Recaptioned };

inline std::string to_string(CaptionSource s) { return s == CaptionSource::GroundTruth ? "GROUND_TRUTH" : "RECAPTIONED"; }

inline CaptionSource parse_source(const std::string& s) {
  if (s == "GROUND_TRUTH") return CaptionSource::GroundTruth;
  if (s == "RECAPTIONED") return CaptionSource::Recaptioned;
  fail(ErrorKind::Io, "unknown caption source '" + s + "'");
}

struct ChainStep {
  std::string error_type;
  std::string summary;

  friend bool operator==(const ChainStep&, const ChainStep&) = default;
};

namespace flags {
inline constexpr std::string_view kTruncated = "truncated";
inline constexpr std::string_view kIndependent = "independent";
inline constexpr std::string_view kRejectedPrefix = "rejected:";
}  // namespace flags

/// captions[0] is the seed; captions[k] carries the errors of steps[0..k).
/// Rejected mutation attempts are recorded as "rejected:<type>" flags.
struct CaptionChain {
  std::string video_id;
  std::vector<std::string> captions;
  std::vector<ChainStep> steps;
  CaptionSource source = CaptionSource::GroundTruth;
  std::vector<std::string> flags;

  [[nodiscard]] bool has_flag(std::string_view f) const {
    return std::find(flags.begin(), flags.end(), f) != flags.end();
  }
  [[nodiscard]] std::size_t rejected_attempts() const {
    return static_cast<std::size_t>(std::count_if(flags.begin(), flags.end(), [](const std::string& f) {
      return f.starts_with(flags::kRejectedPrefix);
    }));
  }

  friend bool operator==(const CaptionChain&, const CaptionChain&) = default;
};

inline json to_json(const CaptionChain& c) {
  json steps = json::array();
  for (const auto& s : c.steps) steps.push_back({{"error_type", s.error_type}, {"summary", s.summary}});
  return {{"video_id", c.video_id}, {"source", to_string(c.source)}, {"captions", c.captions},
          {"steps", steps}, {"flags", c.flags}};
}

inline CaptionChain chain_from_json(const json& record) {
  CaptionChain c;
  c.video_id = io::field<std::string>(record, "video_id");
  c.source = parse_source(record.value("source", std::string("GROUND_TRUTH")));
  c.captions = io::field<std::vector<std::string>>(record, "captions");
  for (const auto& s : io::field<json>(record, "steps")) {
    c.steps.push_back({io::field<std::string>(s, "error_type"), io::field<std::string>(s, "summary")});
  }
  c.flags = record.value("flags", std::vector<std::string>{});
  return c;
}

/// A seed caption as read from an input dataset or produced by recaptioning.
struct ChainSeed {
  std::string video_id;
  std::string caption;
  std::string meta;  // opaque metadata passed to prompts
  CaptionSource source = CaptionSource::GroundTruth;
};

struct Mutation {
  std::string caption;
  std::string summary;
};

struct Rejection {
  std::string reason;
};

using MutationOutcome = std::variant<Mutation, Rejection>;

/// Parses "CAPTION: ... / SUMMARY: ..." or "REJECT: ..." backend output.
inline MutationOutcome parse_mutation(std::string_view output, std::string_view previous_caption) {
  const auto body = text::trim(output);
  if (text::to_lower(body.substr(0, std::min<std::size_t>(6, body.size()))) == "reject") {
    const auto colon = body.find(':');
    return Rejection{colon == std::string_view::npos ? std::string() : std::string(text::trim(body.substr(colon + 1)))};
  }
  std::string caption;
  std::string summary;
  std::size_t start = 0;
  while (start < body.size()) {
    auto end = body.find('\n', start);
    if (end == std::string_view::npos) end = body.size();
    const auto line = text::trim(body.substr(start, end - start));
    if (line.starts_with("CAPTION:")) caption = std::string(text::trim(line.substr(8)));
    if (line.starts_with("SUMMARY:")) summary = std::string(text::trim(line.substr(8)));
    start = end + 1;
  }
  if (caption.empty()) fail(ErrorKind::Parse, "mutation output has no CAPTION line");
  if (caption == text::trim(previous_caption)) return Rejection{"no-op mutation"};
  if (summary.empty()) summary = "unspecified change";
  return Mutation{std::move(caption), std::move(summary)};
}

inline std::string previous_errors_text(std::span<const ChainStep> steps) {
  if (steps.empty()) return "(none)";
  std::string out;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    out += std::to_string(i + 1) + ". [" + steps[i].error_type + "] " + steps[i].summary + '\n';
  }
  return out;
}

struct ChainGenConfig {
  int max_resamples = 3;  // fresh error types tried after a rejection
  ErrorWeights weights;
  double temperature = llm::kGenerationTemperature;
  int max_tokens = 1024;
};

/// One backend call: apply `error_type` to the latest caption of `chain`.
inline MutationOutcome mutate_caption(const CaptionChain& chain, const ErrorType& error_type, std::string_view video_meta,
                                      llm::Client& client, const ChainGenConfig& config = {}) {
  require(!chain.captions.empty(), "chain is empty");
  llm::CompletionRequest request;
  request.template_id = "mutate_caption";
  request.temperature = config.temperature;
  request.max_tokens = config.max_tokens;
  request.vars = {{"caption", chain.captions.back()},
                  {"reference", chain.captions.front()},
                  {"previous_errors", previous_errors_text(chain.steps)},
                  {"error_type", error_type.id},
                  {"error_description", error_type.description},
                  {"meta", std::string(video_meta)}};
  return parse_mutation(client.complete(request), chain.captions.back());
}

/// Picks an applicable type and mutates, resampling among the remaining
/// types after each rejection. Rejections are appended to `rejected`.
inline std::optional<std::pair<ErrorType, Mutation>> mutate_with_resampling(
    const CaptionChain& chain, std::span<const ErrorType> taxonomy, std::string_view meta, const ChainGenConfig& config,
    llm::Client& client, Rng& rng, std::vector<std::string>& rejected) {
  auto candidates = applicable_errors(chain.captions.back(), taxonomy);
  for (int attempt = 0; attempt <= config.max_resamples && !candidates.empty(); ++attempt) {
    ErrorType pick;
    try {
      pick = sample_error(candidates, &config.weights, rng);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::NoApplicableError) break;
      throw;
    }
    auto outcome = mutate_caption(chain, pick, meta, client, config);
    if (auto* m = std::get_if<Mutation>(&outcome)) return std::pair{pick, std::move(*m)};
    rejected.push_back(std::string(flags::kRejectedPrefix) + pick.id);
    std::erase_if(candidates, [&](const ErrorType& t) { return t.id == pick.id; });
  }
  return std::nullopt;
}

/// Builds a chain of up to chain_len + 1 captions. When every resample is
/// rejected the chain stops early and is flagged "truncated".
inline CaptionChain generate_chain(const ChainSeed& seed, int chain_len, std::span<const ErrorType> taxonomy,
                                   const ChainGenConfig& config, llm::Client& client, Rng& rng) {
  require(chain_len >= 1, "chain_len must be at least 1");
  require(!text::trim(seed.caption).empty(), "seed caption is empty");
  CaptionChain chain;
  chain.video_id = seed.video_id;
  chain.source = seed.source;
  chain.captions.push_back(seed.caption);
  for (int i = 0; i < chain_len; ++i) {
    auto result = mutate_with_resampling(chain, taxonomy, seed.meta, config, client, rng, chain.flags);
    if (!result) {
      chain.flags.emplace_back(flags::kTruncated);
      break;
    }
    chain.steps.push_back({result->first.id, result->second.summary});
    chain.captions.push_back(std::move(result->second.caption));
  }
  return chain;
}

/// Baseline data: each negative is an independent single-error edit of the
/// seed. Laid out like a chain record (seed first) and flagged "independent".
inline CaptionChain generate_independent_negatives(const ChainSeed& seed, int count, std::span<const ErrorType> taxonomy,
                                                   const ChainGenConfig& config, llm::Client& client, Rng& rng) {
  require(count >= 1, "count must be at least 1");
  require(!text::trim(seed.caption).empty(), "seed caption is empty");
  CaptionChain out;
  out.video_id = seed.video_id;
  out.source = seed.source;
  out.captions.push_back(seed.caption);
  out.flags.emplace_back(flags::kIndependent);
  CaptionChain base = out;
  base.flags.clear();
  for (int i = 0; i < count; ++i) {
    auto result = mutate_with_resampling(base, taxonomy, seed.meta, config, client, rng, out.flags);
    if (!result) {
      out.flags.emplace_back(flags::kTruncated);
      continue;
    }
    out.steps.push_back({result->first.id, result->second.summary});
    out.captions.push_back(std::move(result->second.caption));
  }
  return out;
}

/// Generates one chain per seed on up to `concurrency` threads. Each chain
/// draws from its own rng seeded by (global_seed, video_id), so the output
/// does not depend on scheduling.
inline std::vector<CaptionChain> generate_chains(std::span<const ChainSeed> seeds, int chain_len,
                                                 std::span<const ErrorType> taxonomy, const ChainGenConfig& config,
                                                 llm::Client& client, std::uint64_t global_seed, int concurrency,
                                                 bool independent = false) {
  std::vector<CaptionChain> out(seeds.size());
  std::vector<std::exception_ptr> errors(seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (auto i = next++; i < seeds.size(); i = next++) {
      try {
        Rng rng(derive_seed(global_seed, seeds[i].video_id));
        out[i] = independent ? generate_independent_negatives(seeds[i], chain_len, taxonomy, config, client, rng)
                             : generate_chain(seeds[i], chain_len, taxonomy, config, client, rng);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto threads = static_cast<std::size_t>(std::clamp(concurrency, 1, 64));
  if (threads == 1 || seeds.size() < 2) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < std::min(threads, seeds.size()); ++t) pool.emplace_back(worker);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Recaptioning

struct RecaptionConfig {
  bool passthrough = true;
  std::size_t min_words = 30;  // a single caption this long is used as-is
};

inline ChainSeed recaption_seed(const std::string& video_id, std::span<const std::string> raw_captions,
                                std::string_view video_meta, llm::Client& client, const RecaptionConfig& config = {}) {
  require(!raw_captions.empty(), "at least one raw caption is required");
  if (config.passthrough && raw_captions.size() == 1 && text::words(raw_captions[0]).size() >= config.min_words) {
    return {video_id, raw_captions[0], std::string(video_meta), CaptionSource::GroundTruth};
  }
  std::string listing;
  for (const auto& c : raw_captions) listing += "- " + c + '\n';
  llm::CompletionRequest request;
  request.template_id = "recaption";
  request.temperature = llm::kGenerationTemperature;
  request.vars = {{"captions", listing}, {"meta", std::string(video_meta)}};
  auto caption = std::string(text::trim(client.complete(request)));
  if (caption.empty()) fail(ErrorKind::Parse, "recaption output is empty");
  return {video_id, std::move(caption), std::string(video_meta), CaptionSource::Recaptioned};
}

// ---------------------------------------------------------------------------
// Audit

struct AuditReport {
  std::string video_id;
  bool structural_pass = true;
  std::optional<bool> order_pass;  // empty: no judge, or the judge failed
  std::vector<std::string> reasons;
};

inline json to_json(const AuditReport& r) {
  return {{"video_id", r.video_id},
          {"structural_pass", r.structural_pass},
          {"order_pass", r.order_pass ? json(*r.order_pass) : json(nullptr)},
          {"reasons", r.reasons}};
}

inline bool parse_yes_no(std::string_view output) {
  const auto lower = text::to_lower(text::trim(output));
  if (lower.starts_with("yes")) return true;
  if (lower.starts_with("no")) return false;
  fail(ErrorKind::Parse, "expected YES or NO, got '" + std::string(output) + "'");
}

/// Structural checks always run. With a judge, every consecutive pair is
/// asked whether the later caption is strictly less faithful.
inline AuditReport audit_chain(const CaptionChain& chain, std::span<const ErrorType> taxonomy, llm::Client* judge = nullptr) {
  AuditReport report;
  report.video_id = chain.video_id;
  auto fail_structure = [&](std::string reason) {
    report.structural_pass = false;
    report.reasons.push_back(std::move(reason));
  };
  if (chain.captions.empty()) {
    fail_structure("empty chain");
    return report;
  }
  if (chain.captions.size() != chain.steps.size() + 1) fail_structure("captions/steps length mismatch");
  for (std::size_t k = 0; k < chain.captions.size(); ++k) {
    if (text::trim(chain.captions[k]).empty()) fail_structure("empty caption at rank " + std::to_string(k));
  }
  for (std::size_t k = 0; k + 1 < chain.captions.size(); ++k) {
    if (text::trim(chain.captions[k]) == text::trim(chain.captions[k + 1])) {
      fail_structure("no-op mutation at step " + std::to_string(k));
    }
  }
  for (std::size_t k = 0; k < chain.steps.size() && k < chain.captions.size(); ++k) {
    const auto& id = chain.steps[k].error_type;
    if (std::none_of(taxonomy.begin(), taxonomy.end(), [&](const ErrorType& t) { return t.id == id; })) {
      fail_structure("unknown error type '" + id + "' at step " + std::to_string(k));
      continue;
    }
    if (text::trim(chain.captions[k]).empty()) continue;
    const auto applicable = applicable_errors(chain.captions[k], taxonomy);
    if (std::none_of(applicable.begin(), applicable.end(), [&](const ErrorType& t) { return t.id == id; })) {
      fail_structure("error type '" + id + "' not applicable at step " + std::to_string(k));
    }
  }
  if (judge == nullptr) return report;

  bool ordered = true;
  try {
    for (std::size_t k = 0; k + 1 < chain.captions.size(); ++k) {
      llm::CompletionRequest request;
      request.template_id = "audit_order";
      request.temperature = llm::kJudgeTemperature;
      request.max_tokens = 8;
      request.vars = {{"reference", chain.captions.front()},
                      {"earlier", chain.captions[k]},
                      {"later", chain.captions[k + 1]}};
      if (!parse_yes_no(judge->complete(request))) {
        ordered = false;
        report.reasons.push_back("order violated between ranks " + std::to_string(k) + " and " + std::to_string(k + 1));
      }
    }
    report.order_pass = ordered;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::Transport && e.kind() != ErrorKind::Parse && e.kind() != ErrorKind::Permanent) throw;
    report.order_pass.reset();
    report.reasons.push_back(std::string("judge unavailable: ") + e.what());
  }
  return report;
}

}  // namespace rcc::chaingen
