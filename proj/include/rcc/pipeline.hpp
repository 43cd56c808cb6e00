#pragma once

// Run configuration and the command implementations behind the `rcc` tool.
// Every command reads JSONL, writes JSONL/CSV/JSON under the output
// directory with atomic renames, and stamps reports with a config fingerprint.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "rcc/chaingen.hpp"
#include "rcc/error.hpp"
#include "rcc/evalkit.hpp"
#include "rcc/http_transport.hpp"
#include "rcc/io.hpp"
#include "rcc/llmgateway.hpp"
#include "rcc/random.hpp"
#include "rcc/rankloss.hpp"
#include "rcc/text.hpp"
#include "rcc/toypolicy.hpp"
#include "rcc/transform.hpp"

namespace rcc::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

struct Paths {
  fs::path input;
  fs::path second_input;  // agreement: the other judge-score file
  fs::path out = "out";
  fs::path taxonomy;
  fs::path templates;
  fs::path checkpoint;
};

struct MixRatio {
  double mcq = 1.0;
  double ynq = 1.0;
  double caption = 1.0;
};

struct RunConfig {
  std::uint64_t seed = 0;
  int chain_len = 4;
  int concurrency = 4;
  Paths paths;
  llm::BackendConfig backend;
  rankloss::LossConfig loss;
  toy::TrainConfig train;
  double init_scale = 0.01;  // std of the initial toy policy parameters
  std::vector<int> sweep;    // chain lengths; empty = single run at chain_len
  toy::SynthConfig synth;    // count, vocab, dims; chain_len and seed come from above
  std::size_t audit_sample = 100;
  bool audit_judge = true;
  MixRatio mix;
  chaingen::RecaptionConfig recaption;
  int max_resamples = 3;
  bool independent = false;

  void validate() const {
    if (chain_len < 1) fail(ErrorKind::Configuration, "chain_len must be at least 1");
    if (concurrency < 1) fail(ErrorKind::Configuration, "concurrency must be at least 1");
    if (paths.out.empty()) fail(ErrorKind::Configuration, "output directory is empty");
    if (init_scale < 0.0) fail(ErrorKind::Configuration, "init_scale must be non-negative");
    if (max_resamples < 0) fail(ErrorKind::Configuration, "max_resamples must be non-negative");
    if (mix.mcq < 0 || mix.ynq < 0 || mix.caption < 0 || mix.mcq + mix.ynq + mix.caption <= 0) {
      fail(ErrorKind::Configuration, "mix ratio needs non-negative parts with a positive sum");
    }
    for (int len : sweep) {
      if (len < 1) fail(ErrorKind::Configuration, "sweep lengths must be at least 1");
    }
    backend.validate();
    try {
      loss.validate();
      train.validate();
      toy::SynthConfig s = synth;
      s.chain_len = chain_len;
      s.validate();
    } catch (const Error& e) {
      fail(ErrorKind::Configuration, e.what());
    }
  }
};

inline std::string to_string(llm::BackendKind kind) { return kind == llm::BackendKind::Mock ? "mock" : "http"; }

inline json to_json(const RunConfig& c) {
  return {
      {"seed", c.seed},
      {"chain_len", c.chain_len},
      {"concurrency", c.concurrency},
      {"paths",
       {{"input", c.paths.input.string()},
        {"second_input", c.paths.second_input.string()},
        {"out", c.paths.out.string()},
        {"taxonomy", c.paths.taxonomy.string()},
        {"templates", c.paths.templates.string()},
        {"checkpoint", c.paths.checkpoint.string()}}},
      {"backend",
       {{"kind", to_string(c.backend.kind)},
        {"endpoint", c.backend.endpoint},
        {"credential_env", c.backend.credential_env},
        {"model", c.backend.model},
        {"timeout_seconds", c.backend.timeout_seconds},
        {"max_retries", c.backend.max_retries},
        {"max_in_flight", c.backend.max_in_flight}}},
      {"loss", {{"objective", rankloss::to_string(c.loss.objective)}, {"beta", c.loss.beta}, {"ntp_weight", c.loss.ntp_weight}}},
      {"train",
       {{"steps", c.train.steps},
        {"batch_size", c.train.batch_size},
        {"learning_rate", c.train.optimizer.learning_rate},
        {"beta1", c.train.optimizer.beta1},
        {"beta2", c.train.optimizer.beta2},
        {"epsilon", c.train.optimizer.epsilon},
        {"weight_decay", c.train.optimizer.weight_decay},
        {"init_scale", c.init_scale},
        {"sweep", c.sweep}}},
      {"synth",
       {{"count", c.synth.count},
        {"vocab_size", c.synth.vocab_size},
        {"ctx_dim", c.synth.ctx_dim},
        {"seq_len", c.synth.seq_len},
        {"teacher_scale", c.synth.teacher_scale},
        {"independent", c.synth.independent}}},
      {"audit", {{"sample", c.audit_sample}, {"judge", c.audit_judge}}},
      {"transform", {{"mix", {c.mix.mcq, c.mix.ynq, c.mix.caption}}}},
      {"generation",
       {{"max_resamples", c.max_resamples},
        {"independent", c.independent},
        {"recaption_passthrough", c.recaption.passthrough},
        {"recaption_min_words", c.recaption.min_words}}},
  };
}

namespace detail {

template <class T>
void read_into(const json& obj, const char* key, T& target) {
  if (!obj.is_object() || !obj.contains(key)) return;
  try {
    target = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Configuration, std::string("config field '") + key + "': " + e.what());
  }
}

inline void read_path(const json& obj, const char* key, fs::path& target) {
  std::string s;
  read_into(obj, key, s);
  if (obj.is_object() && obj.contains(key)) target = s;
}

inline const json& section(const json& doc, const char* key) {
  static const json empty = json::object();
  if (!doc.contains(key)) return empty;
  if (!doc.at(key).is_object()) fail(ErrorKind::Configuration, std::string("config section '") + key + "' must be an object");
  return doc.at(key);
}

}  // namespace detail

inline llm::BackendKind parse_backend_kind(const std::string& s) {
  if (s == "mock") return llm::BackendKind::Mock;
  if (s == "http") return llm::BackendKind::HttpChat;
  fail(ErrorKind::Configuration, "unknown backend kind '" + s + "' (expected http or mock)");
}

/// Fields absent from `doc` keep their current values, so a file can be
/// layered over defaults and flags layered over the file.
inline void apply_json(RunConfig& c, const json& doc) {
  if (!doc.is_object()) fail(ErrorKind::Configuration, "config must be a JSON object");
  using detail::read_into;
  using detail::read_path;
  read_into(doc, "seed", c.seed);
  read_into(doc, "chain_len", c.chain_len);
  read_into(doc, "concurrency", c.concurrency);

  const auto& p = detail::section(doc, "paths");
  read_path(p, "input", c.paths.input);
  read_path(p, "second_input", c.paths.second_input);
  read_path(p, "out", c.paths.out);
  read_path(p, "taxonomy", c.paths.taxonomy);
  read_path(p, "templates", c.paths.templates);
  read_path(p, "checkpoint", c.paths.checkpoint);

  const auto& b = detail::section(doc, "backend");
  if (b.contains("kind")) {
    std::string kind;
    read_into(b, "kind", kind);
    c.backend.kind = parse_backend_kind(kind);
  }
  read_into(b, "endpoint", c.backend.endpoint);
  read_into(b, "credential_env", c.backend.credential_env);
  read_into(b, "model", c.backend.model);
  read_into(b, "timeout_seconds", c.backend.timeout_seconds);
  read_into(b, "max_retries", c.backend.max_retries);
  read_into(b, "max_in_flight", c.backend.max_in_flight);

  const auto& l = detail::section(doc, "loss");
  if (l.contains("objective")) {
    std::string name;
    read_into(l, "objective", name);
    auto parsed = rankloss::parse_objective(name);
    if (!parsed) fail(ErrorKind::Configuration, "unknown objective '" + name + "'");
    c.loss.objective = *parsed;
  }
  read_into(l, "beta", c.loss.beta);
  read_into(l, "ntp_weight", c.loss.ntp_weight);

  const auto& t = detail::section(doc, "train");
  read_into(t, "steps", c.train.steps);
  read_into(t, "batch_size", c.train.batch_size);
  read_into(t, "learning_rate", c.train.optimizer.learning_rate);
  read_into(t, "beta1", c.train.optimizer.beta1);
  read_into(t, "beta2", c.train.optimizer.beta2);
  read_into(t, "epsilon", c.train.optimizer.epsilon);
  read_into(t, "weight_decay", c.train.optimizer.weight_decay);
  read_into(t, "init_scale", c.init_scale);
  read_into(t, "sweep", c.sweep);

  const auto& s = detail::section(doc, "synth");
  read_into(s, "count", c.synth.count);
  read_into(s, "vocab_size", c.synth.vocab_size);
  read_into(s, "ctx_dim", c.synth.ctx_dim);
  read_into(s, "seq_len", c.synth.seq_len);
  read_into(s, "teacher_scale", c.synth.teacher_scale);
  read_into(s, "independent", c.synth.independent);

  const auto& a = detail::section(doc, "audit");
  read_into(a, "sample", c.audit_sample);
  read_into(a, "judge", c.audit_judge);

  const auto& tr = detail::section(doc, "transform");
  if (tr.contains("mix")) {
    std::vector<double> mix;
    read_into(tr, "mix", mix);
    if (mix.size() != 3) fail(ErrorKind::Configuration, "transform.mix needs three numbers (mcq, ynq, caption)");
    c.mix = {mix[0], mix[1], mix[2]};
  }

  const auto& g = detail::section(doc, "generation");
  read_into(g, "max_resamples", c.max_resamples);
  read_into(g, "independent", c.independent);
  read_into(g, "recaption_passthrough", c.recaption.passthrough);
  read_into(g, "recaption_min_words", c.recaption.min_words);
}

inline RunConfig load_config(const fs::path& path) {
  RunConfig c;
  json doc;
  try {
    doc = json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    fail(ErrorKind::Configuration, path.string() + ": " + e.what());
  }
  apply_json(c, doc);
  return c;
}

/// Hash of the canonical config. The output directory is left out so that
/// identical runs written to different places report the same fingerprint.
inline std::string fingerprint(const RunConfig& c) {
  auto doc = to_json(c);
  doc["paths"].erase("out");
  const auto h = fnv1a(doc.dump());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline MixRatio parse_mix(const std::string& text) {
  std::vector<double> parts;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find_first_of("/:,", start);
    if (end == std::string::npos) end = text.size();
    try {
      parts.push_back(io::parse_double(text.substr(start, end - start)));
    } catch (const Error&) {
      fail(ErrorKind::Configuration, "bad mix ratio '" + text + "'");
    }
    start = end + 1;
  }
  if (parts.size() != 3) fail(ErrorKind::Configuration, "mix ratio needs three parts, e.g. 1/1/1");
  return {parts[0], parts[1], parts[2]};
}

// ---------------------------------------------------------------------------
// Shared plumbing

struct Context {
  RunConfig config;
  /// Tests inject a scripted client here; otherwise one is built from the
  /// backend config on first use.
  std::shared_ptr<llm::Client> client;

  llm::Client& backend() {
    if (!client) {
      auto templates = llm::TemplateStore::builtin();
      if (!config.paths.templates.empty()) templates.load_directory(config.paths.templates);
      client = llm::make_client(config.backend, std::move(templates));
    }
    return *client;
  }

  [[nodiscard]] std::vector<chaingen::ErrorType> taxonomy() const {
    return config.paths.taxonomy.empty() ? chaingen::default_taxonomy() : chaingen::load_taxonomy(config.paths.taxonomy);
  }

  [[nodiscard]] fs::path out(const std::string& name) const { return config.paths.out / name; }

  [[nodiscard]] const fs::path& input() const {
    if (config.paths.input.empty()) fail(ErrorKind::Configuration, "no input dataset given (--input)");
    return config.paths.input;
  }
};

inline void write_json(const fs::path& path, const json& doc) { io::write_atomic(path, doc.dump(2) + "\n"); }

/// Runs `fn(i)` for i in [0, n) on up to `threads` workers; results keep
/// input order and the first failure (by index) is rethrown.
template <class T>
std::vector<T> parallel_map(std::size_t n, int threads, const std::function<T(std::size_t)>& fn) {
  std::vector<std::optional<T>> slots(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (auto i = next++; i < n; i = next++) {
      try {
        slots[i] = fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto count = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, threads)), n);
  if (count <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < count; ++t) pool.emplace_back(worker);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<T> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

inline std::vector<chaingen::CaptionChain> read_chains(const fs::path& path) {
  std::vector<chaingen::CaptionChain> out;
  for (const auto& r : io::read_jsonl(path)) out.push_back(chaingen::chain_from_json(r));
  return out;
}

inline std::string meta_text(const json& record) {
  if (!record.contains("meta")) return {};
  const auto& m = record.at("meta");
  return m.is_string() ? m.get<std::string>() : m.dump();
}

inline double mean(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

// ---------------------------------------------------------------------------
// chain-gen

/// Input records carry `video_id` plus either `caption` (used as the seed)
/// or `captions` (raw captions merged by recaptioning), and optional `meta`.
inline json cmd_chain_gen(Context& ctx) {
  const auto& cfg = ctx.config;
  const auto records = io::read_jsonl(ctx.input());
  const auto taxonomy = ctx.taxonomy();
  const auto out_path = ctx.out("chains.jsonl");

  std::vector<chaingen::CaptionChain> existing;
  std::set<std::string> done;
  if (fs::exists(out_path)) {
    existing = read_chains(out_path);
    for (const auto& c : existing) done.insert(c.video_id);
  }

  std::vector<json> pending;
  std::set<std::string> seen;
  std::size_t skipped = 0;
  for (const auto& r : records) {
    const auto id = io::field<std::string>(r, "video_id");
    if (!seen.insert(id).second) fail(ErrorKind::Io, "duplicate video_id '" + id + "' in input");
    if (done.contains(id)) {
      ++skipped;
      continue;
    }
    pending.push_back(r);
  }

  std::vector<chaingen::CaptionChain> fresh;
  if (!pending.empty()) {
    auto& client = ctx.backend();
    auto seeds = parallel_map<chaingen::ChainSeed>(pending.size(), cfg.concurrency, [&](std::size_t i) {
      const auto& r = pending[i];
      const auto id = io::field<std::string>(r, "video_id");
      if (r.contains("caption")) {
        auto source = chaingen::parse_source(r.value("source", std::string("GROUND_TRUTH")));
        return chaingen::ChainSeed{id, io::field<std::string>(r, "caption"), meta_text(r), source};
      }
      const auto raw = io::field<std::vector<std::string>>(r, "captions");
      return chaingen::recaption_seed(id, raw, meta_text(r), client, cfg.recaption);
    });
    chaingen::ChainGenConfig gen;
    gen.max_resamples = cfg.max_resamples;
    fresh = chaingen::generate_chains(seeds, cfg.chain_len, taxonomy, gen, client, cfg.seed, cfg.concurrency,
                                      cfg.independent);
  }

  std::vector<json> lines;
  for (const auto& c : existing) lines.push_back(chaingen::to_json(c));
  for (const auto& c : fresh) lines.push_back(chaingen::to_json(c));
  io::write_jsonl(out_path, lines);

  std::map<std::string, std::size_t> per_type;
  for (const auto& t : taxonomy) per_type[t.id] = 0;
  std::size_t steps = 0, truncated = 0, completed = 0, rejected = 0;
  for (const auto& c : fresh) {
    for (const auto& s : c.steps) ++per_type[s.error_type];
    steps += c.steps.size();
    rejected += c.rejected_attempts();
    if (c.has_flag(chaingen::flags::kTruncated)) {
      ++truncated;
    } else {
      ++completed;
    }
  }
  json report = {{"fingerprint", fingerprint(cfg)},
                 {"input_records", records.size()},
                 {"skipped_existing", skipped},
                 {"attempted", fresh.size()},
                 {"completed", completed},
                 {"truncated", truncated},
                 {"total_steps", steps},
                 {"rejected_attempts", rejected},
                 {"per_error_type", per_type},
                 {"chains_in_output", lines.size()}};
  write_json(ctx.out("chain_gen_report.json"), report);
  return report;
}

// ---------------------------------------------------------------------------
// audit

inline json cmd_audit(Context& ctx) {
  const auto& cfg = ctx.config;
  const auto chains = read_chains(ctx.input());
  const auto taxonomy = ctx.taxonomy();

  std::vector<std::size_t> idx(chains.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(cfg.seed, "audit"));
  rng.shuffle(std::span(idx));
  const auto take = std::min(cfg.audit_sample, chains.size());
  idx.resize(take);
  std::sort(idx.begin(), idx.end());

  llm::Client* judge = cfg.audit_judge ? &ctx.backend() : nullptr;
  auto reports = parallel_map<chaingen::AuditReport>(idx.size(), cfg.concurrency, [&](std::size_t i) {
    return chaingen::audit_chain(chains[idx[i]], taxonomy, judge);
  });

  std::vector<json> lines;
  std::size_t structural = 0, order_pass = 0, order_known = 0;
  for (const auto& r : reports) {
    lines.push_back(chaingen::to_json(r));
    structural += r.structural_pass ? 1 : 0;
    if (r.order_pass) {
      ++order_known;
      order_pass += *r.order_pass ? 1 : 0;
    }
  }
  io::write_jsonl(ctx.out("audit.jsonl"), lines);

  auto rate = [](std::size_t k, std::size_t n) -> json {
    if (n == 0) return nullptr;
    return static_cast<double>(k) / static_cast<double>(n);
  };
  json summary = {{"fingerprint", fingerprint(cfg)},
                  {"requested", cfg.audit_sample},
                  {"audited", take},
                  {"available", chains.size()},
                  {"shortfall", cfg.audit_sample > take ? cfg.audit_sample - take : 0},
                  {"structural_pass_rate", rate(structural, take)},
                  {"order_judged", order_known},
                  {"order_pass_rate", rate(order_pass, order_known)}};
  write_json(ctx.out("audit_summary.json"), summary);
  return summary;
}

// ---------------------------------------------------------------------------
// transform

/// Split `n` items by ratio using largest remainders; ties go to the earlier part.
inline std::array<std::size_t, 3> split_counts(std::size_t n, const MixRatio& mix) {
  const std::array<double, 3> w = {mix.mcq, mix.ynq, mix.caption};
  const double total = w[0] + w[1] + w[2];
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double exact = static_cast<double>(n) * w[k] / total;
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    rem[k] = exact - static_cast<double>(counts[k]);
    assigned += counts[k];
  }
  while (assigned < n) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < 3; ++k) {
      if (rem[k] > rem[best]) best = k;
    }
    ++counts[best];
    rem[best] = -1.0;
    ++assigned;
  }
  return counts;
}

inline json cmd_transform(Context& ctx) {
  const auto& cfg = ctx.config;
  const auto chains = read_chains(ctx.input());

  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < chains.size(); ++i) {
    if (chains[i].captions.size() >= 2 && chains[i].steps.size() + 1 == chains[i].captions.size()) usable.push_back(i);
  }
  const auto counts = split_counts(usable.size(), cfg.mix);
  std::vector<std::size_t> shuffled = usable;
  Rng rng(derive_seed(cfg.seed, "transform"));
  rng.shuffle(std::span(shuffled));
  std::vector<int> kind(chains.size(), -1);
  for (std::size_t i = 0; i < shuffled.size(); ++i) {
    kind[shuffled[i]] = i < counts[0] ? 0 : (i < counts[0] + counts[1] ? 1 : 2);
  }

  std::vector<std::size_t> work;
  for (std::size_t i : usable) {
    if (kind[i] != 2) work.push_back(i);
  }
  std::vector<json> produced;
  if (!work.empty()) {
    auto& client = ctx.backend();
    produced = parallel_map<json>(work.size(), cfg.concurrency, [&](std::size_t w) {
      const auto& chain = chains[work[w]];
      if (kind[work[w]] == 0) {
        Rng item_rng(derive_seed(cfg.seed, "mcq:" + chain.video_id));
        return transform::to_json(transform::chain_to_mcq(chain, client, &item_rng));
      }
      return transform::to_json(transform::chain_to_ynq(chain, client));
    });
  }

  std::vector<json> mcq, ynq, captions;
  std::size_t w = 0;
  for (std::size_t i : usable) {
    if (kind[i] == 2) {
      captions.push_back(chaingen::to_json(chains[i]));
    } else {
      (kind[i] == 0 ? mcq : ynq).push_back(produced[w++]);
    }
  }
  io::write_jsonl(ctx.out("mcq.jsonl"), mcq);
  io::write_jsonl(ctx.out("ynq.jsonl"), ynq);
  io::write_jsonl(ctx.out("caption_chains.jsonl"), captions);
  json manifest = {{"fingerprint", fingerprint(cfg)},
                   {"input_chains", chains.size()},
                   {"skipped_short", chains.size() - usable.size()},
                   {"mix", {cfg.mix.mcq, cfg.mix.ynq, cfg.mix.caption}},
                   {"mcq", mcq.size()},
                   {"ynq", ynq.size()},
                   {"caption", captions.size()}};
  write_json(ctx.out("transform_manifest.json"), manifest);
  return manifest;
}

// ---------------------------------------------------------------------------
// synth

inline toy::SynthConfig synth_config(const RunConfig& cfg) {
  auto s = cfg.synth;
  s.chain_len = cfg.chain_len;
  s.seed = derive_seed(cfg.seed, "synth");
  return s;
}

inline json cmd_synth(Context& ctx) {
  const auto& cfg = ctx.config;
  const auto data = toy::make_synth_dataset(synth_config(cfg));
  std::vector<json> lines;
  lines.reserve(data.size());
  for (const auto& ex : data) lines.push_back(toy::to_json(ex));
  io::write_jsonl(ctx.out("synth.jsonl"), lines);
  json report = {{"fingerprint", fingerprint(cfg)}, {"examples", data.size()}, {"chain_len", cfg.chain_len}};
  write_json(ctx.out("synth_report.json"), report);
  return report;
}

// ---------------------------------------------------------------------------
// train / eval datasets

/// Caption words hashed into the toy vocabulary. Token 0 is left to the
/// begin-of-sequence marker.
inline toy::TokenSeq hash_tokens(std::string_view caption, int vocab_size) {
  toy::TokenSeq out;
  for (const auto& w : text::metric_tokens(caption)) {
    out.push_back(static_cast<toy::Token>(1 + fnv1a(w) % static_cast<std::uint64_t>(vocab_size - 1)));
  }
  return out;
}

/// Stand-in for video features: a normalised sum of per-word random vectors.
inline std::vector<double> hash_context(std::string_view caption, int dim) {
  std::vector<double> ctx(static_cast<std::size_t>(dim), 0.0);
  const auto words = text::metric_tokens(caption);
  for (const auto& w : words) {
    Rng rng(fnv1a(w));
    for (auto& c : ctx) c += rng.normal();
  }
  if (!words.empty()) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(words.size()));
    for (auto& c : ctx) c *= scale;
  }
  return ctx;
}

inline toy::TrainingChain chain_to_training(const chaingen::CaptionChain& chain, int vocab_size, int dim) {
  toy::TrainingChain out;
  out.context = hash_context(chain.captions.front(), dim);
  for (const auto& c : chain.captions) {
    auto tokens = hash_tokens(c, vocab_size);
    if (tokens.empty()) tokens.push_back(1);
    out.sequences.push_back(std::move(tokens));
  }
  return out;
}

/// Synthetic records (`chain_tokens`) or caption chains (`captions`).
inline std::vector<toy::TrainingChain> read_training_chains(const fs::path& path, const RunConfig& cfg) {
  std::vector<toy::TrainingChain> out;
  for (const auto& r : io::read_jsonl(path)) {
    if (r.contains("chain_tokens")) {
      out.push_back(toy::to_training_chain(toy::synth_from_json(r)));
    } else {
      auto chain = chaingen::chain_from_json(r);
      if (chain.captions.size() < 2) continue;
      out.push_back(chain_to_training(chain, cfg.synth.vocab_size, cfg.synth.ctx_dim));
    }
  }
  if (out.empty()) fail(ErrorKind::InvalidInput, path.string() + " holds no usable chains");
  for (const auto& c : out) {
    if (c.context.size() != static_cast<std::size_t>(cfg.synth.ctx_dim)) {
      fail(ErrorKind::Configuration, "dataset context dimension differs from synth.ctx_dim");
    }
    for (const auto& s : c.sequences) {
      for (auto t : s) {
        if (t < 0 || t >= cfg.synth.vocab_size) fail(ErrorKind::Configuration, "dataset token outside synth.vocab_size");
      }
    }
  }
  return out;
}

inline toy::ToyPolicy initial_policy(const RunConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, "init"));
  return toy::ToyPolicy::random(cfg.synth.vocab_size, cfg.synth.ctx_dim, cfg.init_scale, rng);
}

inline json cmd_train(Context& ctx) {
  const auto& cfg = ctx.config;
  const auto dataset = read_training_chains(ctx.input(), cfg);
  const auto init = initial_policy(cfg);
  auto train_cfg = cfg.train;
  train_cfg.seed = derive_seed(cfg.seed, "train");

  auto run = [&](std::span<const toy::TrainingChain> data, const std::string& suffix) {
    auto result = toy::train(init, data, cfg.loss, train_cfg);
    toy::save_checkpoint(ctx.out("checkpoint" + suffix + ".txt"), result.policy);
    io::write_atomic(ctx.out("trace" + suffix + ".csv"), toy::trace_to_csv(result.trace));
    const auto& first = result.trace.front();
    const auto& last = result.trace.back();
    return json{{"checkpoint", "checkpoint" + suffix + ".txt"},
                {"trace", "trace" + suffix + ".csv"},
                {"chains", data.size()},
                {"responses_per_chain", toy::responses_used(cfg.loss.objective, data.front().sequences.size())},
                {"initial_chain_loss", first.chain_loss},
                {"final_chain_loss", last.chain_loss},
                {"final_total", last.total}};
  };

  json runs = json::array();
  if (cfg.sweep.empty()) {
    runs.push_back(run(dataset, ""));
  } else {
    for (int len : cfg.sweep) {
      const auto truncated = toy::truncate_chains(dataset, static_cast<std::size_t>(len) + 1);
      auto r = run(truncated, "_len" + std::to_string(len));
      r["chain_len"] = len;
      runs.push_back(std::move(r));
    }
  }
  json report = {{"fingerprint", fingerprint(cfg)},
                 {"objective", rankloss::to_string(cfg.loss.objective)},
                 {"runs", runs}};
  write_json(ctx.out("train_report.json"), report);
  return report;
}

// ---------------------------------------------------------------------------
// eval

inline fs::path checkpoint_path(const Context& ctx) {
  return ctx.config.paths.checkpoint.empty() ? ctx.out("checkpoint.txt") : ctx.config.paths.checkpoint;
}

struct CaptionPair {
  std::string id;
  std::string predicted;
  std::string reference;
};

inline std::vector<CaptionPair> read_caption_pairs(const fs::path& path) {
  std::vector<CaptionPair> out;
  std::size_t n = 0;
  for (const auto& r : io::read_jsonl(path)) {
    CaptionPair p;
    p.id = r.contains("id") ? (r["id"].is_string() ? r["id"].get<std::string>() : r["id"].dump()) : std::to_string(n);
    p.predicted = io::field<std::string>(r, "predicted");
    p.reference = io::field<std::string>(r, "reference");
    out.push_back(std::move(p));
    ++n;
  }
  return out;
}

inline json eval_judge(Context& ctx) {
  const auto& cfg = ctx.config;
  const auto pairs = read_caption_pairs(ctx.input());
  auto& client = ctx.backend();
  auto scores = parallel_map<evalkit::JudgeScore>(pairs.size(), cfg.concurrency, [&](std::size_t i) {
    return evalkit::judge_caption(pairs[i].predicted, pairs[i].reference, client);
  });
  std::vector<json> lines;
  std::string csv = "id,relevance,descriptiveness,temporal_consistency,fluency\n";
  std::array<std::vector<double>, 4> columns;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto rec = evalkit::to_json(scores[i]);
    rec["id"] = pairs[i].id;
    lines.push_back(rec);
    const auto v = scores[i].values();
    csv += pairs[i].id;
    for (std::size_t k = 0; k < 4; ++k) {
      csv += ',' + std::to_string(v[k]);
      columns[k].push_back(v[k]);
    }
    csv += '\n';
  }
  io::write_jsonl(ctx.out("judge.jsonl"), lines);
  io::write_atomic(ctx.out("judge.csv"), csv);
  json means = json::object();
  for (std::size_t k = 0; k < 4; ++k) means[evalkit::kJudgeMetrics[k]] = mean(columns[k]);
  json summary = {{"fingerprint", fingerprint(cfg)}, {"count", pairs.size()}, {"means", means}};
  write_json(ctx.out("judge_summary.json"), summary);
  return summary;
}

inline json eval_ngram(Context& ctx) {
  const auto& cfg = ctx.config;
  const auto pairs = read_caption_pairs(ctx.input());
  std::vector<json> lines;
  std::string csv = "id,rouge_l,meteor_lite\n";
  std::vector<double> rouge, meteor;
  for (const auto& p : pairs) {
    const auto r = evalkit::rouge_l(p.predicted, p.reference);
    const auto m = evalkit::meteor_lite(p.predicted, p.reference);
    rouge.push_back(r.value);
    meteor.push_back(m.value);
    lines.push_back({{"id", p.id},
                     {"rouge_l", {{"precision", r.precision}, {"recall", r.recall}, {"value", r.value}}},
                     {"meteor_lite", {{"precision", m.precision}, {"recall", m.recall}, {"value", m.value}}}});
    csv += p.id + ',' + io::format_double(r.value) + ',' + io::format_double(m.value) + '\n';
  }
  io::write_jsonl(ctx.out("ngram.jsonl"), lines);
  io::write_atomic(ctx.out("ngram.csv"), csv);
  json summary = {{"fingerprint", fingerprint(cfg)},
                  {"count", pairs.size()},
                  {"means", {{"rouge_l", mean(rouge)}, {"meteor_lite", mean(meteor)}}}};
  write_json(ctx.out("ngram_summary.json"), summary);
  return summary;
}

inline json eval_rank_acc(Context& ctx) {
  const auto& cfg = ctx.config;
  const auto dataset = read_training_chains(ctx.input(), cfg);
  const auto policy = toy::load_checkpoint(checkpoint_path(ctx));
  if (policy.vocab_size() != cfg.synth.vocab_size || policy.ctx_dim() != cfg.synth.ctx_dim) {
    fail(ErrorKind::Configuration, "checkpoint shape differs from synth.vocab_size / synth.ctx_dim");
  }
  const auto acc = evalkit::ranking_accuracy(policy, dataset);
  json summary = {{"fingerprint", fingerprint(cfg)},
                  {"chains", acc.chains},
                  {"pairs", acc.pairs},
                  {"exact_order_rate", acc.exact_order_rate},
                  {"pairwise_rate", acc.pairwise_rate},
                  {"tied_pairs", acc.tied_pairs},
                  {"degenerate", acc.degenerate()}};
  write_json(ctx.out("rank_acc_summary.json"), summary);
  return summary;
}

/// Each item is answered by the toy policy: the question and the lettered
/// choices form the prompt, and each "(x)" letter string is scored after it.
inline json eval_mcqa(Context& ctx) {
  const auto& cfg = ctx.config;
  const auto policy = toy::load_checkpoint(checkpoint_path(ctx));
  const int v = policy.vocab_size();
  std::vector<json> lines;
  std::size_t correct = 0, total = 0;
  for (const auto& r : io::read_jsonl(ctx.input())) {
    const auto item = transform::mcq_from_json(r);
    std::string prompt_text = item.question;
    std::vector<toy::TokenSeq> letters;
    for (const auto& c : item.choices) {
      prompt_text += " (" + text::to_lower(c.letter) + ") " + c.text;
      letters.push_back(hash_tokens("(" + text::to_lower(c.letter) + ")", v));
    }
    const auto context = hash_context(item.question, policy.ctx_dim());
    const auto prompt = hash_tokens(prompt_text, v);
    const auto chosen = evalkit::mcqa_answer(policy, context, letters, prompt);
    const bool ok = item.quality_rank[chosen] == 0;
    correct += ok ? 1 : 0;
    ++total;
    lines.push_back({{"video_id", item.video_id}, {"chosen", item.choices[chosen].letter}, {"correct", ok}});
  }
  if (total == 0) fail(ErrorKind::InvalidInput, "no MCQ items to evaluate");
  io::write_jsonl(ctx.out("mcqa.jsonl"), lines);
  json summary = {{"fingerprint", fingerprint(cfg)},
                  {"count", total},
                  {"accuracy", static_cast<double>(correct) / static_cast<double>(total)}};
  write_json(ctx.out("mcqa_summary.json"), summary);
  return summary;
}

/// Spearman per metric between two judge-score files, aligned by position.
inline json eval_agreement(Context& ctx) {
  const auto& cfg = ctx.config;
  if (cfg.paths.second_input.empty()) fail(ErrorKind::Configuration, "agreement needs a second score file (--second-input)");
  const auto a = io::read_jsonl(ctx.input());
  const auto b = io::read_jsonl(cfg.paths.second_input);
  require(a.size() == b.size(), "score files differ in length");
  json correlations = json::object();
  for (const char* metric : evalkit::kJudgeMetrics) {
    std::vector<double> xa, xb;
    for (std::size_t i = 0; i < a.size(); ++i) {
      xa.push_back(io::field<double>(a[i], metric));
      xb.push_back(io::field<double>(b[i], metric));
    }
    try {
      correlations[metric] = evalkit::spearman(xa, xb);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::UndefinedCorrelation) throw;
      correlations[metric] = nullptr;
    }
  }
  json summary = {{"fingerprint", fingerprint(cfg)}, {"count", a.size()}, {"spearman", correlations}};
  write_json(ctx.out("agreement.json"), summary);
  return summary;
}

inline json cmd_eval(Context& ctx, const std::string& what) {
  if (what == "judge") return eval_judge(ctx);
  if (what == "ngram") return eval_ngram(ctx);
  if (what == "rank-acc") return eval_rank_acc(ctx);
  if (what == "mcqa") return eval_mcqa(ctx);
  if (what == "agreement") return eval_agreement(ctx);
  fail(ErrorKind::Configuration, "unknown eval target '" + what + "'");
}

// ---------------------------------------------------------------------------

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput:
    case ErrorKind::Configuration:
      return 2;
    case ErrorKind::Io:
      return 3;
    case ErrorKind::Transport:
    case ErrorKind::Permanent:
    case ErrorKind::Parse:
      return 4;
    case ErrorKind::NoApplicableError:
    case ErrorKind::UndefinedCorrelation:
    case ErrorKind::Invariant:
      return 5;
  }
  return 5;
}

}  // namespace rcc::pipeline
