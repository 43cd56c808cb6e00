// rcc: chain generation, auditing, transformation, toy training and
// evaluation from the command line.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "rcc/pipeline.hpp"

namespace {

using rcc::pipeline::RunConfig;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool mock = false;
  std::optional<int> concurrency;
  std::optional<std::string> out;
  std::optional<std::string> input;
  std::optional<std::string> second_input;
  std::optional<std::string> taxonomy;
  std::optional<std::string> templates;
  std::optional<std::string> checkpoint;
  std::optional<int> chain_len;
  std::optional<std::string> objective;
  std::optional<int> steps;
  std::optional<double> beta;
  std::optional<double> ntp_weight;
  std::vector<int> sweep;
  std::optional<std::size_t> audit_sample;
  bool no_judge = false;
  std::optional<std::string> mix;
  std::optional<int> count;
  bool independent = false;
};

RunConfig resolve(const Overrides& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : rcc::pipeline::load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.mock) c.backend.kind = rcc::llm::BackendKind::Mock;
  if (o.concurrency) {
    c.concurrency = *o.concurrency;
    c.backend.max_in_flight = *o.concurrency;
  }
  if (o.out) c.paths.out = *o.out;
  if (o.input) c.paths.input = *o.input;
  if (o.second_input) c.paths.second_input = *o.second_input;
  if (o.taxonomy) c.paths.taxonomy = *o.taxonomy;
  if (o.templates) c.paths.templates = *o.templates;
  if (o.checkpoint) c.paths.checkpoint = *o.checkpoint;
  if (o.chain_len) c.chain_len = *o.chain_len;
  if (o.objective) {
    auto parsed = rcc::rankloss::parse_objective(*o.objective);
    if (!parsed) rcc::fail(rcc::ErrorKind::Configuration, "unknown objective '" + *o.objective + "'");
    c.loss.objective = *parsed;
  }
  if (o.steps) c.train.steps = *o.steps;
  if (o.beta) c.loss.beta = *o.beta;
  if (o.ntp_weight) c.loss.ntp_weight = *o.ntp_weight;
  if (!o.sweep.empty()) c.sweep = o.sweep;
  if (o.audit_sample) c.audit_sample = *o.audit_sample;
  if (o.no_judge) c.audit_judge = false;
  if (o.mix) c.mix = rcc::pipeline::parse_mix(*o.mix);
  if (o.count) c.synth.count = *o.count;
  if (o.independent) {
    c.independent = true;
    c.synth.independent = true;
  }
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ranked caption chains: generate, audit, transform, train and evaluate"};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "global seed");
  app.add_flag("--mock", o.mock, "use the deterministic mock LLM backend");
  app.add_option("--concurrency", o.concurrency, "worker threads and in-flight backend requests");
  app.add_option("--out", o.out, "output directory");
  app.add_option("--input", o.input, "input dataset (JSONL)");
  app.add_option("--taxonomy", o.taxonomy, "error taxonomy JSON");
  app.add_option("--templates", o.templates, "directory of *.tmpl prompt templates");
  app.add_option("--chain-len", o.chain_len, "mutation steps per chain");

  auto* gen = app.add_subcommand("chain-gen", "build caption chains from seed captions");
  gen->add_flag("--independent", o.independent, "independent single-error negatives instead of chains");

  auto* audit = app.add_subcommand("audit", "audit a seeded sample of chains");
  audit->add_option("--sample", o.audit_sample, "chains to audit");
  audit->add_flag("--no-judge", o.no_judge, "structural checks only");

  auto* trans = app.add_subcommand("transform", "rewrite chains as MCQ / YNQ chains");
  trans->add_option("--mix", o.mix, "MCQ/YNQ/caption ratio, e.g. 1/1/1");

  auto* synth = app.add_subcommand("synth", "write a synthetic token-chain dataset");
  synth->add_option("--count", o.count, "number of chains");
  synth->add_flag("--independent", o.independent, "independent single corruptions");

  auto* train = app.add_subcommand("train", "train the toy policy");
  train->add_option("--objective", o.objective, "PL_DPO, BT_DPO, MPO, HINGE or RANKNET");
  train->add_option("--steps", o.steps, "optimizer steps");
  train->add_option("--beta", o.beta, "DPO temperature");
  train->add_option("--ntp-weight", o.ntp_weight, "next-token loss weight");
  train->add_option("--sweep", o.sweep, "chain lengths to train separately")->delimiter(',');

  auto* eval = app.add_subcommand("eval", "evaluation reports");
  eval->require_subcommand(1);
  std::string eval_target;
  for (const char* name : {"judge", "ngram", "rank-acc", "mcqa", "agreement"}) {
    auto* sub = eval->add_subcommand(name);
    sub->callback([&eval_target, name] { eval_target = name; });
    if (std::string(name) == "rank-acc" || std::string(name) == "mcqa") {
      sub->add_option("--checkpoint", o.checkpoint, "toy policy checkpoint");
    }
    if (std::string(name) == "agreement") {
      sub->add_option("--second-input", o.second_input, "second judge-score file")->required();
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    rcc::pipeline::Context ctx{resolve(o), nullptr};
    nlohmann::json report;
    if (gen->parsed()) report = rcc::pipeline::cmd_chain_gen(ctx);
    if (audit->parsed()) report = rcc::pipeline::cmd_audit(ctx);
    if (trans->parsed()) report = rcc::pipeline::cmd_transform(ctx);
    if (synth->parsed()) report = rcc::pipeline::cmd_synth(ctx);
    if (train->parsed()) report = rcc::pipeline::cmd_train(ctx);
    if (eval->parsed()) report = rcc::pipeline::cmd_eval(ctx, eval_target);
    std::cout << report.dump(2) << '\n';
    return 0;
  } catch (const rcc::Error& e) {
    std::cerr << "rcc: " << rcc::to_string(e.kind()) << ": " << e.what() << '\n';
    return rcc::pipeline::exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "rcc: io: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "rcc: " << e.what() << '\n';
    return 5;
  }
}
