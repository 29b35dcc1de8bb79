// matterrank: rank candidate materials for a target application by cosine
// similarity between material-name embeddings and an anchor-concept
// embedding, evaluate the ranking against experimental data, and fine-tune a
// sentence encoder with Multiple Negatives Ranking losses.

#include <CLI11.hpp>

#include "matterrank/commands.hpp"
#include "matterrank/run_config.hpp"

using matterrank::cli::RunConfig;

namespace {

// Shared setup: every subcommand reads an optional JSON config file and
// accepts flat flag overrides (flags win over the file).
struct Cli {
  CLI::App app{"material ranking from language-model embeddings", "matterrank"};
  std::string config_file;
  RunConfig cfg;
  std::string command;

  CLI::App* add_command(const std::string& name, const std::string& desc) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", config_file, "JSON config file");
    sub->add_option("--out", cfg.out_dir, "output directory");
    sub->add_option("--seed", cfg.seed, "run seed (default 42)");
    sub->add_option("--run-id", cfg.run_id, "run identifier");
    sub->callback([this, name] { command = name; });
    return sub;
  }
};

}  // namespace

int main(int argc, char** argv) {
  Cli cli;
  RunConfig& cfg = cli.cfg;
  cli.app.require_subcommand(1);

  auto add_source = [&](CLI::App* sub) {
    sub->add_flag("--stub", cfg.use_stub,
                  "deterministic stub encoder (no assets)");
    sub->add_option("--model-path", cfg.model_path,
                    "checkpoint directory or toy-encoder weights file");
    sub->add_option("--provider-endpoint", cfg.provider.endpoint,
                    "remote embedding API endpoint");
    sub->add_option("--provider-model", cfg.provider.model,
                    "remote embedding model identifier");
    sub->add_option("--credential-env", cfg.provider.credential_env,
                    "environment variable holding the API credential");
  };
  auto add_pipeline = [&](CLI::App* sub) {
    sub->add_option("--materials", cfg.materials_csv,
                    "materials CSV (name,formula,experimental_value)");
    sub->add_option("--contexts", cfg.contexts_file,
                    "contexts JSONL from ingest");
    sub->add_option("--context-mode", cfg.context_mode, "free | average");
    sub->add_option("--center-mode", cfg.center_mode,
                    "auto | free | average (center word embedding)");
    sub->add_option("--layer-spec", cfg.layer_spec,
                    "single(k) | sum(..) | average(..) | concat(..)");
    sub->add_option("--center-word", cfg.center_word,
                    "anchor concept (default thermoelectric)");
    sub->add_option("--sample-limit", cfg.sample_limit,
                    "max context sentences per material (default 100)");
  };

  {
    CLI::App* sub = cli.add_command("ingest",
                                    "collect context sentences from a corpus");
    sub->add_option("--materials", cfg.materials_csv, "materials CSV");
    sub->add_option("--corpus", cfg.corpus_dir, "plain-text corpus directory");
    sub->add_option("--center-word", cfg.center_word, "anchor concept");
    sub->add_option("--center-words", cfg.center_words,
                    "extra center words to collect contexts for");
    sub->add_option("--sample-limit", cfg.sample_limit,
                    "max sentences per material");
    sub->add_flag("--glossary", cfg.glossary,
                  "build the description-pair dataset from glossary pages");
    sub->add_flag("--fetch-descriptions", cfg.fetch_descriptions,
                  "also fetch per-compound description paragraphs");
    sub->add_flag("--offline", cfg.offline, "forbid network, use the cache");
    sub->add_option("--cache-dir", cfg.cache_dir,
                    "glossary cache directory (or MATTERRANK_CACHE)");
  }
  {
    CLI::App* sub = cli.add_command(
        "rank", "embed materials and rank them against the center word");
    add_source(sub);
    add_pipeline(sub);
  }
  {
    CLI::App* sub = cli.add_command(
        "eval", "score a ranking against experimental gold ranks");
    sub->add_option("--ranking", cfg.ranking_file, "ranking.csv from rank");
    sub->add_option("--materials", cfg.materials_csv, "materials CSV");
    sub->add_option("--token-lengths", cfg.token_lengths_file,
                    "token_lengths.json (default: sibling of the ranking)");
    sub->add_option("--context-mode", cfg.context_mode,
                    "recorded in the report");
    sub->add_option("--layer-spec", cfg.layer_spec, "recorded in the report");
    sub->add_flag("--length-filter", cfg.has_length_filter,
                  "also evaluate the token-length-filtered subset");
    sub->add_option("--filter-lo", cfg.filter_lo, "filter lower bound");
    sub->add_option("--filter-hi", cfg.filter_hi, "filter upper bound");
  }
  {
    CLI::App* sub = cli.add_command(
        "sweep", "evaluate every encoder layer and chart the correlations");
    add_source(sub);
    add_pipeline(sub);
  }
  {
    CLI::App* sub = cli.add_command(
        "ablate", "re-rank under replacement center words, reusing the store");
    add_source(sub);
    add_pipeline(sub);
    sub->add_option("--center-words", cfg.center_words,
                    "replacement center words");
    sub->add_option("--store", cfg.store_file,
                    "existing store.jsonl to reuse embeddings from");
  }
  {
    CLI::App* sub = cli.add_command(
        "finetune", "two-step contrastive fine-tuning (triplets, then pairs)");
    sub->add_option("--schedule", cfg.schedule_config,
                    "schedule JSON (defaults follow the published setup)");
    sub->add_option("--triplets", cfg.triplets_file, "triplets JSONL");
    sub->add_option("--pairs", cfg.pairs_file, "description pairs JSONL");
    sub->add_option("--sts", cfg.sts_file,
                    "semantic-similarity dev set JSONL for step-1 selection");
    sub->add_option("--step", cfg.step, "1, 2, or 0 for both (default)");
    sub->add_flag("--toy", cfg.toy, "train the in-repo toy encoder");
    sub->add_flag("--resume", cfg.resume,
                  "resume from the last epoch checkpoint");
    sub->add_option("--base", cfg.base_checkpoint,
                    "starting toy checkpoint (required for --step 2 alone "
                    "without prior step-1 output)");
  }

  CLI11_PARSE(cli.app, argc, argv);

  // Merge: file values fill in whatever flags left at defaults. CLI11 tells
  // us which flags were actually passed, so flags always win.
  if (!cli.config_file.empty()) {
    try {
      RunConfig file_cfg = RunConfig::from_file(cli.config_file);
      CLI::App* sub = cli.app.get_subcommands().front();
      RunConfig merged = file_cfg;
      // Re-parse the command line on top of the file config.
      cfg.out_dir = sub->count("--out") ? cfg.out_dir : merged.out_dir;
      cfg.seed = sub->count("--seed") ? cfg.seed : merged.seed;
      cfg.run_id = sub->count("--run-id") ? cfg.run_id : merged.run_id;
      auto take = [&](const std::string& flag, auto& mine, auto& theirs) {
        if (sub->get_option_no_throw(flag) == nullptr) return;
        if (sub->count(flag) == 0) mine = theirs;
      };
      take("--materials", cfg.materials_csv, merged.materials_csv);
      take("--corpus", cfg.corpus_dir, merged.corpus_dir);
      take("--contexts", cfg.contexts_file, merged.contexts_file);
      take("--context-mode", cfg.context_mode, merged.context_mode);
      take("--center-mode", cfg.center_mode, merged.center_mode);
      take("--layer-spec", cfg.layer_spec, merged.layer_spec);
      take("--center-word", cfg.center_word, merged.center_word);
      take("--center-words", cfg.center_words, merged.center_words);
      take("--sample-limit", cfg.sample_limit, merged.sample_limit);
      take("--stub", cfg.use_stub, merged.use_stub);
      take("--model-path", cfg.model_path, merged.model_path);
      take("--provider-endpoint", cfg.provider.endpoint,
           merged.provider.endpoint);
      take("--provider-model", cfg.provider.model, merged.provider.model);
      take("--credential-env", cfg.provider.credential_env,
           merged.provider.credential_env);
      take("--ranking", cfg.ranking_file, merged.ranking_file);
      take("--token-lengths", cfg.token_lengths_file,
           merged.token_lengths_file);
      take("--length-filter", cfg.has_length_filter, merged.has_length_filter);
      take("--filter-lo", cfg.filter_lo, merged.filter_lo);
      take("--filter-hi", cfg.filter_hi, merged.filter_hi);
      take("--schedule", cfg.schedule_config, merged.schedule_config);
      take("--triplets", cfg.triplets_file, merged.triplets_file);
      take("--pairs", cfg.pairs_file, merged.pairs_file);
      take("--sts", cfg.sts_file, merged.sts_file);
      take("--step", cfg.step, merged.step);
      take("--toy", cfg.toy, merged.toy);
      take("--resume", cfg.resume, merged.resume);
      take("--base", cfg.base_checkpoint, merged.base_checkpoint);
      take("--glossary", cfg.glossary, merged.glossary);
      take("--fetch-descriptions", cfg.fetch_descriptions,
           merged.fetch_descriptions);
      take("--offline", cfg.offline, merged.offline);
      take("--cache-dir", cfg.cache_dir, merged.cache_dir);
      take("--store", cfg.store_file, merged.store_file);
    } catch (const matterrank::ConfigError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 2;
    }
  }

  return matterrank::cli::run_command(cli.command, cfg);
}
