#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>

#include "matterrank/train.hpp"
#include "test_util.hpp"

using namespace matterrank;
using finetune::AdamW;
using finetune::AdamWConfig;
using finetune::MnrConfig;
using finetune::ToyEncoder;
using finetune::ToyEncoderConfig;
using finetune::TrainStep;
using ingest::TrainingPair;
using ingest::TrainingTriplet;

namespace {

ToyEncoderConfig small_config() {
  ToyEncoderConfig cfg;
  cfg.vocab_size = 128;
  cfg.dim = 16;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.ffn_dim = 24;
  cfg.max_len = 16;
  cfg.init_seed = 11;
  return cfg;
}

std::vector<TrainingTriplet> toy_triplets(std::size_t n) {
  std::vector<TrainingTriplet> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string id = std::to_string(i);
    out.push_back({"anchor sentence " + id, "matching paraphrase " + id,
                   "unrelated negative " + std::to_string((i + 7) % n)});
  }
  return out;
}

std::vector<TrainingPair> toy_pairs(std::size_t n) {
  std::vector<TrainingPair> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string id = std::to_string(i);
    out.push_back({"formula" + id, "description of compound " + id});
  }
  return out;
}

}  // namespace

TEST_CASE("20 steps on a fixed batch strictly decrease the loss") {
  ToyEncoder enc(small_config());
  AdamW opt(AdamWConfig{.learning_rate = 3e-4, .weight_decay = 0.0});
  const auto batch = toy_triplets(8);
  MnrConfig mnr;
  mnr.temperature = 0.2;
  std::vector<double> losses;
  for (int i = 0; i < 21; ++i)
    losses.push_back(finetune::train_step(
        enc, opt, std::span<const TrainingTriplet>(batch), mnr, 16));
  for (std::size_t i = 1; i < losses.size(); ++i) {
    INFO("step " << i << ": " << losses[i - 1] << " -> " << losses[i]);
    CHECK(losses[i] < losses[i - 1]);
  }
}

TEST_CASE("zero learning rate leaves weights bit-identical") {
  ToyEncoder enc(small_config());
  const std::vector<double> before = enc.params();
  AdamW opt(AdamWConfig{.learning_rate = 0.0});
  const auto batch = toy_pairs(6);
  finetune::train_step(enc, opt, std::span<const TrainingPair>(batch), {}, 16);
  REQUIRE(enc.params().size() == before.size());
  CHECK(std::memcmp(enc.params().data(), before.data(),
                    before.size() * sizeof(double)) == 0);
}

TEST_CASE("fixed seed reproduces the loss curve exactly") {
  const auto triplets = toy_triplets(24);
  auto run = [&] {
    ToyEncoder enc(small_config());
    AdamW opt(AdamWConfig{.learning_rate = 1e-3});
    MnrConfig mnr;
    std::vector<double> losses;
    rng::SplitMix order(99);
    for (int step = 0; step < 10; ++step) {
      std::vector<TrainingTriplet> batch;
      for (int k = 0; k < 6; ++k)
        batch.push_back(triplets[order.next_below(triplets.size())]);
      losses.push_back(finetune::train_step(
          enc, opt, std::span<const TrainingTriplet>(batch), mnr, 16));
    }
    return losses;
  };
  CHECK(run() == run());
}

TEST_CASE("validate_sts self-consistency and oracle agreement") {
  ToyEncoder enc(small_config());
  std::vector<finetune::StsPair> pairs;
  rng::SplitMix gen(3);
  for (int i = 0; i < 20; ++i)
    pairs.push_back({"left sentence " + std::to_string(i),
                     "right text " + std::to_string(gen.next_below(1000)),
                     0.0});
  auto embed = [&enc](const std::string& s) { return enc.encode(s); };

  // Gold equal to the encoder's own similarity -> rho = 1.
  for (auto& p : pairs)
    p.score = embedcore::cosine_similarity(embed(p.sentence_a),
                                           embed(p.sentence_b));
  CHECK(finetune::validate_sts(embed, pairs).rho == Catch::Approx(1.0));

  // Reversed gold -> rho = -1.
  for (auto& p : pairs) p.score = -p.score;
  CHECK(finetune::validate_sts(embed, pairs).rho == Catch::Approx(-1.0));

  // Random gold matches the embedcore Spearman oracle.
  std::vector<double> cosines, gold;
  for (auto& p : pairs) {
    p.score = gen.next_double();
    gold.push_back(p.score);
    cosines.push_back(embedcore::cosine_similarity(embed(p.sentence_a),
                                                   embed(p.sentence_b)));
  }
  CHECK(finetune::validate_sts(embed, pairs).rho ==
        Catch::Approx(embedcore::spearman(cosines, gold).rho).margin(1e-12));
}

TEST_CASE("two-step schedule completes and writes checkpoints") {
  mrtest::TempDir tmp("sched");
  ToyEncoder enc(small_config());
  auto schedule = TrainStep::default_schedule();
  schedule[0].batch_size = 16;
  schedule[0].max_seq_length = 12;
  schedule[0].learning_rate = 1e-3;
  schedule[1].batch_size = 8;
  schedule[1].max_seq_length = 12;
  schedule[1].learning_rate = 1e-3;

  finetune::ScheduleOptions opts;
  opts.out_dir = tmp.path();
  opts.seed = 42;
  for (int i = 0; i < 12; ++i)
    opts.validation.push_back({"val a " + std::to_string(i),
                               "val b " + std::to_string(i),
                               static_cast<double>(i % 5)});

  const auto triplets = toy_triplets(100);
  const auto pairs = toy_pairs(50);
  const auto result =
      finetune::run_two_step_schedule(enc, triplets, pairs, schedule, opts);

  CHECK(result.epoch_checkpoints.size() == 10);
  for (const auto& dir : result.epoch_checkpoints) {
    CHECK(std::filesystem::exists(dir / "weights.bin"));
    CHECK(std::filesystem::exists(dir / "checkpoint.json"));
    const auto meta =
        nlohmann::json::parse(io::read_file(dir / "checkpoint.json"));
    CHECK(meta.contains("dataset_sha256"));
    CHECK(meta["seed"] == 42);
    CHECK(meta["pooling"] == "mean");
  }
  CHECK(std::filesystem::exists(tmp / "selected.json"));
  CHECK(std::filesystem::exists(tmp / "metrics.jsonl"));
  const auto lines = io::read_lines(tmp / "metrics.jsonl");
  REQUIRE_FALSE(lines.empty());
  const auto first = nlohmann::json::parse(lines[0]);
  CHECK(first.contains("step"));
  CHECK(first.contains("epoch"));
  CHECK(first.contains("loss"));
  CHECK(first.contains("lr"));
  CHECK(result.final_checkpoint.filename().string() == "step2_epoch005");
}

TEST_CASE("step-1 selection picks the argmax validation epoch") {
  mrtest::TempDir tmp("select");
  ToyEncoder enc(small_config());
  auto schedule = TrainStep::default_schedule();
  schedule[0].batch_size = 8;
  schedule[0].epochs = 5;
  schedule[0].learning_rate = 1e-3;
  schedule[1].batch_size = 8;
  schedule[1].epochs = 2;
  schedule[1].learning_rate = 1e-3;

  finetune::ScheduleOptions opts;
  opts.out_dir = tmp.path();
  // Scripted scorer: epoch 3 wins.
  const std::vector<double> script = {0.0, 0.1, 0.4, 0.9, 0.2, 0.3};
  opts.scorer = [&script](const ToyEncoder&, std::size_t epoch) {
    return script[epoch];
  };
  const auto result = finetune::run_two_step_schedule(
      enc, toy_triplets(20), toy_pairs(10), schedule, opts);
  CHECK(result.selected_epoch_step1 == 3);
  CHECK(result.selected_step1.filename().string() == "step1_epoch003");
  const auto selected =
      nlohmann::json::parse(io::read_file(tmp / "selected.json"));
  CHECK(selected["step1_epoch"] == 3);
  CHECK(selected["step1_selected"] == "step1_epoch003");
}

TEST_CASE("schedule validates inputs") {
  mrtest::TempDir tmp("badsched");
  ToyEncoder enc(small_config());
  auto schedule = TrainStep::default_schedule();
  finetune::ScheduleOptions opts;
  opts.out_dir = tmp.path();
  opts.scorer = [](const ToyEncoder&, std::size_t) { return 0.0; };
  CHECK_THROWS_AS(finetune::run_two_step_schedule(enc, {}, toy_pairs(3),
                                                  schedule, opts),
                  ConfigError);
  CHECK_THROWS_AS(finetune::run_two_step_schedule(enc, toy_triplets(3), {},
                                                  schedule, opts),
                  ConfigError);
  finetune::ScheduleOptions no_val;
  no_val.out_dir = tmp.path();
  CHECK_THROWS_AS(finetune::run_two_step_schedule(enc, toy_triplets(3),
                                                  toy_pairs(3), schedule,
                                                  no_val),
                  ConfigError);
  auto wrong = schedule;
  std::swap(wrong[0], wrong[1]);
  CHECK_THROWS_AS(finetune::run_two_step_schedule(enc, toy_triplets(3),
                                                  toy_pairs(3), wrong, opts),
                  ConfigError);
}

TEST_CASE("resume reproduces an uninterrupted run bit for bit") {
  auto schedule = TrainStep::default_schedule();
  schedule[0].batch_size = 8;
  schedule[0].epochs = 3;
  schedule[0].learning_rate = 1e-3;
  schedule[1].batch_size = 8;
  schedule[1].epochs = 2;
  schedule[1].learning_rate = 1e-3;
  const auto triplets = toy_triplets(24);
  const auto pairs = toy_pairs(12);
  auto scorer = [](const ToyEncoder&, std::size_t epoch) {
    return static_cast<double>(epoch);  // last epoch wins
  };

  // Uninterrupted reference run.
  mrtest::TempDir full("resume_full");
  finetune::ScheduleOptions opts_full;
  opts_full.out_dir = full.path();
  opts_full.scorer = scorer;
  ToyEncoder enc_full(small_config());
  finetune::run_two_step_schedule(enc_full, triplets, pairs, schedule,
                                  opts_full);

  // Interrupted run: only step-1 epoch 1 got written, then the process died.
  mrtest::TempDir part("resume_part");
  finetune::ScheduleOptions opts_part;
  opts_part.out_dir = part.path();
  opts_part.scorer = scorer;
  std::filesystem::create_directories(part.path());
  std::filesystem::copy(full / "step1_epoch001", part / "step1_epoch001",
                        std::filesystem::copy_options::recursive);
  opts_part.resume = true;
  ToyEncoder enc_part(small_config());
  finetune::run_two_step_schedule(enc_part, triplets, pairs, schedule,
                                  opts_part);

  const auto final_full =
      ToyEncoder::load(full / "step2_epoch002" / "weights.bin");
  const auto final_part =
      ToyEncoder::load(part / "step2_epoch002" / "weights.bin");
  CHECK(final_full.fingerprint() == final_part.fingerprint());
}
