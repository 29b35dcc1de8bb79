#pragma once

// Contrastive fine-tuning driver: single optimizer steps over pair/triplet
// batches and the two-step schedule (general triplets, then material
// description pairs). Step 1 selects its checkpoint by validation score on a
// semantic-similarity dev set; step 2 takes the final epoch.
//
// Determinism contract: single worker, all shuffling derived from the run
// seed, so a fixed seed reproduces the loss curve exactly.

#include <array>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>

#include <nlohmann/json.hpp>

#include "matterrank/adamw.hpp"
#include "matterrank/embedcore.hpp"
#include "matterrank/ingest.hpp"
#include "matterrank/mnr_loss.hpp"
#include "matterrank/toy_encoder.hpp"

namespace matterrank::finetune {

struct TrainStep {
  enum class Kind { kTriplet, kPair };

  Kind kind = Kind::kTriplet;
  std::size_t batch_size = 256;
  std::size_t max_seq_length = 75;
  std::size_t epochs = 5;
  std::string optimizer = "adamw";
  double learning_rate = 2e-5;
  double temperature = 0.05;

  void validate() const {
    if (batch_size == 0 || max_seq_length == 0 || epochs == 0)
      throw ConfigError("train step: sizes must be positive");
    if (optimizer != "adamw")
      throw ConfigError("train step: unsupported optimizer " + optimizer);
    if (learning_rate < 0 || temperature <= 0)
      throw ConfigError("train step: bad learning rate or temperature");
  }

  static const char* kind_name(Kind k) {
    return k == Kind::kTriplet ? "triplet" : "pair";
  }

  nlohmann::json to_json() const {
    return {{"kind", kind_name(kind)},
            {"batch_size", batch_size},
            {"max_seq_length", max_seq_length},
            {"epochs", epochs},
            {"optimizer", optimizer},
            {"learning_rate", learning_rate},
            {"temperature", temperature}};
  }

  static TrainStep from_json(const nlohmann::json& j) {
    TrainStep s;
    const std::string kind = j.value("kind", "triplet");
    if (kind == "triplet")
      s.kind = Kind::kTriplet;
    else if (kind == "pair")
      s.kind = Kind::kPair;
    else
      throw ConfigError("train step: unknown kind " + kind);
    s.batch_size = j.value("batch_size", s.batch_size);
    s.max_seq_length = j.value("max_seq_length", s.max_seq_length);
    s.epochs = j.value("epochs", s.epochs);
    s.optimizer = j.value("optimizer", s.optimizer);
    s.learning_rate = j.value("learning_rate", s.learning_rate);
    s.temperature = j.value("temperature", s.temperature);
    s.validate();
    return s;
  }

  // Published schedule: triplets at batch 256 / len 75, then pairs at
  // batch 32 / len 128, five epochs each, AdamW.
  static std::array<TrainStep, 2> default_schedule() {
    TrainStep one;
    TrainStep two;
    two.kind = Kind::kPair;
    two.batch_size = 32;
    two.max_seq_length = 128;
    return {one, two};
  }
};

// One optimizer update over a triplet batch; returns the batch loss.
inline double train_step(ToyEncoder& encoder, AdamW& opt,
                         std::span<const ingest::TrainingTriplet> batch,
                         const MnrConfig& cfg, std::size_t max_seq_length) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  std::vector<std::vector<std::uint64_t>> a, p, n;
  for (const auto& t : batch) {
    a.push_back(encoder.encode_ids(t.anchor, max_seq_length));
    p.push_back(encoder.encode_ids(t.positive, max_seq_length));
    n.push_back(encoder.encode_ids(t.negative, max_seq_length));
  }
  ToyEncoder::Cache ca, cp, cn;
  const auto ea = encoder.forward_batch(a, &ca);
  const auto ep = encoder.forward_batch(p, &cp);
  const auto en = encoder.forward_batch(n, &cn);
  const auto res = mnr_loss_triplets(ea, ep, en, cfg);
  if (!std::isfinite(res.loss))
    throw ModelError("train_step: non-finite loss, aborting run");
  encoder.zero_grads();
  encoder.backward_batch(ca, res.grad_anchors);
  encoder.backward_batch(cp, res.grad_positives);
  encoder.backward_batch(cn, res.grad_negatives);
  opt.step(encoder.params(), encoder.grads());
  return res.loss;
}

// One optimizer update over a pair batch; returns the batch loss.
inline double train_step(ToyEncoder& encoder, AdamW& opt,
                         std::span<const ingest::TrainingPair> batch,
                         const MnrConfig& cfg, std::size_t max_seq_length) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  std::vector<std::vector<std::uint64_t>> a, p;
  for (const auto& t : batch) {
    a.push_back(encoder.encode_ids(t.anchor, max_seq_length));
    p.push_back(encoder.encode_ids(t.positive, max_seq_length));
  }
  ToyEncoder::Cache ca, cp;
  const auto ea = encoder.forward_batch(a, &ca);
  const auto ep = encoder.forward_batch(p, &cp);
  const auto res = mnr_loss_pairs(ea, ep, cfg);
  if (!std::isfinite(res.loss))
    throw ModelError("train_step: non-finite loss, aborting run");
  encoder.zero_grads();
  encoder.backward_batch(ca, res.grad_anchors);
  encoder.backward_batch(cp, res.grad_positives);
  opt.step(encoder.params(), encoder.grads());
  return res.loss;
}

// ------------------------------------------------------------- validation

struct StsPair {
  std::string sentence_a;
  std::string sentence_b;
  double score = 0.0;
};

inline std::vector<StsPair> load_sts_jsonl(const std::filesystem::path& path) {
  std::vector<StsPair> out;
  for (const auto& line : io::read_lines(path)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    out.push_back({j.at("sentence1").get<std::string>(),
                   j.at("sentence2").get<std::string>(),
                   j.at("score").get<double>()});
  }
  return out;
}

using Embedder = std::function<embedcore::Vector(const std::string&)>;

// Spearman between the embedder's cosine similarities and the gold scores.
inline embedcore::CorrelationReport validate_sts(
    const Embedder& embed, std::span<const StsPair> pairs) {
  if (pairs.empty()) throw std::invalid_argument("validate_sts: empty set");
  std::vector<double> predicted, gold;
  predicted.reserve(pairs.size());
  gold.reserve(pairs.size());
  for (const auto& p : pairs) {
    predicted.push_back(
        embedcore::cosine_similarity(embed(p.sentence_a), embed(p.sentence_b)));
    gold.push_back(p.score);
  }
  return embedcore::spearman(predicted, gold, "sts");
}

// --------------------------------------------------------------- schedule

struct CheckpointMeta {
  int phase = 1;  // 1 = triplets, 2 = pairs
  std::size_t epoch = 0;
  std::string kind;
  std::string dataset_sha256;
  std::uint64_t seed = 0;
  std::string pooling = "mean";
  double final_loss = 0.0;
  std::optional<double> validation_score;
  std::string created_utc;

  nlohmann::json to_json() const {
    nlohmann::json j{{"phase", phase},
                     {"epoch", epoch},
                     {"kind", kind},
                     {"dataset_sha256", dataset_sha256},
                     {"seed", seed},
                     {"pooling", pooling},
                     {"final_loss", final_loss},
                     {"created_utc", created_utc}};
    if (validation_score) j["validation_score"] = *validation_score;
    return j;
  }
};

using MetricsSink = std::function<void(const nlohmann::json&)>;
using ValidationScorer =
    std::function<double(const ToyEncoder&, std::size_t epoch)>;

struct ScheduleOptions {
  std::filesystem::path out_dir;
  std::uint64_t seed = 42;
  std::vector<StsPair> validation;   // step-1 selection set
  ValidationScorer scorer;           // overrides validate_sts when set
  MetricsSink metrics;               // extra sink; metrics.jsonl always written
  bool resume = false;
  int step_filter = 0;               // 0 = both, 1 or 2 for a single step
  std::filesystem::path base_weights;  // starting point for step 2 alone
};

struct ScheduleResult {
  std::vector<std::filesystem::path> epoch_checkpoints;
  std::filesystem::path selected_step1;
  std::size_t selected_epoch_step1 = 0;
  std::filesystem::path final_checkpoint;
};

namespace detail {

inline std::filesystem::path epoch_dir(const std::filesystem::path& out,
                                       int phase, std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "step%d_epoch%03zu", phase, epoch);
  return out / buf;
}

inline void save_checkpoint(const std::filesystem::path& dir,
                            const ToyEncoder& enc, const AdamW& opt,
                            const CheckpointMeta& meta) {
  std::filesystem::create_directories(dir);
  enc.save(dir / "weights.bin");
  // Optimizer moments for exact resume.
  std::string blob = "MROPT001";
  auto put_u64 = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) blob.push_back(static_cast<char>(v >> (8 * i)));
  };
  put_u64(opt.step_count());
  put_u64(opt.m().size());
  blob.append(reinterpret_cast<const char*>(opt.m().data()),
              opt.m().size() * sizeof(double));
  blob.append(reinterpret_cast<const char*>(opt.v().data()),
              opt.v().size() * sizeof(double));
  io::write_file(dir / "optimizer.bin", blob);
  io::write_file(dir / "checkpoint.json", meta.to_json().dump(2) + "\n");
}

inline void load_optimizer(const std::filesystem::path& dir, AdamW& opt) {
  const std::string blob = io::read_file(dir / "optimizer.bin");
  if (blob.size() < 24 || blob.compare(0, 8, "MROPT001") != 0)
    throw ModelError("bad optimizer state: " + (dir / "optimizer.bin").string());
  std::size_t off = 8;
  auto get_u64 = [&] {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(blob[off + i]))
           << (8 * i);
    off += 8;
    return v;
  };
  const std::uint64_t steps = get_u64();
  const std::uint64_t count = get_u64();
  if (blob.size() - off != 2 * count * sizeof(double))
    throw ModelError("optimizer state truncated");
  std::vector<double> m(count), v(count);
  std::memcpy(m.data(), blob.data() + off, count * sizeof(double));
  std::memcpy(v.data(), blob.data() + off + count * sizeof(double),
              count * sizeof(double));
  opt.restore(std::move(m), std::move(v), steps);
}

template <typename Item>
double run_epoch(ToyEncoder& enc, AdamW& opt, std::span<const Item> data,
                 const TrainStep& step, int phase, std::size_t epoch,
                 std::uint64_t seed, std::string& metrics_out,
                 const MetricsSink& sink) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng::shuffle_indices(
      order, rng::mix(seed, rng::mix(static_cast<std::uint64_t>(phase), epoch)));
  MnrConfig mnr;
  mnr.temperature = step.temperature;
  double last_loss = 0.0;
  std::size_t step_index = 0;
  for (std::size_t begin = 0; begin < order.size();
       begin += step.batch_size) {
    const std::size_t end = std::min(begin + step.batch_size, order.size());
    std::vector<Item> batch;
    batch.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) batch.push_back(data[order[i]]);
    last_loss = train_step(enc, opt, std::span<const Item>(batch), mnr,
                           step.max_seq_length);
    const nlohmann::json line{{"step", opt.step_count()},
                              {"epoch", epoch},
                              {"loss", last_loss},
                              {"lr", opt.current_lr()},
                              {"phase", phase}};
    metrics_out += line.dump();
    metrics_out += '\n';
    if (sink) sink(line);
    ++step_index;
  }
  return last_loss;
}

}  // namespace detail

// Two-step schedule: per-epoch checkpoints under out_dir, step-1 selection by
// best validation score (scripted scorer injectable for tests), step 2 starts
// from the selected weights with a fresh optimizer and keeps its last epoch.
inline ScheduleResult run_two_step_schedule(
    ToyEncoder& encoder, std::span<const ingest::TrainingTriplet> triplets,
    std::span<const ingest::TrainingPair> pairs,
    const std::array<TrainStep, 2>& schedule, const ScheduleOptions& options) {
  if (schedule[0].kind != TrainStep::Kind::kTriplet ||
      schedule[1].kind != TrainStep::Kind::kPair)
    throw ConfigError("schedule must be step 1 = triplet, step 2 = pair");
  schedule[0].validate();
  schedule[1].validate();
  const bool run_step1 = options.step_filter == 0 || options.step_filter == 1;
  const bool run_step2 = options.step_filter == 0 || options.step_filter == 2;
  if (run_step1 && triplets.empty())
    throw ConfigError("triplet dataset is empty");
  if (run_step2 && pairs.empty()) throw ConfigError("pair dataset is empty");
  if (run_step1 && !options.scorer && options.validation.empty())
    throw ConfigError(
        "step-1 selection needs a validation set (or an injected scorer)");
  if (options.out_dir.empty()) throw ConfigError("schedule needs an out_dir");
  std::filesystem::create_directories(options.out_dir);

  const std::string triplet_hash = [&] {
    std::string blob;
    for (const auto& t : triplets)
      blob += t.anchor + "\x1f" + t.positive + "\x1f" + t.negative + "\n";
    return io::sha256_hex(blob);
  }();
  const std::string pair_hash = [&] {
    std::string blob;
    for (const auto& p : pairs) blob += p.anchor + "\x1f" + p.positive + "\n";
    return io::sha256_hex(blob);
  }();

  ValidationScorer scorer = options.scorer;
  if (!scorer) {
    scorer = [&options](const ToyEncoder& enc, std::size_t) {
      return validate_sts([&enc](const std::string& s) { return enc.encode(s); },
                          options.validation)
          .rho;
    };
  }

  ScheduleResult result;
  std::string metrics;

  // Resume support: skip epochs whose checkpoints are already on disk.
  auto last_complete = [&](int phase, std::size_t epochs) {
    std::size_t done = 0;
    for (std::size_t e = 1; e <= epochs; ++e) {
      const auto dir = detail::epoch_dir(options.out_dir, phase, e);
      if (std::filesystem::exists(dir / "weights.bin") &&
          std::filesystem::exists(dir / "optimizer.bin"))
        done = e;
      else
        break;
    }
    return done;
  };

  // ---- step 1: triplets
  if (run_step1) {
    const TrainStep& step = schedule[0];
    AdamW opt(AdamWConfig{.learning_rate = step.learning_rate});
    std::size_t start_epoch = 1;
    if (options.resume) {
      const std::size_t done = last_complete(1, step.epochs);
      if (done > 0) {
        const auto dir = detail::epoch_dir(options.out_dir, 1, done);
        encoder = ToyEncoder::load(dir / "weights.bin");
        detail::load_optimizer(dir, opt);
        start_epoch = done + 1;
      }
    }
    double best_score = -std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    std::vector<double> scores(step.epochs + 1, 0.0);
    for (std::size_t epoch = start_epoch; epoch <= step.epochs; ++epoch) {
      const double loss =
          detail::run_epoch(encoder, opt, triplets, step, 1, epoch,
                            options.seed, metrics, options.metrics);
      CheckpointMeta meta;
      meta.phase = 1;
      meta.epoch = epoch;
      meta.kind = "triplet";
      meta.dataset_sha256 = triplet_hash;
      meta.seed = options.seed;
      meta.final_loss = loss;
      meta.validation_score = scorer(encoder, epoch);
      meta.created_utc = io::utc_now_iso8601();
      const auto dir = detail::epoch_dir(options.out_dir, 1, epoch);
      detail::save_checkpoint(dir, encoder, opt, meta);
      result.epoch_checkpoints.push_back(dir);
      scores[epoch] = *meta.validation_score;
    }
    // Re-read scores for epochs trained before a resume.
    for (std::size_t epoch = 1; epoch < start_epoch; ++epoch) {
      const auto dir = detail::epoch_dir(options.out_dir, 1, epoch);
      const auto j =
          nlohmann::json::parse(io::read_file(dir / "checkpoint.json"));
      scores[epoch] = j.value("validation_score", 0.0);
      result.epoch_checkpoints.insert(
          result.epoch_checkpoints.begin() + static_cast<long>(epoch - 1), dir);
    }
    for (std::size_t epoch = 1; epoch <= step.epochs; ++epoch) {
      if (scores[epoch] > best_score) {
        best_score = scores[epoch];
        best_epoch = epoch;
      }
    }
    result.selected_epoch_step1 = best_epoch;
    result.selected_step1 = detail::epoch_dir(options.out_dir, 1, best_epoch);
    encoder = ToyEncoder::load(result.selected_step1 / "weights.bin");
  } else if (run_step2) {
    // Step 2 alone needs a starting point: an explicit base checkpoint or a
    // prior step-1 selection in this output directory.
    if (!options.base_weights.empty()) {
      encoder = ToyEncoder::load(options.base_weights);
    } else {
      const auto selected_path = options.out_dir / "selected.json";
      if (!std::filesystem::exists(selected_path))
        throw ConfigError(
            "step 2 requested without a step-1 checkpoint in " +
            options.out_dir.string() + " and without a base checkpoint");
      const auto sel = nlohmann::json::parse(io::read_file(selected_path));
      result.selected_step1 =
          options.out_dir / sel.at("step1_selected").get<std::string>();
      result.selected_epoch_step1 = sel.at("step1_epoch").get<std::size_t>();
      encoder = ToyEncoder::load(result.selected_step1 / "weights.bin");
    }
  }

  // ---- step 2: description pairs, fresh optimizer, final epoch kept
  if (run_step2) {
    const TrainStep& step = schedule[1];
    AdamW opt(AdamWConfig{.learning_rate = step.learning_rate});
    std::size_t start_epoch = 1;
    if (options.resume) {
      const std::size_t done = last_complete(2, step.epochs);
      if (done > 0) {
        const auto dir = detail::epoch_dir(options.out_dir, 2, done);
        encoder = ToyEncoder::load(dir / "weights.bin");
        detail::load_optimizer(dir, opt);
        start_epoch = done + 1;
      }
    }
    for (std::size_t epoch = start_epoch; epoch <= step.epochs; ++epoch) {
      const double loss = detail::run_epoch(encoder, opt, pairs, step, 2, epoch,
                                            options.seed, metrics,
                                            options.metrics);
      CheckpointMeta meta;
      meta.phase = 2;
      meta.epoch = epoch;
      meta.kind = "pair";
      meta.dataset_sha256 = pair_hash;
      meta.seed = options.seed;
      meta.final_loss = loss;
      meta.created_utc = io::utc_now_iso8601();
      const auto dir = detail::epoch_dir(options.out_dir, 2, epoch);
      detail::save_checkpoint(dir, encoder, opt, meta);
      result.epoch_checkpoints.push_back(dir);
    }
    result.final_checkpoint =
        detail::epoch_dir(options.out_dir, 2, step.epochs);
  } else {
    result.final_checkpoint = result.selected_step1;
  }

  // Metrics log and the selected-checkpoint marker.
  {
    std::ofstream out(options.out_dir / "metrics.jsonl", std::ios::app);
    out << metrics;
  }
  nlohmann::json selected{
      {"final", result.final_checkpoint.filename().string()}};
  if (!result.selected_step1.empty()) {
    selected["step1_selected"] = result.selected_step1.filename().string();
    selected["step1_epoch"] = result.selected_epoch_step1;
  }
  io::write_file(options.out_dir / "selected.json", selected.dump(2) + "\n");
  return result;
}

}  // namespace matterrank::finetune
