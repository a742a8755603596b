#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "svlad/data.hpp"
#include "svlad/errors.hpp"
#include "svlad/random.hpp"

namespace svlad {

// Synthetic multimodal task with three cues, one per modality, each carrying
// an intentionally different granularity:
//
//   text  - a trigger word repeated >= 3 times consecutively. Every sample
//           (cue or not) carries 3-5 trigger occurrences in total, drawn from
//           the same distribution, so the token multiset is identically
//           distributed across classes: any order-invariant statistic carries
//           zero information and only windows of adjacent tokens reveal the
//           run.
//   video - a contiguous burst of 9-12 frames whose dims 0-1 sit two sigma
//           above the background. Non-cue samples scatter 3-6 shifted frames
//           in groups of at most two, so both frame order and frame counts
//           separate the classes.
//   audio - energy (dim 0) above the gate on more than half of the frames.
//
// Frame values are sampled with hard margins around the gates, so an
// independent detector over the raw sequences recovers each cue indicator
// exactly. The label fires iff at least two of the three cues fire.
struct SynthSpec {
  std::size_t n = 2000;
  std::uint64_t seed = 1;
  Task task = Task::Classification;

  std::size_t vocab_size = 50;
  std::size_t trigger_token = 7;
  std::size_t video_dim = 8;
  std::size_t audio_dim = 6;
  std::size_t text_len_min = 10, text_len_max = 40;
  std::size_t video_len_min = 24, video_len_max = 40;  // room for burst vs. scatter
  std::size_t audio_len_min = 10, audio_len_max = 40;

  double cue_rate = 0.5;          // independent per modality
  double video_gate = 0.8;        // per-frame (v0+v1)/2 indicator threshold
  double audio_gate = 1.5;        // per-frame energy threshold
  double regression_noise = 0.2;
};

struct CueFlags {
  bool text = false, video = false, audio = false;
  int count() const { return int(text) + int(video) + int(audio); }
};

struct SynthSample {
  MultimodalSample sample;
  CueFlags cues;
};

namespace detail {

inline void scatter_group_layout(Rng& rng, std::size_t total, std::size_t length,
                                 std::vector<std::size_t>& starts,
                                 std::vector<std::size_t>& sizes, std::size_t max_group) {
  // groups of at most max_group positions with at least one clear slot
  // between groups; always feasible when total + groups - 1 <= length
  sizes.clear();
  std::size_t remaining = total;
  while (remaining > 0) {
    const std::size_t grp = std::min<std::size_t>(remaining, 1 + rng.index(max_group));
    sizes.push_back(grp);
    remaining -= grp;
  }
  const std::size_t G = sizes.size();
  const std::size_t body = total + (G - 1);  // groups plus mandatory single gaps
  if (body > length) throw InternalError("scatter layout does not fit");
  std::vector<std::size_t> gaps(G + 1, 0);
  for (std::size_t i = 1; i < G; ++i) gaps[i] = 1;
  for (std::size_t slack = length - body; slack > 0; --slack) ++gaps[rng.index(G + 1)];
  starts.clear();
  std::size_t pos = 0;
  for (std::size_t i = 0; i < G; ++i) {
    pos += gaps[i];
    starts.push_back(pos);
    pos += sizes[i];
  }
}

}  // namespace detail

inline SynthSample synth_one(const SynthSpec& spec, std::size_t index) {
  Rng rng(mix_seed(spec.seed, index));
  SynthSample out;
  out.sample.id = "s" + std::to_string(index);
  out.cues.text = rng.uniform() < spec.cue_rate;
  out.cues.video = rng.uniform() < spec.cue_rate;
  out.cues.audio = rng.uniform() < spec.cue_rate;

  // ---- text: trigger count 3-5 in every sample, run vs. isolated -----------
  {
    const std::size_t L = rng.index(spec.text_len_min, spec.text_len_max);
    std::vector<std::size_t> tokens(L);
    for (std::size_t i = 0; i < L; ++i) {
      std::size_t t = rng.index(spec.vocab_size - 1);
      if (t >= spec.trigger_token) ++t;  // uniform over non-trigger words
      tokens[i] = t;
    }
    const std::size_t total = rng.index(3, 5);  // same draw for both classes
    std::vector<std::size_t> trigger_pos;
    if (out.cues.text) {
      const std::size_t run = rng.index(0, L - total);
      for (std::size_t r = 0; r < total; ++r) trigger_pos.push_back(run + r);
    } else {
      std::vector<std::size_t> starts, sizes;
      detail::scatter_group_layout(rng, total, L, starts, sizes, /*max_group=*/1);
      trigger_pos = starts;
    }
    for (std::size_t p : trigger_pos) tokens[p] = spec.trigger_token;
    out.sample.tokens = std::move(tokens);
  }

  // ---- video: burst vs. scattered shifted frames ---------------------------
  {
    const std::size_t L = rng.index(spec.video_len_min, spec.video_len_max);
    Tensor frames({L, spec.video_dim});
    std::vector<bool> shifted(L, false);
    if (out.cues.video) {
      const std::size_t total = rng.index(9, 12);
      const std::size_t start = rng.index(0, L - total);
      for (std::size_t i = 0; i < total; ++i) shifted[start + i] = true;
    } else {
      const std::size_t total = rng.index(3, 6);
      std::vector<std::size_t> starts, sizes;
      detail::scatter_group_layout(rng, total, L, starts, sizes, /*max_group=*/2);
      for (std::size_t gidx = 0; gidx < sizes.size(); ++gidx)
        for (std::size_t i = 0; i < sizes[gidx]; ++i) shifted[starts[gidx] + i] = true;
    }
    for (std::size_t i = 0; i < L; ++i) {
      double* row = frames.row(i);
      if (shifted[i]) {
        // +2 sigma shift on dims 0-1, kept strictly above the gate
        do {
          row[0] = 2.0 + rng.normal(0.0, 0.5);
          row[1] = 2.0 + rng.normal(0.0, 0.5);
        } while ((row[0] + row[1]) / 2.0 <= spec.video_gate + 0.05);
      } else {
        do {
          row[0] = rng.normal();
          row[1] = rng.normal();
        } while ((row[0] + row[1]) / 2.0 >= spec.video_gate - 0.05);
      }
      for (std::size_t j = 2; j < spec.video_dim; ++j) row[j] = rng.normal();
    }
    out.sample.video = std::move(frames);
  }

  // ---- audio: exact count of gate-exceeding frames --------------------------
  {
    const std::size_t L = rng.index(spec.audio_len_min, spec.audio_len_max);
    Tensor frames({L, spec.audio_dim});
    const double q = out.cues.audio ? rng.uniform(0.60, 0.80) : rng.uniform(0.05, 0.35);
    const std::size_t hot =
        out.cues.audio ? static_cast<std::size_t>(std::ceil(q * static_cast<double>(L)))
                       : static_cast<std::size_t>(std::floor(q * static_cast<double>(L)));
    std::vector<std::size_t> order(L);
    for (std::size_t i = 0; i < L; ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<bool> exceed(L, false);
    for (std::size_t i = 0; i < hot; ++i) exceed[order[i]] = true;
    for (std::size_t i = 0; i < L; ++i) {
      double* row = frames.row(i);
      if (exceed[i]) {
        row[0] = spec.audio_gate + 0.1 + std::abs(rng.normal(0.0, 0.7));
      } else {
        do {
          row[0] = rng.normal();
        } while (row[0] >= spec.audio_gate - 0.1);
      }
      for (std::size_t j = 1; j < spec.audio_dim; ++j) row[j] = rng.normal();
    }
    out.sample.audio = std::move(frames);
  }

  const int fired = out.cues.count();
  if (spec.task == Task::Classification) {
    out.sample.label = Label::classification(fired >= 2 ? 1 : 0);
  } else {
    const double raw = 2.0 * (static_cast<double>(fired) - 1.5) +
                       rng.normal(0.0, spec.regression_noise);
    out.sample.label = Label::regression(std::clamp(raw, -3.0, 3.0));
  }
  return out;
}

inline std::vector<SynthSample> synth_generate(const SynthSpec& spec) {
  std::vector<SynthSample> out;
  out.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) out.push_back(synth_one(spec, i));
  return out;
}

inline std::vector<std::string> synth_vocab(const SynthSpec& spec) {
  std::vector<std::string> vocab;
  char buf[16];
  for (std::size_t i = 0; i < spec.vocab_size; ++i) {
    std::snprintf(buf, sizeof buf, "t%02zu", i);
    vocab.emplace_back(buf);
  }
  return vocab;
}

inline DatasetInfo synth_dataset_info(const SynthSpec& spec) {
  DatasetInfo info;
  info.task = spec.task;
  info.video_dim = spec.video_dim;
  info.audio_dim = spec.audio_dim;
  info.token_text = true;
  info.vocab = synth_vocab(spec);
  for (std::size_t i = 0; i < info.vocab.size(); ++i) info.vocab_index[info.vocab[i]] = i;
  info.num_classes = 2;
  return info;
}

// Writes manifest + 70/10/20 JSONL splits. Refuses a non-empty directory
// unless force is set.
inline void write_dataset(const std::filesystem::path& dir, const SynthSpec& spec,
                          const std::vector<SynthSample>& samples, bool force) {
  namespace fs = std::filesystem;
  if (fs::exists(dir) && !fs::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
  if (fs::exists(dir) && !fs::is_empty(dir) && !force)
    throw IoError(dir.string() + " is not empty; pass --force to overwrite");
  fs::create_directories(dir);

  const std::vector<std::string> vocab = synth_vocab(spec);
  nlohmann::json manifest;
  manifest["task"] = task_name(spec.task);
  manifest["video_dim"] = spec.video_dim;
  manifest["audio_dim"] = spec.audio_dim;
  manifest["text"] = {{"mode", "tokens"}, {"vocab", vocab}};
  if (spec.task == Task::Regression) manifest["label_range"] = {-3.0, 3.0};
  if (spec.task == Task::Classification) manifest["num_classes"] = 2;
  manifest["splits"] = {{"train", "train.jsonl"}, {"valid", "valid.jsonl"}, {"test", "test.jsonl"}};
  {
    std::ofstream mf(dir / "manifest.json");
    if (!mf) throw IoError("cannot write manifest");
    mf << manifest.dump(2) << "\n";
  }

  auto dump_rows = [](const Tensor& t) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < t.rows(); ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t j = 0; j < t.cols(); ++j) row.push_back(t.at(i, j));
      rows.push_back(std::move(row));
    }
    return rows;
  };
  auto write_split = [&](const fs::path& file, std::size_t begin, std::size_t end) {
    std::ofstream out(file);
    if (!out) throw IoError("cannot write " + file.string());
    for (std::size_t i = begin; i < end; ++i) {
      const MultimodalSample& s = samples[i].sample;
      nlohmann::json j;
      j["id"] = s.id;
      std::string text;
      for (std::size_t t = 0; t < s.tokens.size(); ++t) {
        if (t) text += ' ';
        text += vocab[s.tokens[t]];
      }
      j["text"] = text;
      j["video"] = dump_rows(s.video);
      j["audio"] = dump_rows(s.audio);
      if (spec.task == Task::Classification) j["label"] = s.label.cls;
      else j["label"] = s.label.score;
      out << j.dump() << "\n";
    }
  };
  const std::size_t n = samples.size();
  const std::size_t n_train = (n * 7) / 10;
  const std::size_t n_valid = n / 10;
  write_split(dir / "train.jsonl", 0, n_train);
  write_split(dir / "valid.jsonl", n_train, n_train + n_valid);
  write_split(dir / "test.jsonl", n_train + n_valid, n);
}

}  // namespace svlad
