#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "svlad/errors.hpp"
#include "svlad/model.hpp"
#include "svlad/random.hpp"
#include "svlad/tensor.hpp"

namespace svlad {

// One (text, video, audio, label) record with raw feature sequences. The
// model consumes these directly; masks stay empty (all rows valid) for
// loaded data and only appear on padded inputs.
using MultimodalSample = PreparedSample;

struct DatasetInfo {
  Task task = Task::Classification;
  std::size_t video_dim = 0;
  std::size_t audio_dim = 0;
  bool token_text = true;
  std::size_t text_dim = 0;  // feature-mode width
  std::vector<std::string> vocab;
  std::map<std::string, std::size_t> vocab_index;
  double label_min = -3.0, label_max = 3.0;
  std::size_t num_classes = 2;
};

struct Dataset {
  DatasetInfo info;
  std::vector<MultimodalSample> train, valid, test;
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj, const std::set<std::string>& known,
                                const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!known.count(it.key())) throw DataError(where + ": unknown key '" + it.key() + "'");
}

inline Tensor rows_from_json(const nlohmann::json& arr, std::size_t width,
                             const std::string& where) {
  if (!arr.is_array() || arr.empty()) throw DataError(where + ": expected a nonempty row array");
  Tensor t({arr.size(), width});
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto& row = arr[i];
    if (!row.is_array() || row.size() != width)
      throw DataError(where + ": row " + std::to_string(i) + " must have width " +
                      std::to_string(width));
    for (std::size_t j = 0; j < width; ++j) {
      if (!row[j].is_number()) throw DataError(where + ": non-numeric feature value");
      t.at(i, j) = row[j].get<double>();
    }
  }
  return t;
}

}  // namespace detail

inline MultimodalSample parse_sample_line(const std::string& line, const DatasetInfo& info,
                                          const std::string& where) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + ": invalid JSON (" + e.what() + ")");
  }
  detail::reject_unknown_keys(j, {"id", "text", "video", "audio", "label"}, where);
  for (const char* key : {"id", "text", "video", "audio", "label"})
    if (!j.contains(key)) throw DataError(where + ": missing field '" + std::string(key) + "'");

  MultimodalSample s;
  s.id = j.at("id").get<std::string>();

  const auto& text = j.at("text");
  if (info.token_text) {
    if (text.is_string()) {
      // whitespace tokenization against the manifest vocabulary
      std::istringstream words(text.get<std::string>());
      std::string w;
      while (words >> w) {
        auto it = info.vocab_index.find(w);
        if (it == info.vocab_index.end())
          throw DataError(where + ": sample " + s.id + ": word '" + w + "' not in vocabulary");
        s.tokens.push_back(it->second);
      }
    } else if (text.is_array()) {
      for (const auto& v : text) {
        if (!v.is_number_unsigned())
          throw DataError(where + ": token ids must be non-negative integers");
        const std::size_t id = v.get<std::size_t>();
        if (id >= info.vocab.size())
          throw DataError(where + ": sample " + s.id + ": token id " + std::to_string(id) +
                          " outside vocabulary");
        s.tokens.push_back(id);
      }
    } else {
      throw DataError(where + ": text must be a string or an id array");
    }
    if (s.tokens.empty()) throw DataError(where + ": sample " + s.id + ": empty text");
  } else {
    s.text_feats = detail::rows_from_json(text, info.text_dim, where + " (text)");
  }

  s.video = detail::rows_from_json(j.at("video"), info.video_dim, where + " (video)");
  s.audio = detail::rows_from_json(j.at("audio"), info.audio_dim, where + " (audio)");

  const auto& label = j.at("label");
  switch (info.task) {
    case Task::Regression: {
      if (!label.is_number()) throw DataError(where + ": regression label must be a number");
      const double v = label.get<double>();
      if (v < info.label_min || v > info.label_max)
        throw DataError(where + ": sample " + s.id + ": label " + std::to_string(v) +
                        " outside [" + std::to_string(info.label_min) + ", " +
                        std::to_string(info.label_max) + "]");
      s.label = Label::regression(v);
      break;
    }
    case Task::Classification: {
      if (!label.is_number_unsigned())
        throw DataError(where + ": class label must be a non-negative integer");
      const std::size_t c = label.get<std::size_t>();
      if (c >= info.num_classes) throw DataError(where + ": class label out of range");
      s.label = Label::classification(c);
      break;
    }
    case Task::Multilabel: {
      if (!label.is_array() || label.size() != 4)
        throw DataError(where + ": multilabel target must be a 4-bit array");
      std::array<int, 4> bits{};
      for (std::size_t e = 0; e < 4; ++e) {
        const int b = label[e].get<int>();
        if (b != 0 && b != 1) throw DataError(where + ": emotion bits must be 0/1");
        bits[e] = b;
      }
      s.label = Label::multilabel(bits);
      break;
    }
  }
  return s;
}

inline std::vector<MultimodalSample> load_jsonl(const std::filesystem::path& path,
                                                const DatasetInfo& info) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<MultimodalSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    out.push_back(parse_sample_line(line, info, path.filename().string() + ":" +
                                                    std::to_string(lineno)));
  }
  return out;
}

inline DatasetInfo parse_manifest(const nlohmann::json& j) {
  detail::reject_unknown_keys(j, {"task", "video_dim", "audio_dim", "text", "label_range",
                                  "num_classes", "splits"},
                              "manifest");
  DatasetInfo info;
  const std::string task = j.at("task").get<std::string>();
  if (task == "regression") info.task = Task::Regression;
  else if (task == "classification") info.task = Task::Classification;
  else if (task == "multilabel") info.task = Task::Multilabel;
  else throw DataError("manifest: unknown task '" + task + "'");
  info.video_dim = j.at("video_dim").get<std::size_t>();
  info.audio_dim = j.at("audio_dim").get<std::size_t>();
  if (info.video_dim == 0 || info.audio_dim == 0)
    throw DataError("manifest: feature widths must be positive");

  const auto& text = j.at("text");
  detail::reject_unknown_keys(text, {"mode", "vocab", "dim"}, "manifest.text");
  const std::string mode = text.at("mode").get<std::string>();
  if (mode == "tokens") {
    info.token_text = true;
    for (const auto& w : text.at("vocab")) info.vocab.push_back(w.get<std::string>());
    if (info.vocab.empty()) throw DataError("manifest: empty vocabulary");
    for (std::size_t i = 0; i < info.vocab.size(); ++i) {
      if (!info.vocab_index.emplace(info.vocab[i], i).second)
        throw DataError("manifest: duplicate vocabulary word '" + info.vocab[i] + "'");
    }
  } else if (mode == "features") {
    info.token_text = false;
    info.text_dim = text.at("dim").get<std::size_t>();
    if (info.text_dim == 0) throw DataError("manifest: text feature width must be positive");
  } else {
    throw DataError("manifest: text.mode must be 'tokens' or 'features'");
  }

  if (info.task == Task::Regression) {
    const auto& range = j.at("label_range");
    info.label_min = range.at(0).get<double>();
    info.label_max = range.at(1).get<double>();
    if (info.label_min >= info.label_max) throw DataError("manifest: empty label range");
  }
  if (info.task == Task::Classification) {
    info.num_classes = j.at("num_classes").get<std::size_t>();
    if (info.num_classes < 2) throw DataError("manifest: need at least two classes");
  }
  return info;
}

inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest " + manifest_path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest: invalid JSON (" + std::string(e.what()) + ")");
  }
  Dataset ds;
  ds.info = parse_manifest(j);
  const auto& splits = j.at("splits");
  detail::reject_unknown_keys(splits, {"train", "valid", "test"}, "manifest.splits");
  const auto base = manifest_path.parent_path();
  ds.train = load_jsonl(base / splits.at("train").get<std::string>(), ds.info);
  ds.valid = load_jsonl(base / splits.at("valid").get<std::string>(), ds.info);
  ds.test = load_jsonl(base / splits.at("test").get<std::string>(), ds.info);
  return ds;
}

// ---- feature normalization ---------------------------------------------------

// Per-dimension z-score statistics fitted on the training split only.
struct NormStats {
  Tensor video_mean, video_std;
  Tensor audio_mean, audio_std;
  Tensor text_mean, text_std;  // feature-mode text only
  bool has_text = false;
};

namespace detail {

inline void fit_dims(const std::vector<MultimodalSample>& split, Tensor MultimodalSample::*field,
                     Tensor& mean, Tensor& std_out, std::size_t width) {
  mean = Tensor({width});
  std_out = Tensor({width});
  std::size_t count = 0;
  for (const MultimodalSample& s : split) {
    const Tensor& t = s.*field;
    for (std::size_t i = 0; i < t.rows(); ++i) {
      const double* r = t.row(i);
      for (std::size_t j = 0; j < width; ++j) mean[j] += r[j];
      ++count;
    }
  }
  if (count == 0) throw DataError("cannot fit normalization on an empty split");
  for (std::size_t j = 0; j < width; ++j) mean[j] /= static_cast<double>(count);
  for (const MultimodalSample& s : split) {
    const Tensor& t = s.*field;
    for (std::size_t i = 0; i < t.rows(); ++i) {
      const double* r = t.row(i);
      for (std::size_t j = 0; j < width; ++j) {
        const double d = r[j] - mean[j];
        std_out[j] += d * d;
      }
    }
  }
  for (std::size_t j = 0; j < width; ++j)
    std_out[j] = std::max(std::sqrt(std_out[j] / static_cast<double>(count)), 1e-6);
}

inline void apply_dims(std::vector<MultimodalSample>& split, Tensor MultimodalSample::*field,
                       const Tensor& mean, const Tensor& std_in) {
  for (MultimodalSample& s : split) {
    Tensor& t = s.*field;
    for (std::size_t i = 0; i < t.rows(); ++i) {
      double* r = t.row(i);
      for (std::size_t j = 0; j < t.cols(); ++j) r[j] = (r[j] - mean[j]) / std_in[j];
    }
  }
}

}  // namespace detail

inline NormStats compute_norm_stats(const std::vector<MultimodalSample>& train,
                                    const DatasetInfo& info) {
  NormStats ns;
  detail::fit_dims(train, &MultimodalSample::video, ns.video_mean, ns.video_std, info.video_dim);
  detail::fit_dims(train, &MultimodalSample::audio, ns.audio_mean, ns.audio_std, info.audio_dim);
  if (!info.token_text) {
    detail::fit_dims(train, &MultimodalSample::text_feats, ns.text_mean, ns.text_std,
                     info.text_dim);
    ns.has_text = true;
  }
  return ns;
}

inline void apply_norm_stats(std::vector<MultimodalSample>& split, const NormStats& ns) {
  detail::apply_dims(split, &MultimodalSample::video, ns.video_mean, ns.video_std);
  detail::apply_dims(split, &MultimodalSample::audio, ns.audio_mean, ns.audio_std);
  if (ns.has_text) detail::apply_dims(split, &MultimodalSample::text_feats, ns.text_mean, ns.text_std);
}

// ---- batching ------------------------------------------------------------------

// Fixed-shape padded blocks with validity masks. Padded cells are zero; the
// mask true-count per row equals the original sequence length.
struct Batch {
  std::vector<std::string> ids;
  std::vector<Label> labels;
  std::vector<std::vector<std::size_t>> tokens;  // [B][L_text], zero-padded
  Tensor text_feats;                             // [B, L_text, d_t] feature mode
  Tensor video;                                  // [B, L_v, d_v]
  Tensor audio;                                  // [B, L_a, d_a]
  std::vector<std::vector<bool>> text_mask, video_mask, audio_mask;
  std::size_t size() const { return ids.size(); }
};

namespace detail {

inline Tensor pad_block(const std::vector<const Tensor*>& rows, std::size_t max_len,
                        std::size_t width) {
  Tensor block({rows.size(), max_len, width});
  for (std::size_t b = 0; b < rows.size(); ++b)
    for (std::size_t i = 0; i < rows[b]->rows(); ++i)
      std::copy(rows[b]->row(i), rows[b]->row(i) + width,
                block.data() + (b * max_len + i) * width);
  return block;
}

}  // namespace detail

inline Batch make_batch(const std::vector<MultimodalSample>& split,
                        const std::vector<std::size_t>& indices, const DatasetInfo& info) {
  Batch batch;
  std::size_t lt = 0, lv = 0, la = 0;
  for (std::size_t idx : indices) {
    const MultimodalSample& s = split[idx];
    lt = std::max(lt, info.token_text ? s.tokens.size() : s.text_feats.rows());
    lv = std::max(lv, s.video.rows());
    la = std::max(la, s.audio.rows());
  }
  std::vector<const Tensor*> vrows, arows, trows;
  for (std::size_t idx : indices) {
    const MultimodalSample& s = split[idx];
    batch.ids.push_back(s.id);
    batch.labels.push_back(s.label);
    const std::size_t nt = info.token_text ? s.tokens.size() : s.text_feats.rows();
    batch.text_mask.emplace_back(lt, false);
    std::fill_n(batch.text_mask.back().begin(), nt, true);
    batch.video_mask.emplace_back(lv, false);
    std::fill_n(batch.video_mask.back().begin(), s.video.rows(), true);
    batch.audio_mask.emplace_back(la, false);
    std::fill_n(batch.audio_mask.back().begin(), s.audio.rows(), true);
    if (info.token_text) {
      batch.tokens.emplace_back(lt, 0);
      std::copy(s.tokens.begin(), s.tokens.end(), batch.tokens.back().begin());
    } else {
      trows.push_back(&s.text_feats);
    }
    vrows.push_back(&s.video);
    arows.push_back(&s.audio);
  }
  batch.video = detail::pad_block(vrows, lv, info.video_dim);
  batch.audio = detail::pad_block(arows, la, info.audio_dim);
  if (!info.token_text) batch.text_feats = detail::pad_block(trows, lt, info.text_dim);
  return batch;
}

inline std::vector<Batch> make_batches(const std::vector<MultimodalSample>& split,
                                       const DatasetInfo& info, std::size_t batch_size,
                                       std::uint64_t seed, bool shuffle) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  std::vector<std::size_t> order(split.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (shuffle) {
    Rng rng(seed);
    rng.shuffle(order);
  }
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(start + batch_size, order.size());
    out.push_back(make_batch(split,
                             std::vector<std::size_t>(order.begin() + start, order.begin() + end),
                             info));
  }
  return out;
}

// Compact per-sample view of one batch row (padding stripped via the masks).
inline PreparedSample batch_sample(const Batch& batch, std::size_t i, const DatasetInfo& info) {
  PreparedSample s;
  s.id = batch.ids[i];
  s.label = batch.labels[i];
  auto compact = [](const Tensor& block, std::size_t b, const std::vector<bool>& mask,
                    std::size_t width) {
    std::size_t nv = 0;
    for (bool m : mask) nv += m;
    Tensor t({nv, width});
    const std::size_t L = mask.size();
    std::size_t r = 0;
    for (std::size_t j = 0; j < L; ++j) {
      if (!mask[j]) continue;
      const double* src = block.data() + (b * L + j) * width;
      std::copy(src, src + width, t.row(r++));
    }
    return t;
  };
  if (info.token_text) {
    for (std::size_t j = 0; j < batch.text_mask[i].size(); ++j)
      if (batch.text_mask[i][j]) s.tokens.push_back(batch.tokens[i][j]);
  } else {
    s.text_feats = compact(batch.text_feats, i, batch.text_mask[i], info.text_dim);
  }
  s.video = compact(batch.video, i, batch.video_mask[i], info.video_dim);
  s.audio = compact(batch.audio, i, batch.audio_mask[i], info.audio_dim);
  return s;
}

}  // namespace svlad
